use criterion::{criterion_group, criterion_main, Criterion};

use rfcsim::coordination::CoordinationPolicy;
use rfcsim::engine;
use rfcsim_bench::small_scenario;

fn engine(c: &mut Criterion) {
    let mut group = c.benchmark_group("engine_1000_slots");
    group.sample_size(10);
    for policy in [CoordinationPolicy::Fuc, CoordinationPolicy::RfcbcbOption1] {
        let cfg = rfcsim::SimConfig {
            policy,
            ..small_scenario(7, 1000)
        };
        group.bench_function(policy.name(), |b| b.iter(|| engine::run(&cfg).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, engine);
criterion_main!(benches);
