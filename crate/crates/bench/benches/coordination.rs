use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use rfcsim::codebook::{CodebookConfig, RfcCodebook};
use rfcsim::coordination::{coordinate_round, select_rfc_for_cell, CoordinationPolicy, TrafficSnapshot};
use rfcsim_bench::spread_requests;

fn coordination(c: &mut Criterion) {
    let mut group = c.benchmark_group("coordinate_round");
    for preset in ["n70", "n55"] {
        let cb = RfcCodebook::build(&CodebookConfig::preset(preset).unwrap()).unwrap();
        for n_cells in [7usize, 21] {
            let reqs = spread_requests(&cb, n_cells, 3);
            group.bench_with_input(BenchmarkId::new(preset, n_cells), &reqs, |b, reqs| {
                b.iter(|| coordinate_round(black_box(reqs), &cb, 3, CoordinationPolicy::RfcbcbOption2).unwrap())
            });
        }
    }
    group.finish();

    let cb = RfcCodebook::build(&CodebookConfig::default()).unwrap();
    let snap = TrafficSnapshot {
        cell_id: 0,
        buffered_dl_bits: 20_000,
        buffered_ul_bits: 10_000,
        beta_threshold: 0.5,
    };
    c.bench_function("select_rfc_for_cell", |b| {
        b.iter(|| select_rfc_for_cell(black_box(&snap), &cb, 17).unwrap())
    });
}

criterion_group!(benches, coordination);
criterion_main!(benches);
