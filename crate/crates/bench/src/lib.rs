//! Fixtures shared by the benchmarks.

use rfcsim::codebook::RfcCodebook;
use rfcsim::coordination::RfcRequest;
use rfcsim::SimConfig;

/// Requests of `n_cells` cells spread deterministically over the codebook.
pub fn spread_requests(cb: &RfcCodebook, n_cells: usize, salt: usize) -> Vec<RfcRequest> {
    (0..n_cells)
        .map(|c| {
            let idx = (c * 37 + salt * 11) % cb.len();
            RfcRequest {
                cell_id: c,
                requested_index: idx,
                requested_ratio: cb.ratio_of(idx).expect("index in range"),
            }
        })
        .collect()
}

/// A short run on a small cluster.
pub fn small_scenario(n_cells: usize, slots: u64) -> SimConfig {
    let mut cfg = SimConfig {
        duration_slots: slots,
        warmup_slots: 0,
        ..SimConfig::default()
    };
    cfg.topology.n_cells = n_cells;
    cfg
}
