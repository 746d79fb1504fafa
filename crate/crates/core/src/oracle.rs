//! Brute-force reference for coordination rounds.
//!
//! The reference walks every codebook entry and compares patterns slot by
//! slot, sharing nothing with the mask arithmetic and sub-codebook lookups of
//! [`coordinate_round`]. `selftest` checks the two against each other on
//! random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::codebook::{CodebookConfig, RfcCodebook, RfcPattern};
use crate::coordination::{coordinate_round, CoordinationPolicy, CoordinationRound, RfcRequest};
use crate::error::Result;

/// One reference assignment: (assigned index, misalignment to common, slid).
pub type ReferenceAssignment = (usize, u32, bool);

fn slotwise_misalignment(a: &RfcPattern, b: &RfcPattern) -> u32 {
    (0..a.len()).filter(|&t| a.slot(t) != b.slot(t)).count() as u32
}

/// Reference result of one round: the common index and one assignment per
/// request, in request order.
pub fn reference_round(
    requests: &[RfcRequest],
    cb: &RfcCodebook,
    psi: u32,
    policy: CoordinationPolicy,
) -> (usize, Vec<ReferenceAssignment>) {
    let entries = cb.entries();
    let mut counts = vec![0usize; entries.len()];
    for r in requests {
        counts[r.requested_index] += 1;
    }
    let mut common = 0;
    for i in 0..entries.len() {
        if counts[i] > counts[common] {
            common = i;
        }
    }
    let common_pattern = entries[common].pattern;
    let mis = |i: usize| slotwise_misalignment(&entries[i].pattern, &common_pattern);
    let dl_of = |i: usize| entries[i].pattern.dl_count();

    let assignments = requests
        .iter()
        .map(|r| {
            let req = r.requested_index;
            let own_dl = dl_of(req);
            let mut chosen = req;
            if policy.is_codebook_coordinated() && mis(req) > psi {
                let best_in = |dl: u32| {
                    (0..entries.len())
                        .filter(|&i| dl_of(i) == dl)
                        .min_by_key(|&i| (mis(i), i))
                        .expect("ratio present")
                };
                let mut best = best_in(own_dl);
                if policy == CoordinationPolicy::RfcbcbOption2 && mis(best) > psi {
                    let neighbour_dl = (0..entries.len())
                        .map(dl_of)
                        .filter(|&d| d != own_dl)
                        .min_by_key(|&d| (d.abs_diff(own_dl), d));
                    if let Some(d) = neighbour_dl {
                        let nb = best_in(d);
                        if mis(nb) < mis(best) {
                            best = nb;
                        }
                    }
                }
                if mis(best) < mis(req) {
                    chosen = best;
                }
            }
            (chosen, mis(chosen), dl_of(chosen) != own_dl)
        })
        .collect();
    (common, assignments)
}

/// Describes how `round` departs from the reference, if it does.
pub fn compare_with_reference(
    round: &CoordinationRound,
    cb: &RfcCodebook,
    psi: u32,
    policy: CoordinationPolicy,
) -> Option<String> {
    let (common, expected) = reference_round(&round.requests, cb, psi, policy);
    if common != round.common_index {
        return Some(format!("common index {} != reference {}", round.common_index, common));
    }
    for (a, e) in round.assignments.iter().zip(&expected) {
        let got = (a.assigned_index, a.misalignment_to_common, a.slid_sub_cb);
        if got != *e || a.changed != (e.0 != a.requested_index) {
            return Some(format!("cell {}: assigned {:?}, reference {:?}", a.cell_id, got, e));
        }
    }
    if round.assignments.len() != expected.len() {
        return Some("assignment count differs".into());
    }
    None
}

#[derive(Debug, Clone, Serialize)]
pub struct SelftestReport {
    pub instances: usize,
    pub mismatches: Vec<String>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Runs `instances` random rounds (3 to 6 cells, psi 0 to 5, both options,
/// both codebook presets) against the reference.
pub fn selftest(instances: usize, seed: u64) -> Result<SelftestReport> {
    let codebooks = [
        RfcCodebook::build(&CodebookConfig::default())?,
        RfcCodebook::build(&CodebookConfig::n55())?,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = Vec::new();
    for n in 0..instances {
        let cb = &codebooks[rng.random_range(0..codebooks.len())];
        let policy = if rng.random_bool(0.5) {
            CoordinationPolicy::RfcbcbOption1
        } else {
            CoordinationPolicy::RfcbcbOption2
        };
        let psi = rng.random_range(0..=5);
        let cells = rng.random_range(3..=6);
        // draw from a small pool part of the time so modes are contested
        let pool: Vec<usize> = (0..3).map(|_| rng.random_range(0..cb.len())).collect();
        let requests = (0..cells)
            .map(|c| {
                let idx = if rng.random_bool(0.5) {
                    pool[rng.random_range(0..pool.len())]
                } else {
                    rng.random_range(0..cb.len())
                };
                Ok(RfcRequest {
                    cell_id: c,
                    requested_index: idx,
                    requested_ratio: cb.ratio_of(idx)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let round = coordinate_round(&requests, cb, psi, policy)?;
        if let Some(msg) = compare_with_reference(&round, cb, psi, policy) {
            mismatches.push(format!("instance {n} ({} cells, psi {psi}, {}): {msg}", cells, policy.name()));
        }
    }
    Ok(SelftestReport {
        instances,
        mismatches,
    })
}
