//! Slave-side RFC selection and the master-side coordination round.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codebook::{misalignment, nearest_ratio_subcb, Ratio, RfcCodebook, RfcPattern};
use crate::error::{config_err, contract_err, Error, Result};
use crate::CellId;

/// How the cluster turns requested RFCs into the RFCs actually used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CoordinationPolicy {
    /// Fully uncoordinated: every cell keeps its request.
    #[serde(rename = "FUC")]
    Fuc,
    /// Align to the common RFC by sliding within the requested sub-codebook.
    #[serde(rename = "RFCbCB-opt1")]
    RfcbcbOption1,
    /// As option 1, and also slide to the nearest-ratio sub-codebook when the
    /// threshold cannot be met within the requested one.
    #[serde(rename = "RFCbCB-opt2")]
    RfcbcbOption2,
    /// Uncoordinated patterns with BS-BS interference cancelled at UL receivers.
    #[serde(rename = "IUIC")]
    Iuic,
}

impl CoordinationPolicy {
    pub const ALL: [CoordinationPolicy; 4] = [
        CoordinationPolicy::Fuc,
        CoordinationPolicy::RfcbcbOption1,
        CoordinationPolicy::RfcbcbOption2,
        CoordinationPolicy::Iuic,
    ];

    pub fn is_codebook_coordinated(self) -> bool {
        matches!(
            self,
            CoordinationPolicy::RfcbcbOption1 | CoordinationPolicy::RfcbcbOption2
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            CoordinationPolicy::Fuc => "FUC",
            CoordinationPolicy::RfcbcbOption1 => "RFCbCB-opt1",
            CoordinationPolicy::RfcbcbOption2 => "RFCbCB-opt2",
            CoordinationPolicy::Iuic => "IUIC",
        }
    }
}

impl fmt::Display for CoordinationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CoordinationPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "fuc" => Ok(CoordinationPolicy::Fuc),
            "iuic" => Ok(CoordinationPolicy::Iuic),
            "rfcbcbopt1" | "rfcbcboption1" | "rfcbcb1" | "opt1" | "option1" => {
                Ok(CoordinationPolicy::RfcbcbOption1)
            }
            "rfcbcbopt2" | "rfcbcboption2" | "rfcbcb2" | "opt2" | "option2" => {
                Ok(CoordinationPolicy::RfcbcbOption2)
            }
            _ => Err(Error::Parse(format!(
                "unknown policy {s:?} (expected FUC, RFCbCB-opt1, RFCbCB-opt2 or IUIC)"
            ))),
        }
    }
}

/// What a cell asks the master for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RfcRequest {
    pub cell_id: CellId,
    pub requested_index: usize,
    pub requested_ratio: Ratio,
}

/// What the master hands back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RfcAssignment {
    pub cell_id: CellId,
    pub requested_index: usize,
    pub assigned_index: usize,
    pub changed: bool,
    /// Misalignment of the assigned pattern to the common RFC.
    pub misalignment_to_common: u32,
    /// The assigned pattern comes from another sub-codebook than requested.
    pub slid_sub_cb: bool,
}

/// One request/assignment exchange of the cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinationRound {
    pub policy: CoordinationPolicy,
    pub requests: Vec<RfcRequest>,
    pub common_index: usize,
    pub assignments: Vec<RfcAssignment>,
    pub threshold_psi: u32,
}

impl CoordinationRound {
    /// Bits carried over the inter-cell interface: one request and one
    /// response of `bits` payload per non-master cell. Uncoordinated
    /// policies exchange nothing.
    pub fn signaling_bits(&self, index_bits: u32) -> u64 {
        if self.policy.is_codebook_coordinated() {
            2 * (self.requests.len().saturating_sub(1) as u64) * index_bits as u64
        } else {
            0
        }
    }
}

/// Buffered traffic of one cell at a coordination instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficSnapshot {
    pub cell_id: CellId,
    pub buffered_dl_bits: u64,
    pub buffered_ul_bits: u64,
    /// DL bias threshold in [0, 1].
    pub beta_threshold: f64,
}

fn circular_distance(a: u32, b: u32, len: u32) -> u32 {
    let d = a.abs_diff(b) % len;
    d.min(len - d)
}

/// Picks the RFC a cell asks for.
///
/// The DL fraction of the buffered traffic selects the ratio (restricted to
/// DL-heavy-or-balanced ratios when the fraction reaches `beta`, to
/// UL-heavy-or-balanced ones otherwise). Within that sub-codebook the member
/// closest to the cell's current pattern is requested; remaining ties keep the
/// current phase, then the lowest index.
pub fn select_rfc_for_cell(
    snapshot: &TrafficSnapshot,
    cb: &RfcCodebook,
    current_index: usize,
) -> Result<RfcRequest> {
    if cb.is_empty() {
        return config_err("cannot select from an empty codebook");
    }
    if !(0.0..=1.0).contains(&snapshot.beta_threshold) {
        return contract_err(format!("beta {} outside [0, 1]", snapshot.beta_threshold));
    }
    let current = *cb.entry(current_index)?;
    let f = cb.frame_length() as u128;
    let z_dl = snapshot.buffered_dl_bits as u128;
    let total = z_dl + snapshot.buffered_ul_bits as u128;
    let rho = if total == 0 {
        0.5
    } else {
        z_dl as f64 / total as f64
    };
    let dl_biased = rho >= snapshot.beta_threshold;
    let allowed = |r: Ratio| if dl_biased { r.dl >= r.ul } else { r.dl <= r.ul };
    let subs = cb.sub_codebooks();
    let restricted = subs.iter().any(|s| allowed(s.ratio));
    // |d/F - Zdl/T| compared exactly as |d*T - F*Zdl|; with empty buffers rho = 1/2.
    let distance = |d: u32| -> u128 {
        let d = d as u128;
        if total == 0 {
            (2 * d).abs_diff(f)
        } else {
            (d * total).abs_diff(f * z_dl)
        }
    };
    let sub = subs
        .iter()
        .enumerate()
        .filter(|(_, s)| !restricted || allowed(s.ratio))
        .min_by_key(|(i, s)| (distance(s.ratio.dl), *i))
        .map(|(i, _)| i)
        .expect("codebook is not empty");
    let f32_len = cb.frame_length() as u32;
    let requested_index = subs[sub]
        .indices()
        .map(|i| {
            let e = &cb.entries()[i];
            let mis = misalignment(&e.pattern, &current.pattern).expect("same frame length");
            (mis, circular_distance(e.shift, current.shift, f32_len), i)
        })
        .min()
        .map(|(_, _, i)| i)
        .expect("sub-codebooks are never empty");
    Ok(RfcRequest {
        cell_id: snapshot.cell_id,
        requested_index,
        requested_ratio: subs[sub].ratio,
    })
}

/// The most requested index; ties and all-distinct requests go to the lowest index.
pub fn elect_common_rfc(requests: &[RfcRequest]) -> Result<usize> {
    if requests.is_empty() {
        return contract_err("cannot elect a common RFC from zero requests");
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for r in requests {
        *counts.entry(r.requested_index).or_default() += 1;
    }
    let (idx, _) = counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .expect("non-empty");
    Ok(idx)
}

fn check_request(cb: &RfcCodebook, r: &RfcRequest) -> Result<()> {
    let ratio = cb.ratio_of(r.requested_index)?;
    if ratio != r.requested_ratio {
        return contract_err(format!(
            "cell {} requests index {} with ratio {} but the codebook has {}",
            r.cell_id, r.requested_index, r.requested_ratio, ratio
        ));
    }
    Ok(())
}

/// Runs one master-side coordination round.
///
/// A request within `psi` slots of the common RFC is kept. Otherwise the
/// requested sub-codebook is scanned for the member closest to the common RFC;
/// option 2 additionally scans the nearest-ratio sub-codebook when the best
/// in-ratio member still exceeds `psi`. The minimum is assigned even above
/// `psi`. A request is only replaced by a strictly closer pattern.
pub fn coordinate_round(
    requests: &[RfcRequest],
    cb: &RfcCodebook,
    psi: u32,
    policy: CoordinationPolicy,
) -> Result<CoordinationRound> {
    for r in requests {
        check_request(cb, r)?;
    }
    let common_index = elect_common_rfc(requests)?;
    let common = *cb.pattern(common_index)?;
    let to_common = |i: usize| -> u32 {
        misalignment(&cb.entries()[i].pattern, &common).expect("same frame length")
    };

    let assignments = requests
        .iter()
        .map(|r| {
            let requested_mis = to_common(r.requested_index);
            let assigned_index = if !policy.is_codebook_coordinated() || requested_mis <= psi {
                r.requested_index
            } else {
                let own = cb.entries()[r.requested_index].sub_codebook;
                let scan = |sub: usize, foreign: bool| {
                    cb.sub_codebooks()[sub]
                        .indices()
                        .map(move |i| (to_common(i), foreign, i))
                };
                let mut best = scan(own, false).min().expect("non-empty sub-codebook");
                if policy == CoordinationPolicy::RfcbcbOption2 && best.0 > psi {
                    match nearest_ratio_subcb(cb, r.requested_ratio, own) {
                        Ok(nb) => {
                            best = best.min(scan(nb, true).min().expect("non-empty sub-codebook"))
                        }
                        Err(Error::NoNeighbor) => {}
                        Err(e) => return Err(e),
                    }
                }
                if best.0 < requested_mis {
                    best.2
                } else {
                    r.requested_index
                }
            };
            let assigned_sub = cb.entries()[assigned_index].sub_codebook;
            Ok(RfcAssignment {
                cell_id: r.cell_id,
                requested_index: r.requested_index,
                assigned_index,
                changed: assigned_index != r.requested_index,
                misalignment_to_common: to_common(assigned_index),
                slid_sub_cb: assigned_sub != cb.entries()[r.requested_index].sub_codebook,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(CoordinationRound {
        policy,
        requests: requests.to_vec(),
        common_index,
        assignments,
        threshold_psi: psi,
    })
}

/// Mean misalignment over all ordered pairs of distinct patterns.
pub fn pairwise_mean_misalignment(patterns: &[RfcPattern]) -> Result<f64> {
    let c = patterns.len();
    if c < 2 {
        return contract_err(format!("pairwise misalignment needs at least 2 cells, got {c}"));
    }
    let mut total = 0u64;
    for (i, a) in patterns.iter().enumerate() {
        for b in &patterns[i + 1..] {
            total += misalignment(a, b)? as u64;
        }
    }
    // each unordered pair counted once, ordered-pair mean = 2*sum / (C(C-1))
    Ok(2.0 * total as f64 / (c * (c - 1)) as f64)
}

/// Pairwise mean misalignment of the assigned patterns of a round.
pub fn average_misalignment(assignments: &[RfcAssignment], cb: &RfcCodebook) -> Result<f64> {
    let patterns = assignments
        .iter()
        .map(|a| cb.pattern(a.assigned_index).copied())
        .collect::<Result<Vec<_>>>()?;
    pairwise_mean_misalignment(&patterns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::CodebookConfig;

    fn cb() -> RfcCodebook {
        RfcCodebook::build(&CodebookConfig::default()).unwrap()
    }

    fn index_of(cb: &RfcCodebook, d: u32, shift: u32) -> usize {
        let sub = &cb.sub_codebooks()[cb.sub_codebook_of_ratio(Ratio::new(d, 10 - d)).unwrap()];
        sub.first_index + sub.shifts.iter().position(|s| *s == shift).unwrap()
    }

    fn request(cb: &RfcCodebook, cell: usize, d: u32, shift: u32) -> RfcRequest {
        RfcRequest {
            cell_id: cell,
            requested_index: index_of(cb, d, shift),
            requested_ratio: Ratio::new(d, 10 - d),
        }
    }

    fn snap(dl: u64, ul: u64) -> TrafficSnapshot {
        TrafficSnapshot {
            cell_id: 0,
            buffered_dl_bits: dl,
            buffered_ul_bits: ul,
            beta_threshold: 0.5,
        }
    }

    #[test]
    fn selection_examples() {
        let cb = cb();
        let cur = index_of(&cb, 5, 0);
        assert_eq!(select_rfc_for_cell(&snap(4000, 4000), &cb, cur).unwrap().requested_ratio, Ratio::new(5, 5));
        assert_eq!(select_rfc_for_cell(&snap(0, 9000), &cb, cur).unwrap().requested_ratio, Ratio::new(2, 8));
        assert_eq!(select_rfc_for_cell(&snap(20000, 10000), &cb, cur).unwrap().requested_ratio, Ratio::new(7, 3));
        assert_eq!(select_rfc_for_cell(&snap(0, 0), &cb, cur).unwrap().requested_ratio, Ratio::new(5, 5));
    }

    #[test]
    fn selection_keeps_phase_on_ratio_change() {
        let cb = cb();
        for shift in 0..10 {
            let cur = index_of(&cb, 5, shift);
            let r = select_rfc_for_cell(&snap(20000, 10000), &cb, cur).unwrap();
            assert_eq!(r.requested_index, index_of(&cb, 7, shift));
            let r = select_rfc_for_cell(&snap(1000, 9000), &cb, cur).unwrap();
            assert_eq!(r.requested_index, index_of(&cb, 2, shift));
        }
    }

    #[test]
    fn beta_biases_the_candidate_set() {
        let cb = cb();
        let cur = index_of(&cb, 5, 0);
        // rho = 0.4 would map to 4:6, but a low threshold forces DL-heavy-or-balanced
        let mut s = snap(4000, 6000);
        s.beta_threshold = 0.3;
        assert_eq!(select_rfc_for_cell(&s, &cb, cur).unwrap().requested_ratio, Ratio::new(5, 5));
        s.beta_threshold = 0.5;
        assert_eq!(select_rfc_for_cell(&s, &cb, cur).unwrap().requested_ratio, Ratio::new(4, 6));
    }

    #[test]
    fn election_examples() {
        let mk = |idx: &[usize]| {
            idx.iter()
                .enumerate()
                .map(|(c, &i)| RfcRequest {
                    cell_id: c,
                    requested_index: i,
                    requested_ratio: Ratio::new(2, 8),
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(elect_common_rfc(&mk(&[5, 5, 12])).unwrap(), 5);
        assert_eq!(elect_common_rfc(&mk(&[3, 7])).unwrap(), 3);
        assert_eq!(elect_common_rfc(&mk(&[9, 4, 1])).unwrap(), 1);
        assert!(matches!(elect_common_rfc(&[]), Err(Error::Contract(_))));
    }

    #[test]
    fn consensus_round_changes_nothing() {
        let cb = cb();
        let reqs: Vec<_> = (0..4).map(|c| request(&cb, c, 6, 3)).collect();
        for policy in CoordinationPolicy::ALL {
            let round = coordinate_round(&reqs, &cb, 3, policy).unwrap();
            assert!(round.assignments.iter().all(|a| !a.changed && a.misalignment_to_common == 0));
        }
    }

    #[test]
    fn opposite_phase_request_is_realigned() {
        let cb = cb();
        let reqs = vec![request(&cb, 0, 5, 0), request(&cb, 1, 5, 0), request(&cb, 2, 5, 5)];
        let round = coordinate_round(&reqs, &cb, 3, CoordinationPolicy::RfcbcbOption1).unwrap();
        assert_eq!(round.common_index, index_of(&cb, 5, 0));
        let a = round.assignments[2];
        assert!(a.changed);
        assert_eq!(a.assigned_index, index_of(&cb, 5, 0));
        assert_eq!(a.misalignment_to_common, 0);
        assert!(!a.slid_sub_cb);
    }

    #[test]
    fn option2_slides_to_neighbor_ratio() {
        let cb = cb();
        let reqs = vec![request(&cb, 0, 8, 0), request(&cb, 1, 2, 0)];
        let common = index_of(&cb, 2, 0);
        let common_p = *cb.pattern(common).unwrap();
        // exhaustive oracle over both candidate sub-codebooks
        let best_in = |d: u32| {
            (0..10)
                .map(|k| misalignment(cb.pattern(index_of(&cb, d, k)).unwrap(), &common_p).unwrap())
                .min()
                .unwrap()
        };
        assert_eq!(best_in(8), 6);
        assert_eq!(best_in(7), 5);
        let r1 = coordinate_round(&reqs, &cb, 0, CoordinationPolicy::RfcbcbOption1).unwrap();
        let r2 = coordinate_round(&reqs, &cb, 0, CoordinationPolicy::RfcbcbOption2).unwrap();
        assert_eq!(r1.common_index, common);
        assert_eq!(r1.assignments[0].misalignment_to_common, 6);
        assert!(!r1.assignments[0].changed);
        assert_eq!(r2.assignments[0].misalignment_to_common, 5);
        assert!(r2.assignments[0].slid_sub_cb);
        assert_eq!(cb.ratio_of(r2.assignments[0].assigned_index).unwrap(), Ratio::new(7, 3));
        assert!(!r2.assignments[1].changed);
    }

    #[test]
    fn foreign_request_rejected() {
        let cb = cb();
        let bad = RfcRequest {
            cell_id: 0,
            requested_index: 500,
            requested_ratio: Ratio::new(5, 5),
        };
        assert!(matches!(
            coordinate_round(&[bad], &cb, 3, CoordinationPolicy::Fuc),
            Err(Error::Contract(_))
        ));
        let mismatched = RfcRequest {
            cell_id: 0,
            requested_index: 0,
            requested_ratio: Ratio::new(5, 5),
        };
        assert!(coordinate_round(&[mismatched], &cb, 3, CoordinationPolicy::Fuc).is_err());
    }

    #[test]
    fn pairwise_mean_examples() {
        let p = |s: &str| s.parse::<RfcPattern>().unwrap();
        let same = vec![p("DDDDDUUUUU"); 4];
        assert_eq!(pairwise_mean_misalignment(&same).unwrap(), 0.0);
        assert_eq!(
            pairwise_mean_misalignment(&[p("DDDDDDDDDD"), p("UUUUUUUUUU")]).unwrap(),
            10.0
        );
        // a-b = 2, a-c = 4, b-c = 6
        let a = p("DDDDDDDDDD");
        let b = p("UUDDDDDDDD");
        let c = p("DDUUUUDDDD");
        assert_eq!(misalignment(&a, &b).unwrap(), 2);
        assert_eq!(misalignment(&a, &c).unwrap(), 4);
        assert_eq!(misalignment(&b, &c).unwrap(), 6);
        assert_eq!(pairwise_mean_misalignment(&[a, b, c]).unwrap(), 4.0);
        assert!(pairwise_mean_misalignment(&[a]).is_err());
    }

    #[test]
    fn signaling_cost() {
        let cb = cb();
        let reqs: Vec<_> = (0..21).map(|c| request(&cb, c, 5, 0)).collect();
        let r = coordinate_round(&reqs, &cb, 3, CoordinationPolicy::RfcbcbOption1).unwrap();
        assert_eq!(r.signaling_bits(6), 240);
        let r = coordinate_round(&reqs, &cb, 3, CoordinationPolicy::Fuc).unwrap();
        assert_eq!(r.signaling_bits(6), 0);
    }

    #[test]
    fn policy_names_parse() {
        for p in CoordinationPolicy::ALL {
            assert_eq!(p.name().parse::<CoordinationPolicy>().unwrap(), p);
        }
        assert_eq!("rfcbcb_option2".parse::<CoordinationPolicy>().unwrap(), CoordinationPolicy::RfcbcbOption2);
        assert!("nope".parse::<CoordinationPolicy>().is_err());
    }
}
