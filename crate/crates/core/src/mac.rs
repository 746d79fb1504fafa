//! Proportional-fair PRB scheduling and Chase-combining HARQ.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codebook::{Direction, RfcPattern};
use crate::error::{config_err, contract_err, Result};
use crate::phy::{bler, McsEntry};
use crate::UeId;

/// Resource elements per PRB per slot: 12 subcarriers by 14 symbols.
pub const RE_PER_PRB: f64 = 168.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacConfig {
    pub harq_processes: usize,
    pub max_retx: u32,
    /// Smoothing window of the PF average, in slots of the UE's direction.
    pub pf_window_slots: f64,
    /// Lower bound on PF averages, bits per slot.
    pub pf_floor: f64,
    pub eesm_beta: f64,
}

impl Default for MacConfig {
    fn default() -> Self {
        MacConfig {
            harq_processes: 8,
            max_retx: 3,
            pf_window_slots: 100.0,
            pf_floor: 1.0,
            eesm_beta: 4.0,
        }
    }
}

impl MacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.harq_processes == 0 {
            return config_err("mac: harq_processes must be at least 1");
        }
        if !(self.pf_window_slots >= 1.0) {
            return config_err("mac: pf_window_slots must be at least 1");
        }
        if !(self.pf_floor > 0.0) {
            return config_err("mac: pf_floor must be positive");
        }
        if !(self.eesm_beta > 0.0) {
            return config_err("mac: eesm_beta must be positive");
        }
        Ok(())
    }
}

/// PRB to UE map of one cell in one slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrbGrid {
    direction: Direction,
    assignment: Vec<Option<UeId>>,
}

impl PrbGrid {
    pub fn new(direction: Direction, n_prbs: usize) -> Self {
        PrbGrid {
            direction,
            assignment: vec![None; n_prbs],
        }
    }

    pub fn reset(&mut self, direction: Direction) {
        self.direction = direction;
        self.assignment.iter_mut().for_each(|a| *a = None);
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn n_prbs(&self) -> usize {
        self.assignment.len()
    }

    pub fn get(&self, prb: usize) -> Option<UeId> {
        self.assignment[prb]
    }

    pub fn assignment(&self) -> &[Option<UeId>] {
        &self.assignment
    }

    pub fn assign(&mut self, prb: usize, ue: UeId) -> Result<()> {
        match self.assignment.get(prb) {
            None => contract_err(format!("PRB {prb} out of range")),
            Some(Some(other)) => contract_err(format!("PRB {prb} already holds UE {other}")),
            Some(None) => {
                self.assignment[prb] = Some(ue);
                Ok(())
            }
        }
    }

    pub fn release(&mut self, prb: usize) {
        self.assignment[prb] = None;
    }

    pub fn is_free(&self, prb: usize) -> bool {
        self.assignment[prb].is_none()
    }

    pub fn free_count(&self) -> usize {
        self.assignment.iter().filter(|a| a.is_none()).count()
    }

    pub fn prbs_of(&self, ue: UeId) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, a)| **a == Some(ue))
            .map(|(p, _)| p)
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.iter().all(|a| a.is_none())
    }
}

/// Exponentially smoothed delivered rate per UE (bits per slot).
#[derive(Debug, Clone, PartialEq)]
pub struct PfState {
    avg: Vec<f64>,
    window: f64,
    floor: f64,
}

impl PfState {
    pub fn new(n_ues: usize, window: f64, floor: f64) -> Self {
        PfState {
            avg: vec![floor; n_ues],
            window,
            floor,
        }
    }

    pub fn average(&self, ue: UeId) -> f64 {
        self.avg[ue].max(self.floor)
    }

    pub fn set_average(&mut self, ue: UeId, value: f64) {
        self.avg[ue] = value;
    }

    pub fn update(&mut self, ue: UeId, served_bits: f64) {
        let a = 1.0 / self.window;
        self.avg[ue] = ((1.0 - a) * self.avg[ue] + a * served_bits).max(self.floor);
    }
}

/// A UE offered to the new-data scheduler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfCandidate {
    pub ue: UeId,
    /// Buffered bits; the UE leaves the competition once its allotted PRBs
    /// are estimated to carry them.
    pub demand_bits: f64,
}

/// Assigns the free PRBs of `grid` in index order, each to the candidate with
/// the largest `rate(candidate, prb) / average`. Ties go to the lowest UE id.
/// `rate` is the estimated bits the PRB would carry for that candidate.
pub fn pf_schedule(
    grid: &mut PrbGrid,
    candidates: &[PfCandidate],
    rate: impl Fn(usize, usize) -> f64,
    pf: &PfState,
) {
    let mut remaining: Vec<f64> = candidates.iter().map(|c| c.demand_bits).collect();
    for prb in 0..grid.n_prbs() {
        if !grid.is_free(prb) {
            continue;
        }
        let mut best: Option<(f64, UeId, usize)> = None;
        for (i, c) in candidates.iter().enumerate() {
            if remaining[i] <= 0.0 {
                continue;
            }
            let metric = rate(i, prb) / pf.average(c.ue);
            let better = match best {
                None => true,
                Some((m, ue, _)) => metric > m || (metric == m && c.ue < ue),
            };
            if better {
                best = Some((metric, c.ue, i));
            }
        }
        let Some((_, ue, i)) = best else { break };
        grid.assignment[prb] = Some(ue);
        remaining[i] -= rate(i, prb).max(f64::MIN_POSITIVE);
    }
}

/// Gives a retransmission `n` free PRBs, best estimated rate first (lowest PRB
/// index on ties). Returns the PRBs taken, fewer than `n` if the grid is short.
pub fn schedule_retransmission(
    grid: &mut PrbGrid,
    ue: UeId,
    n: usize,
    rate: impl Fn(usize) -> f64,
) -> Vec<usize> {
    let mut free: Vec<(usize, f64)> = (0..grid.n_prbs())
        .filter(|&p| grid.is_free(p))
        .map(|p| (p, rate(p)))
        .collect();
    free.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut taken: Vec<usize> = free.into_iter().take(n).map(|(p, _)| p).collect();
    taken.sort_unstable();
    for &p in &taken {
        grid.assignment[p] = Some(ue);
    }
    taken
}

/// Transport block size of one slot on `n_prbs` PRBs at `mcs`.
pub fn transport_block_bits(mcs: &McsEntry, n_prbs: usize) -> u64 {
    (mcs.spectral_efficiency * RE_PER_PRB * n_prbs as f64).floor() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HarqState {
    Idle,
    AwaitingFeedback,
    PendingRetx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HarqOutcome {
    Ack,
    Nack,
    /// Negative feedback after the last allowed attempt.
    Dropped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarqProcess {
    pub process_id: usize,
    pub transport_block_bits: u64,
    /// Data bits carried; at most the block size.
    pub payload_bits: u64,
    pub attempt_count: u32,
    pub accumulated_sinr: f64,
    pub state: HarqState,
    pub mcs: u8,
    pub n_prbs: usize,
    /// Decoding result of the last attempt, revealed with the feedback.
    pub outcome: Option<HarqOutcome>,
}

impl HarqProcess {
    pub fn new(process_id: usize) -> Self {
        HarqProcess {
            process_id,
            transport_block_bits: 0,
            payload_bits: 0,
            attempt_count: 0,
            accumulated_sinr: 0.0,
            state: HarqState::Idle,
            mcs: 0,
            n_prbs: 0,
            outcome: None,
        }
    }

    /// Loads a new block into an idle process.
    pub fn start(&mut self, transport_block_bits: u64, payload_bits: u64, mcs: u8, n_prbs: usize) -> Result<()> {
        if self.state != HarqState::Idle {
            return contract_err(format!("HARQ process {} is busy", self.process_id));
        }
        if payload_bits > transport_block_bits {
            return contract_err("payload exceeds transport block");
        }
        self.transport_block_bits = transport_block_bits;
        self.payload_bits = payload_bits;
        self.attempt_count = 0;
        self.accumulated_sinr = 0.0;
        self.mcs = mcs;
        self.n_prbs = n_prbs;
        self.outcome = None;
        Ok(())
    }

    pub fn reset(&mut self) {
        *self = HarqProcess::new(self.process_id);
    }
}

/// One transmission attempt. The attempt's effective SINR (linear) is added to
/// the soft buffer and the block decodes with probability
/// `1 - bler(accumulated)`. A failed attempt beyond `max_retx`
/// retransmissions drops the block.
pub fn harq_transmit_and_feedback<R: Rng + ?Sized>(
    process: &mut HarqProcess,
    effective_sinr: f64,
    mcs: &McsEntry,
    max_retx: u32,
    rng: &mut R,
) -> Result<HarqOutcome> {
    if process.transport_block_bits == 0 {
        return contract_err(format!("HARQ process {} holds no block", process.process_id));
    }
    if process.state == HarqState::AwaitingFeedback {
        return contract_err(format!("HARQ process {} awaits feedback", process.process_id));
    }
    if !(effective_sinr >= 0.0) {
        return contract_err(format!("effective SINR {effective_sinr} is negative"));
    }
    process.attempt_count += 1;
    process.accumulated_sinr += effective_sinr;
    let p_err = bler(process.accumulated_sinr, mcs);
    let u: f64 = rng.random();
    let outcome = if u >= p_err {
        HarqOutcome::Ack
    } else if process.attempt_count > max_retx {
        HarqOutcome::Dropped
    } else {
        HarqOutcome::Nack
    };
    process.state = HarqState::AwaitingFeedback;
    process.outcome = Some(outcome);
    Ok(outcome)
}

/// Slots from a transmission in slot `tx_slot` until the first later slot of
/// the opposite direction, wrapping into the next frame.
pub fn feedback_delay(rfc: &RfcPattern, tx_slot: usize, tx_direction: Direction) -> Result<usize> {
    let f = rfc.len();
    if tx_slot >= f {
        return contract_err(format!("slot {tx_slot} outside frame of {f}"));
    }
    (1..=f)
        .find(|k| rfc.slot(tx_slot + k) == tx_direction.opposite())
        .ok_or_else(|| crate::Error::Contract(format!("pattern {rfc} has no {} slot", tx_direction.opposite().symbol())))
}
