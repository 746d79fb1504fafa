//! Slot-stepped cluster simulation.
//!
//! Each slot runs in two phases: every cell schedules against stale
//! interference estimates, then every scheduled PRB is evaluated against the
//! committed schedules of all cells. Coordination rounds run at frame
//! boundaries.

pub mod config;
pub mod topology;

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use config::{SimConfig, TopologyConfig, TrafficConfig};
pub use topology::{hex_cell_positions, place_drop, CellSite, ClusterTopology, UeRecord};

use crate::codebook::{Direction, RfcCodebook, RfcPattern};
use crate::coordination::{
    coordinate_round, pairwise_mean_misalignment, select_rfc_for_cell, RfcRequest, TrafficSnapshot,
};
use crate::error::{Error, Result};
use crate::mac::{
    feedback_delay, harq_transmit_and_feedback, pf_schedule, schedule_retransmission, transport_block_bits,
    HarqOutcome, HarqProcess, HarqState, PfCandidate, PfState, PrbGrid, RE_PER_PRB,
};
use crate::metrics::{
    throughput_mbps, CliSummary, CoordinationSummary, EcdfAccumulator, HarqSummary, MetricsReport, TcpSummary,
    ThroughputLedger, ThroughputSummary, TrafficSummary, CWND_RESOLUTION, DB_RESOLUTION,
};
use crate::phy::{
    compute_dl_sinr, compute_ul_sinr, eesm_effective_sinr, mix, select_mcs, LinkGainTable, PrbActivity,
};
use crate::traffic::{
    congestion_event, cubic_on_ack, cubic_on_loss, generate_arrivals, sendable_bytes, TcpConnectionState, TransportProtocol,
};
use crate::{CellId, UeId, VERSION};

const INITIAL_RFC_STREAM: u64 = 0x7266_6330;
const TRAFFIC_STREAM: u64 = 0x7472_6166;
const FADING_STREAM: u64 = 0x6661_6465;
const HARQ_STREAM: u64 = 0x6861_7271;
const SHADOWING_STREAM: u64 = 0x7368_6164;

/// Highest spectral efficiency the scheduler's rate estimate assumes.
const MAX_RATE_SE: f64 = 5.0;

/// Optional outputs beyond the report.
#[derive(Default)]
pub struct RunOptions<'a> {
    /// Receives one JSON line per cell and slot with a non-empty schedule.
    pub trace: Option<&'a mut dyn Write>,
    pub record_cwnd_series: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CwndSample {
    pub frame: u64,
    pub ue: UeId,
    pub cwnd_bytes: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub cwnd_series: Vec<CwndSample>,
}

/// Tab-separated `frame ue cwnd_bytes` rows.
pub fn cwnd_series_tsv(series: &[CwndSample]) -> String {
    let mut out = String::from("frame\tue\tcwnd_bytes\n");
    for s in series {
        out.push_str(&format!("{}\t{}\t{:.0}\n", s.frame, s.ue, s.cwnd_bytes));
    }
    out
}

/// Topology and mean link gains of a configuration's drop.
pub fn build_drop(config: &SimConfig) -> Result<(ClusterTopology, LinkGainTable)> {
    config.validate()?;
    let topo = place_drop(&config.topology, config.seed)?;
    let gains = LinkGainTable::build(
        &topo.cell_positions(),
        &topo.ue_positions(),
        &config.channel,
        mix(&[config.seed, SHADOWING_STREAM]),
    );
    Ok((topo, gains))
}

pub fn run(config: &SimConfig) -> Result<MetricsReport> {
    Ok(run_with(config, RunOptions::default())?.report)
}

pub fn run_with<'a>(config: &'a SimConfig, options: RunOptions<'a>) -> Result<RunOutput> {
    let (topo, gains) = build_drop(config)?;
    let mut sim = Simulation::new(config, topo, gains, options)?;
    for slot in 0..config.duration_slots {
        sim.step(slot)?;
    }
    sim.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    HarqFeedback { ue: UeId, process: usize },
    TcpAck { ue: UeId, bytes: u64 },
}

struct UeState {
    cell: CellId,
    role: Direction,
    /// TCP data not yet released to the link.
    app_bits: u64,
    mac_bits: u64,
    tcp: Option<TcpConnectionState>,
    harq: Vec<HarqProcess>,
    /// Interference plus noise per PRB seen at the last transmission in each
    /// slot position of the frame. Neighbour directions repeat per frame, so
    /// each position keeps its own measurement.
    measured_in: Vec<f64>,
    rng: ChaCha8Rng,
}

impl UeState {
    /// Generated and not yet delivered or dropped.
    fn backlog_bits(&self) -> u64 {
        let harq: u64 = self
            .harq
            .iter()
            .filter(|p| p.state != HarqState::Idle && p.outcome != Some(HarqOutcome::Ack))
            .map(|p| p.payload_bits)
            .sum();
        self.app_bits + self.mac_bits + harq
    }
}

struct Transmission {
    ue: UeId,
    process: usize,
    prbs: Vec<usize>,
    retx: bool,
}

#[derive(Serialize)]
struct TraceTx {
    ue: UeId,
    mcs: u8,
    retx: bool,
    outcome: HarqOutcome,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    slot: u64,
    cell: CellId,
    direction: Direction,
    prbs: &'a [Option<UeId>],
    tx: Vec<TraceTx>,
}

struct Simulation<'a> {
    cfg: &'a SimConfig,
    cb: RfcCodebook,
    topo: ClusterTopology,
    gains: LinkGainTable,
    options: RunOptions<'a>,
    frame_len: usize,
    active: Vec<usize>,
    pending: Option<Vec<usize>>,
    ues: Vec<UeState>,
    cell_ues: Vec<Vec<UeId>>,
    pf: PfState,
    harq_rng: Vec<ChaCha8Rng>,
    events: BinaryHeap<Reverse<(u64, u64, Event)>>,
    seq: u64,
    grids: Vec<PrbGrid>,
    txs: Vec<Vec<Transmission>>,
    fading_seed: u64,
    ack_lag_slots: u64,

    ledger: ThroughputLedger,
    traffic: TrafficSummary,
    harq_stats: HarqSummary,
    tcp_stats: TcpSummary,
    coord: CoordinationSummary,
    bs_bs: EcdfAccumulator,
    ue_ue: EcdfAccumulator,
    ul_sinr: EcdfAccumulator,
    dl_sinr: EcdfAccumulator,
    cwnd: EcdfAccumulator,
    misalignment: Vec<f64>,
    cwnd_series: Vec<CwndSample>,
}

fn dir_index(d: Direction) -> usize {
    match d {
        Direction::Dl => 0,
        Direction::Ul => 1,
    }
}

impl<'a> Simulation<'a> {
    fn new(cfg: &'a SimConfig, topo: ClusterTopology, gains: LinkGainTable, options: RunOptions<'a>) -> Result<Self> {
        let cb = RfcCodebook::build(&cfg.codebook)?;
        let n_cells = topo.cells.len();
        let n_prbs = cfg.power.n_prbs;

        let active = match cfg.fixed_rfc {
            Some(idx) => vec![idx; n_cells],
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(&[cfg.seed, INITIAL_RFC_STREAM]));
                (0..n_cells)
                    .map(|_| rand::Rng::random_range(&mut rng, 0..cb.len()))
                    .collect()
            }
        };

        let mut cell_ues = vec![Vec::new(); n_cells];
        let ues = topo
            .ues
            .iter()
            .map(|u| {
                cell_ues[u.serving_cell].push(u.id);
                UeState {
                    cell: u.serving_cell,
                    role: u.role,
                    app_bits: 0,
                    mac_bits: 0,
                    tcp: (cfg.protocol == TransportProtocol::Tcp).then(|| TcpConnectionState::new(&cfg.tcp)),
                    harq: (0..cfg.mac.harq_processes).map(HarqProcess::new).collect(),
                    measured_in: vec![cfg.power.noise_w; cfg.codebook.frame_length],
                    rng: ChaCha8Rng::seed_from_u64(mix(&[cfg.seed, TRAFFIC_STREAM, u.id as u64])),
                }
            })
            .collect();

        let window_s = cfg.window_slots() as f64 * cfg.slot_duration_s;
        Ok(Simulation {
            frame_len: cb.frame_length(),
            coord: CoordinationSummary {
                index_bits: cb.bits(),
                ..CoordinationSummary::default()
            },
            cb,
            pf: PfState::new(topo.ues.len(), cfg.mac.pf_window_slots, cfg.mac.pf_floor),
            harq_rng: (0..n_cells)
                .map(|c| ChaCha8Rng::seed_from_u64(mix(&[cfg.seed, HARQ_STREAM, c as u64])))
                .collect(),
            events: BinaryHeap::new(),
            seq: 0,
            grids: (0..n_cells).map(|_| PrbGrid::new(Direction::Dl, n_prbs)).collect(),
            txs: (0..n_cells).map(|_| Vec::new()).collect(),
            fading_seed: mix(&[cfg.seed, FADING_STREAM]),
            ack_lag_slots: (cfg.tcp.core_rtt_s / cfg.slot_duration_s).ceil() as u64,
            ledger: ThroughputLedger::new(n_cells, window_s),
            traffic: TrafficSummary::default(),
            harq_stats: HarqSummary::default(),
            tcp_stats: TcpSummary::default(),
            bs_bs: EcdfAccumulator::new(DB_RESOLUTION),
            ue_ue: EcdfAccumulator::new(DB_RESOLUTION),
            ul_sinr: EcdfAccumulator::new(DB_RESOLUTION),
            dl_sinr: EcdfAccumulator::new(DB_RESOLUTION),
            cwnd: EcdfAccumulator::new(CWND_RESOLUTION),
            misalignment: Vec::new(),
            cwnd_series: Vec::new(),
            cfg,
            topo,
            gains,
            options,
            active,
            pending: None,
            ues,
            cell_ues,
        })
    }

    fn push_event(&mut self, slot: u64, ev: Event) {
        self.seq += 1;
        self.events.push(Reverse((slot, self.seq, ev)));
    }

    /// Exponential(1) power fading of a serving link, identical across
    /// policies for the same seed.
    fn fading(&self, ue: UeId, prb: usize, slot: u64) -> f64 {
        let h = mix(&[self.fading_seed, ue as u64, prb as u64, slot]);
        let u = (h >> 11) as f64 / (1u64 << 53) as f64;
        -(1.0 - u).ln()
    }

    fn serving_gain(&self, ue: UeId) -> f64 {
        self.gains.bs_ue(self.ues[ue].cell, ue)
    }

    fn tx_power(&self, d: Direction) -> f64 {
        match d {
            Direction::Dl => self.cfg.power.dl_per_prb(),
            Direction::Ul => self.cfg.power.ul_per_prb(),
        }
    }

    fn pattern(&self, cell: CellId) -> &RfcPattern {
        &self.cb.entries()[self.active[cell]].pattern
    }

    fn measuring(&self, slot: u64) -> bool {
        slot >= self.cfg.warmup_slots
    }

    fn step(&mut self, slot: u64) -> Result<()> {
        let t = slot as usize % self.frame_len;
        if t == 0 {
            self.frame_boundary(slot)?;
        }
        self.process_events(slot)?;
        self.arrivals_and_release(slot)?;
        for c in 0..self.topo.cells.len() {
            self.schedule_cell(c, slot, t)?;
        }
        self.evaluate(slot, t)
    }

    fn snapshot(&self, cell: CellId) -> TrafficSnapshot {
        let mut z = [0u64; 2];
        for &u in &self.cell_ues[cell] {
            z[dir_index(self.ues[u].role)] += self.ues[u].backlog_bits();
        }
        TrafficSnapshot {
            cell_id: cell,
            buffered_dl_bits: z[0],
            buffered_ul_bits: z[1],
            beta_threshold: self.cfg.beta,
        }
    }

    fn frame_boundary(&mut self, slot: u64) -> Result<()> {
        let frame = slot / self.frame_len as u64;
        if let Some(next) = self.pending.take() {
            self.active = next;
        }
        if frame.is_multiple_of(self.cfg.rfc_update_period_frames) {
            let requests = (0..self.topo.cells.len())
                .map(|c| match self.cfg.fixed_rfc {
                    Some(idx) => Ok(RfcRequest {
                        cell_id: c,
                        requested_index: idx,
                        requested_ratio: self.cb.ratio_of(idx)?,
                    }),
                    None => select_rfc_for_cell(&self.snapshot(c), &self.cb, self.active[c]),
                })
                .collect::<Result<Vec<_>>>()?;
            let round = coordinate_round(&requests, &self.cb, self.cfg.psi, self.cfg.policy)?;
            let dl: Vec<usize> = requests.iter().map(|r| r.requested_ratio.dl as usize).collect();
            for &d in &dl {
                bump(&mut self.coord.requested_dl_slots, d);
            }
            let spread = dl.iter().max().copied().unwrap_or(0) - dl.iter().min().copied().unwrap_or(0);
            bump(&mut self.coord.ratio_spread, spread);
            let bits = round.signaling_bits(self.cb.bits());
            self.coord.rounds += 1;
            self.coord.reassigned += round.assignments.iter().filter(|a| a.changed).count() as u64;
            self.coord.sub_codebook_slides += round.assignments.iter().filter(|a| a.slid_sub_cb).count() as u64;
            self.coord.bits_per_period.push(bits);
            self.coord.total_bits += bits;
            let next: Vec<usize> = round.assignments.iter().map(|a| a.assigned_index).collect();
            if self.cfg.coordination_delay_frames == 0 {
                self.active = next;
            } else {
                self.pending = Some(next);
            }
        }

        let patterns: Vec<RfcPattern> = (0..self.topo.cells.len()).map(|c| *self.pattern(c)).collect();
        self.misalignment.push(if patterns.len() < 2 {
            0.0
        } else {
            pairwise_mean_misalignment(&patterns)?
        });

        if self.cfg.protocol == TransportProtocol::Tcp {
            let measuring = self.measuring(slot);
            for (id, u) in self.ues.iter().enumerate() {
                let Some(tcp) = &u.tcp else { continue };
                if measuring {
                    self.cwnd.record(tcp.cwnd)?;
                }
                if self.options.record_cwnd_series {
                    self.cwnd_series.push(CwndSample {
                        frame,
                        ue: id,
                        cwnd_bytes: tcp.cwnd,
                    });
                }
            }
        }
        Ok(())
    }

    fn process_events(&mut self, slot: u64) -> Result<()> {
        while let Some(Reverse((due, _, _))) = self.events.peek() {
            if *due > slot {
                break;
            }
            let Reverse((_, _, ev)) = self.events.pop().expect("peeked");
            let now = slot as f64 * self.cfg.slot_duration_s;
            match ev {
                Event::TcpAck { ue, bytes } => {
                    if let Some(tcp) = self.ues[ue].tcp.as_mut() {
                        cubic_on_ack(tcp, &self.cfg.tcp, now, bytes);
                    }
                }
                Event::HarqFeedback { ue, process } => {
                    let st = &mut self.ues[ue];
                    let p = &mut st.harq[process];
                    match p.outcome {
                        Some(HarqOutcome::Ack) => p.reset(),
                        Some(HarqOutcome::Nack) => p.state = HarqState::PendingRetx,
                        Some(HarqOutcome::Dropped) => {
                            let bits = p.payload_bits;
                            p.reset();
                            self.harq_stats.drops += 1;
                            match st.tcp.as_mut() {
                                Some(tcp) => {
                                    st.mac_bits += bits;
                                    if congestion_event(tcp, &self.cfg.tcp, now) {
                                        self.tcp_stats.loss_events += 1;
                                    }
                                }
                                None => self.traffic.dropped_bits[dir_index(st.role)] += bits,
                            }
                        }
                        None => {
                            return Err(Error::Contract(format!(
                                "feedback for UE {ue} process {process} without a transmission"
                            )))
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn arrivals_and_release(&mut self, slot: u64) -> Result<()> {
        let dt = self.cfg.slot_duration_s;
        let now = slot as f64 * dt;
        let cap = self.cfg.traffic.link_buffer_cap_bits;
        for st in &mut self.ues {
            let flow = match st.role {
                Direction::Dl => &self.cfg.traffic.dl,
                Direction::Ul => &self.cfg.traffic.ul,
            };
            let n = generate_arrivals(flow, dt, &mut st.rng);
            let d = dir_index(st.role);
            self.traffic.offered_bits[d] += n * flow.payload_bits;
            match st.tcp.as_mut() {
                None => {
                    for _ in 0..n {
                        if st.mac_bits + flow.payload_bits <= cap {
                            st.mac_bits += flow.payload_bits;
                        } else {
                            self.traffic.dropped_bits[d] += flow.payload_bits;
                        }
                    }
                }
                Some(tcp) => {
                    st.app_bits += n * flow.payload_bits;
                    if tcp.in_flight > 0 && tcp.rto_deadline.is_some_and(|t| t <= now) {
                        cubic_on_loss(tcp, &self.cfg.tcp, now);
                        tcp.rto_deadline = Some(now + tcp.rto(&self.cfg.tcp));
                        self.tcp_stats.timeouts += 1;
                        self.tcp_stats.loss_events += 1;
                    }
                    let wanted = sendable_bytes(tcp, &self.cfg.tcp, TransportProtocol::Tcp, st.app_bits / 8);
                    let room = cap.saturating_sub(st.mac_bits) / 8;
                    let bytes = wanted.min(room);
                    // segments the link buffer cannot take are tail-dropped and
                    // stay with the sender for retransmission
                    if wanted > room && congestion_event(tcp, &self.cfg.tcp, now) {
                        self.tcp_stats.loss_events += 1;
                    }
                    st.app_bits -= bytes * 8;
                    st.mac_bits += bytes * 8;
                    tcp.on_release(&self.cfg.tcp, now, bytes);
                }
            }
        }
        Ok(())
    }

    /// Estimated SINR of `ue` on `prb` from the fading draw and the last
    /// measured interference.
    fn estimated_sinr(&self, ue: UeId, prb: usize, slot: u64) -> f64 {
        let st = &self.ues[ue];
        let t = slot as usize % self.frame_len;
        self.tx_power(st.role) * self.serving_gain(ue) * self.fading(ue, prb, slot) / st.measured_in[t]
    }

    fn estimated_bits(&self, ue: UeId, prb: usize, slot: u64) -> f64 {
        (1.0 + self.estimated_sinr(ue, prb, slot)).log2().min(MAX_RATE_SE) * RE_PER_PRB
    }

    fn schedule_cell(&mut self, c: CellId, slot: u64, t: usize) -> Result<()> {
        let dir = self.pattern(c).slot(t);
        let mut grid = std::mem::replace(&mut self.grids[c], PrbGrid::new(dir, 0));
        grid.reset(dir);
        let mut txs = std::mem::take(&mut self.txs[c]);
        txs.clear();

        let members: Vec<UeId> = self.cell_ues[c]
            .iter()
            .copied()
            .filter(|&u| self.ues[u].role == dir)
            .collect();

        // pending retransmissions first, one per UE
        let mut busy = Vec::new();
        for &u in &members {
            let Some(pid) = self.ues[u].harq.iter().position(|p| p.state == HarqState::PendingRetx) else {
                continue;
            };
            let need = self.ues[u].harq[pid].n_prbs;
            if grid.free_count() < need {
                continue;
            }
            let prbs = schedule_retransmission(&mut grid, u, need, |p| self.estimated_bits(u, p, slot));
            busy.push(u);
            txs.push(Transmission {
                ue: u,
                process: pid,
                prbs,
                retx: true,
            });
        }

        let candidates: Vec<PfCandidate> = members
            .iter()
            .copied()
            .filter(|u| !busy.contains(u))
            .filter(|&u| self.ues[u].mac_bits > 0 && self.ues[u].harq.iter().any(|p| p.state == HarqState::Idle))
            .map(|u| PfCandidate {
                ue: u,
                demand_bits: self.ues[u].mac_bits as f64,
            })
            .collect();
        if !candidates.is_empty() && grid.free_count() > 0 {
            let n_prbs = grid.n_prbs();
            let rates: Vec<f64> = candidates
                .iter()
                .flat_map(|cand| (0..n_prbs).map(move |p| (cand.ue, p)))
                .map(|(u, p)| self.estimated_bits(u, p, slot))
                .collect();
            pf_schedule(&mut grid, &candidates, |i, p| rates[i * n_prbs + p], &self.pf);
            for cand in &candidates {
                let prbs = grid.prbs_of(cand.ue);
                if prbs.is_empty() {
                    continue;
                }
                let est: Vec<f64> = prbs.iter().map(|&p| self.estimated_sinr(cand.ue, p, slot)).collect();
                let eff = eesm_effective_sinr(&est, self.cfg.mac.eesm_beta)?;
                let mcs = *select_mcs(eff, &self.cfg.mcs);
                let tb = transport_block_bits(&mcs, prbs.len());
                let st = &mut self.ues[cand.ue];
                let payload = (tb - tb % 8).min(st.mac_bits);
                if payload == 0 {
                    for &p in &prbs {
                        grid.release(p);
                    }
                    continue;
                }
                let pid = st
                    .harq
                    .iter()
                    .position(|p| p.state == HarqState::Idle)
                    .expect("candidate has an idle process");
                st.harq[pid].start(tb, payload, mcs.id, prbs.len())?;
                st.mac_bits -= payload;
                txs.push(Transmission {
                    ue: cand.ue,
                    process: pid,
                    prbs,
                    retx: false,
                });
            }
        }
        self.grids[c] = grid;
        self.txs[c] = txs;
        Ok(())
    }

    fn evaluate(&mut self, slot: u64, t: usize) -> Result<()> {
        let n_cells = self.topo.cells.len();
        let n_prbs = self.cfg.power.n_prbs;
        let mut dl_cells: Vec<Vec<CellId>> = vec![Vec::new(); n_prbs];
        let mut ul_ues: Vec<Vec<UeId>> = vec![Vec::new(); n_prbs];
        for (c, grid) in self.grids.iter().enumerate() {
            for (p, a) in grid.assignment().iter().enumerate() {
                if let Some(u) = a {
                    match grid.direction() {
                        Direction::Dl => dl_cells[p].push(c),
                        Direction::Ul => ul_ues[p].push(*u),
                    }
                }
            }
        }

        let measuring = self.measuring(slot);
        let mut served = vec![0.0f64; self.ues.len()];
        for c in 0..n_cells {
            let dir = self.grids[c].direction();
            let txs = std::mem::take(&mut self.txs[c]);
            let mut cross_sum = 0.0;
            let mut cross_n = 0usize;
            let mut trace_tx = Vec::new();
            for tx in &txs {
                let mut sinrs = Vec::with_capacity(tx.prbs.len());
                let mut in_sum = 0.0;
                for &p in &tx.prbs {
                    let activity = PrbActivity {
                        dl_cells: &dl_cells[p],
                        ul_ues: &ul_ues[p],
                    };
                    let fading = self.fading(tx.ue, p, slot);
                    let s = match dir {
                        Direction::Dl => compute_dl_sinr(tx.ue, c, &activity, &self.gains, &self.cfg.power, fading)?,
                        Direction::Ul => compute_ul_sinr(
                            c,
                            tx.ue,
                            &activity,
                            &self.gains,
                            &self.cfg.power,
                            self.cfg.policy,
                            fading,
                        )?,
                    };
                    if measuring {
                        match dir {
                            Direction::Dl => self.dl_sinr.record(s.db())?,
                            Direction::Ul => self.ul_sinr.record(s.db())?,
                        }
                    }
                    cross_sum += s.cross_link_interference;
                    cross_n += 1;
                    in_sum += s.interference_plus_noise();
                    sinrs.push(s.value);
                }
                let eff = eesm_effective_sinr(&sinrs, self.cfg.mac.eesm_beta)?;
                let st = &mut self.ues[tx.ue];
                st.measured_in[slot as usize % self.frame_len] = in_sum / tx.prbs.len() as f64;
                let process = &mut st.harq[tx.process];
                let mcs = *self
                    .cfg
                    .mcs
                    .get(process.mcs)
                    .ok_or_else(|| Error::Contract(format!("MCS {} not in table", process.mcs)))?;
                let outcome =
                    harq_transmit_and_feedback(process, eff, &mcs, self.cfg.mac.max_retx, &mut self.harq_rng[c])?;
                if tx.retx {
                    self.harq_stats.retransmissions += 1;
                } else {
                    self.harq_stats.new_transmissions += 1;
                }
                let delay = feedback_delay(&self.cb.entries()[self.active[c]].pattern, t, dir)? as u64;
                if outcome == HarqOutcome::Ack {
                    let bits = process.payload_bits;
                    self.harq_stats.acks += 1;
                    self.traffic.delivered_bits[dir_index(dir)] += bits;
                    served[tx.ue] = bits as f64;
                    if measuring {
                        match dir {
                            Direction::Dl => self.ledger.dl_bits[c] += bits,
                            Direction::Ul => self.ledger.ul_bits[c] += bits,
                        }
                    }
                    if st.tcp.is_some() {
                        let ack_at = slot + delay + self.ack_lag_slots;
                        self.push_event(ack_at, Event::TcpAck { ue: tx.ue, bytes: bits / 8 });
                    }
                }
                // retransmissions become eligible the slot after feedback arrives
                self.push_event(
                    slot + delay + 1,
                    Event::HarqFeedback {
                        ue: tx.ue,
                        process: tx.process,
                    },
                );
                if self.options.trace.is_some() {
                    trace_tx.push(TraceTx {
                        ue: tx.ue,
                        mcs: mcs.id,
                        retx: tx.retx,
                        outcome,
                    });
                }
            }
            if measuring && cross_n > 0 {
                let mean = cross_sum / cross_n as f64;
                match dir {
                    Direction::Ul => self.bs_bs.record_power_dbm(mean)?,
                    Direction::Dl => self.ue_ue.record_power_dbm(mean)?,
                }
            }
            if let Some(w) = self.options.trace.as_mut() {
                if !txs.is_empty() {
                    let line = TraceLine {
                        slot,
                        cell: c,
                        direction: dir,
                        prbs: self.grids[c].assignment(),
                        tx: trace_tx,
                    };
                    let text = serde_json::to_string(&line).expect("trace line serializes");
                    writeln!(w, "{text}").map_err(|e| Error::Contract(format!("trace write failed: {e}")))?;
                }
            }
            self.txs[c] = txs;
        }

        for c in 0..n_cells {
            let dir = self.grids[c].direction();
            for &u in &self.cell_ues[c] {
                if self.ues[u].role == dir {
                    self.pf.update(u, served[u]);
                }
            }
        }
        Ok(())
    }

    fn finish(self) -> Result<RunOutput> {
        let cfg = self.cfg;
        let window_s = self.ledger.window_s;
        let mbps = |bits: u64| if window_s > 0.0 { throughput_mbps(bits, window_s) } else { Ok(0.0) };
        let per_cell_dl = self.ledger.dl_bits.iter().map(|b| mbps(*b)).collect::<Result<Vec<_>>>()?;
        let per_cell_ul = self.ledger.ul_bits.iter().map(|b| mbps(*b)).collect::<Result<Vec<_>>>()?;
        let mut traffic = self.traffic.clone();
        for st in &self.ues {
            traffic.backlog_bits[dir_index(st.role)] += st.backlog_bits();
        }
        for d in 0..2 {
            let accounted = traffic.delivered_bits[d] + traffic.dropped_bits[d] + traffic.backlog_bits[d];
            if accounted != traffic.offered_bits[d] {
                return Err(Error::Contract(format!(
                    "bit conservation broken in direction {d}: offered {} != accounted {accounted}",
                    traffic.offered_bits[d]
                )));
            }
        }
        let mean_misalignment = (!self.misalignment.is_empty())
            .then(|| self.misalignment.iter().sum::<f64>() / self.misalignment.len() as f64);
        let report = MetricsReport {
            version: VERSION.to_string(),
            scenario_hash: cfg.scenario_hash(),
            policy: cfg.policy,
            protocol: cfg.protocol,
            seed: cfg.seed,
            config: serde_json::to_value(cfg).expect("config serializes"),
            n_cells: self.topo.cells.len(),
            duration_slots: cfg.duration_slots,
            warmup_slots: cfg.warmup_slots,
            window_s,
            throughput: ThroughputSummary {
                dl_mbps: mbps(self.ledger.dl_bits.iter().sum())?,
                ul_mbps: mbps(self.ledger.ul_bits.iter().sum())?,
                per_cell_dl_mbps: per_cell_dl,
                per_cell_ul_mbps: per_cell_ul,
            },
            traffic,
            harq: self.harq_stats,
            tcp: self.tcp_stats,
            cli: CliSummary {
                bs_bs_dbm: self.bs_bs.summary(),
                ue_ue_dbm: self.ue_ue.summary(),
            },
            ul_sinr_db: self.ul_sinr.summary(),
            dl_sinr_db: self.dl_sinr.summary(),
            cwnd_bytes: self.cwnd.summary(),
            misalignment_per_frame: self.misalignment,
            mean_misalignment,
            coordination: self.coord,
        };
        Ok(RunOutput {
            report,
            cwnd_series: self.cwnd_series,
        })
    }
}

fn bump(hist: &mut Vec<u64>, at: usize) {
    if hist.len() <= at {
        hist.resize(at + 1, 0);
    }
    hist[at] += 1;
}
