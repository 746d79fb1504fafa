//! Run metrics: histogram-backed ECDFs, throughput accounting and the report
//! document.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::coordination::CoordinationPolicy;
use crate::error::{contract_err, Result};
use crate::phy::watts_to_dbm;
use crate::traffic::TransportProtocol;

/// Bin width for dB-valued ECDFs.
pub const DB_RESOLUTION: f64 = 0.1;
/// Bin width for the CWND ECDF, bytes.
pub const CWND_RESOLUTION: f64 = 1000.0;

const SUMMARY_QUANTILES: [f64; 7] = [0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95];

/// Fixed-resolution histogram with exact extremes and mean, plus a separate
/// count of exact-zero samples (CLI-free instants, which have no dB value).
#[derive(Debug, Clone, PartialEq)]
pub struct EcdfAccumulator {
    resolution: f64,
    bins: BTreeMap<i64, u64>,
    count: u64,
    zero_count: u64,
    min: f64,
    max: f64,
    sum: f64,
}

impl EcdfAccumulator {
    pub fn new(resolution: f64) -> Self {
        assert!(resolution > 0.0, "ECDF resolution must be positive");
        EcdfAccumulator {
            resolution,
            bins: BTreeMap::new(),
            count: 0,
            zero_count: 0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn record(&mut self, value: f64) -> Result<()> {
        if !value.is_finite() {
            return contract_err(format!("non-finite ECDF sample {value}"));
        }
        let bin = (value / self.resolution).floor() as i64;
        *self.bins.entry(bin).or_default() += 1;
        self.count += 1;
        self.min = self.min.min(value);
        self.max = self.max.max(value);
        self.sum += value;
        Ok(())
    }

    pub fn record_zero(&mut self) {
        self.zero_count += 1;
    }

    /// Records an interference power: zero goes to the zero bucket, positive
    /// powers are binned in dBm.
    pub fn record_power_dbm(&mut self, power_w: f64) -> Result<()> {
        if power_w < 0.0 || power_w.is_nan() {
            return contract_err(format!("negative interference power {power_w}"));
        }
        if power_w == 0.0 {
            self.record_zero();
            Ok(())
        } else {
            self.record(watts_to_dbm(power_w))
        }
    }

    /// Non-zero samples.
    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn zero_count(&self) -> u64 {
        self.zero_count
    }

    pub fn total(&self) -> u64 {
        self.count + self.zero_count
    }

    /// Share of zero samples; `None` before any sample.
    pub fn zero_fraction(&self) -> Option<f64> {
        match self.total() {
            0 => None,
            n => Some(self.zero_count as f64 / n as f64),
        }
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }

    pub fn min(&self) -> Option<f64> {
        (self.count > 0).then_some(self.min)
    }

    pub fn max(&self) -> Option<f64> {
        (self.count > 0).then_some(self.max)
    }

    /// Quantile of the non-zero samples, interpolated linearly inside the bin
    /// that holds the target rank. `q = 0` and `q = 1` give the exact extremes.
    pub fn quantile(&self, q: f64) -> Result<Option<f64>> {
        if !(0.0..=1.0).contains(&q) {
            return contract_err(format!("quantile {q} outside [0, 1]"));
        }
        if self.count == 0 {
            return Ok(None);
        }
        if q == 0.0 {
            return Ok(Some(self.min));
        }
        if q == 1.0 {
            return Ok(Some(self.max));
        }
        let target = q * self.count as f64;
        let mut cum = 0.0;
        for (&k, &c) in &self.bins {
            let c = c as f64;
            if cum + c >= target {
                let lo = (k as f64 * self.resolution).max(self.min);
                let hi = ((k + 1) as f64 * self.resolution).min(self.max);
                let frac = (target - cum) / c;
                return Ok(Some(lo + frac * (hi - lo).max(0.0)));
            }
            cum += c;
        }
        Ok(Some(self.max))
    }

    /// `(value, cumulative probability)` at the upper edge of every occupied bin.
    pub fn points(&self) -> Vec<[f64; 2]> {
        let n = self.count as f64;
        let mut cum = 0u64;
        self.bins
            .iter()
            .map(|(&k, &c)| {
                cum += c;
                let edge = ((k + 1) as f64 * self.resolution).min(self.max);
                [edge, cum as f64 / n]
            })
            .collect()
    }

    /// Adds the samples of another accumulator of the same resolution.
    pub fn merge(&mut self, other: &EcdfAccumulator) -> Result<()> {
        if other.resolution != self.resolution {
            return contract_err("cannot merge ECDFs of different resolution");
        }
        for (&k, &c) in &other.bins {
            *self.bins.entry(k).or_default() += c;
        }
        self.count += other.count;
        self.zero_count += other.zero_count;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
        self.sum += other.sum;
        Ok(())
    }

    pub fn summary(&self) -> EcdfSummary {
        EcdfSummary {
            count: self.count,
            zero_count: self.zero_count,
            zero_fraction: self.zero_fraction(),
            resolution: self.resolution,
            mean: self.mean(),
            min: self.min(),
            max: self.max(),
            quantiles: SUMMARY_QUANTILES
                .iter()
                .filter_map(|&q| self.quantile(q).ok().flatten().map(|v| [q, v]))
                .collect(),
            points: self.points(),
        }
    }
}

/// Serialized form of an ECDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcdfSummary {
    pub count: u64,
    pub zero_count: u64,
    pub zero_fraction: Option<f64>,
    pub resolution: f64,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    /// `[q, value]` pairs.
    pub quantiles: Vec<[f64; 2]>,
    /// `[value, cumulative probability]` pairs.
    pub points: Vec<[f64; 2]>,
}

impl EcdfSummary {
    pub fn quantile(&self, q: f64) -> Option<f64> {
        self.quantiles.iter().find(|p| p[0] == q).map(|p| p[1])
    }
}

/// Delivered bits per cell and direction over the measurement window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputLedger {
    pub dl_bits: Vec<u64>,
    pub ul_bits: Vec<u64>,
    pub window_s: f64,
}

impl ThroughputLedger {
    pub fn new(n_cells: usize, window_s: f64) -> Self {
        ThroughputLedger {
            dl_bits: vec![0; n_cells],
            ul_bits: vec![0; n_cells],
            window_s,
        }
    }

    /// Cluster DL and UL throughput in Mbps.
    pub fn cluster_mbps(&self) -> Result<(f64, f64)> {
        Ok((
            throughput_mbps(self.dl_bits.iter().sum(), self.window_s)?,
            throughput_mbps(self.ul_bits.iter().sum(), self.window_s)?,
        ))
    }
}

pub fn throughput_mbps(bits: u64, window_s: f64) -> Result<f64> {
    if !(window_s > 0.0) {
        return contract_err(format!("throughput window must be positive, got {window_s}"));
    }
    Ok(bits as f64 / window_s / 1e6)
}

/// Relative change of `candidate` over `baseline` as a signed percentage,
/// e.g. `+144.41%`; `n/a` for a zero baseline.
pub fn format_gain(baseline: f64, candidate: f64) -> String {
    if baseline == 0.0 {
        return "n/a".to_string();
    }
    format!("{:+.2}%", (candidate / baseline - 1.0) * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputSummary {
    pub dl_mbps: f64,
    pub ul_mbps: f64,
    pub per_cell_dl_mbps: Vec<f64>,
    pub per_cell_ul_mbps: Vec<f64>,
}

/// Whole-run bit accounting per direction, `[DL, UL]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrafficSummary {
    pub offered_bits: [u64; 2],
    pub delivered_bits: [u64; 2],
    pub dropped_bits: [u64; 2],
    /// Generated but neither delivered nor dropped at the end of the run.
    pub backlog_bits: [u64; 2],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HarqSummary {
    pub new_transmissions: u64,
    pub retransmissions: u64,
    pub acks: u64,
    pub drops: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TcpSummary {
    pub loss_events: u64,
    pub timeouts: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoordinationSummary {
    pub rounds: u64,
    pub reassigned: u64,
    pub sub_codebook_slides: u64,
    pub index_bits: u32,
    /// Requests per DL slot count, indexed by the count.
    pub requested_dl_slots: Vec<u64>,
    /// Rounds per spread (largest minus smallest requested DL count).
    pub ratio_spread: Vec<u64>,
    /// Payload bits of each update period, in order.
    pub bits_per_period: Vec<u64>,
    pub total_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CliSummary {
    pub bs_bs_dbm: EcdfSummary,
    pub ue_ue_dbm: EcdfSummary,
}

/// Everything one run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub version: String,
    pub scenario_hash: String,
    pub policy: CoordinationPolicy,
    pub protocol: TransportProtocol,
    pub seed: u64,
    pub config: serde_json::Value,
    pub n_cells: usize,
    pub duration_slots: u64,
    pub warmup_slots: u64,
    pub window_s: f64,
    pub throughput: ThroughputSummary,
    pub traffic: TrafficSummary,
    pub harq: HarqSummary,
    pub tcp: TcpSummary,
    pub cli: CliSummary,
    pub ul_sinr_db: EcdfSummary,
    pub dl_sinr_db: EcdfSummary,
    pub cwnd_bytes: EcdfSummary,
    /// Pairwise mean misalignment of the active patterns, one value per frame.
    pub misalignment_per_frame: Vec<f64>,
    pub mean_misalignment: Option<f64>,
    pub coordination: CoordinationSummary,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| crate::Error::Parse(format!("report: {e}")))
    }

    /// Short human-readable table.
    pub fn summary_table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
        let mut s = String::new();
        let _ = writeln!(s, "policy            {}", self.policy);
        let _ = writeln!(s, "protocol          {}", self.protocol);
        let _ = writeln!(s, "seed              {}", self.seed);
        let _ = writeln!(s, "cells             {}", self.n_cells);
        let _ = writeln!(s, "window            {:.3} s", self.window_s);
        let _ = writeln!(s, "DL throughput     {:.2} Mbps", self.throughput.dl_mbps);
        let _ = writeln!(s, "UL throughput     {:.2} Mbps", self.throughput.ul_mbps);
        let _ = writeln!(s, "UL SINR mean      {} dB", opt(self.ul_sinr_db.mean));
        let _ = writeln!(s, "DL SINR mean      {} dB", opt(self.dl_sinr_db.mean));
        let _ = writeln!(s, "BS-BS CLI-free    {}", opt(self.cli.bs_bs_dbm.zero_fraction));
        let _ = writeln!(s, "UE-UE CLI-free    {}", opt(self.cli.ue_ue_dbm.zero_fraction));
        let _ = writeln!(s, "CWND p90          {} B", opt(self.cwnd_bytes.quantile(0.9)));
        let _ = writeln!(s, "misalignment      {}", opt(self.mean_misalignment));
        let _ = writeln!(s, "signaling bits    {}", self.coordination.total_bits);
        s
    }
}
