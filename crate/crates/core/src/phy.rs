//! Link gains, per-PRB SINR for the four interference classes, EESM and the
//! MCS/BLER tables.
//!
//! Channels are reduced to effective scalar power gains. Beamforming and
//! antenna gains are folded into the BS-UE path-loss constant; the receiver is
//! modelled as signal over noise plus the sum of interfering powers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::codebook::Direction;
use crate::coordination::CoordinationPolicy;
use crate::error::{config_err, contract_err, Result};
use crate::{CellId, UeId};

pub fn lin_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * (w / 1e-3).log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkKind {
    BsUe,
    UeUe,
    BsBs,
    UeBs,
}

impl LinkKind {
    fn hash_code(self) -> u64 {
        // UE-BS is the reciprocal of BS-UE and shares its shadowing
        match self {
            LinkKind::BsUe | LinkKind::UeBs => 1,
            LinkKind::UeUe => 2,
            LinkKind::BsBs => 3,
        }
    }
}

/// Log-distance model: `PL(d) = pl0 + 10 * exponent * log10(d / d0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathLossParams {
    pub pl0_db: f64,
    pub exponent: f64,
    pub shadowing_std_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    /// Reference distance d0 in meters.
    pub reference_distance_m: f64,
    /// Distances are clamped to at least this value.
    pub min_distance_m: f64,
    pub bs_height_m: f64,
    pub ue_height_m: f64,
    /// BS-UE and UE-BS links; includes folded antenna and beamforming gain.
    pub bs_ue: PathLossParams,
    pub ue_ue: PathLossParams,
    pub bs_bs: PathLossParams,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            reference_distance_m: 10.0,
            min_distance_m: 10.0,
            bs_height_m: 25.0,
            ue_height_m: 1.5,
            bs_ue: PathLossParams {
                pl0_db: 54.0,
                exponent: 3.5,
                shadowing_std_db: 6.0,
            },
            ue_ue: PathLossParams {
                pl0_db: 60.0,
                exponent: 4.0,
                shadowing_std_db: 8.0,
            },
            bs_bs: PathLossParams {
                pl0_db: 55.0,
                exponent: 2.5,
                shadowing_std_db: 4.0,
            },
        }
    }
}

impl ChannelConfig {
    pub fn params(&self, kind: LinkKind) -> &PathLossParams {
        match kind {
            LinkKind::BsUe | LinkKind::UeBs => &self.bs_ue,
            LinkKind::UeUe => &self.ue_ue,
            LinkKind::BsBs => &self.bs_bs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.reference_distance_m > 0.0 && self.min_distance_m > 0.0) {
            return config_err("channel: reference and minimum distances must be positive");
        }
        for p in [&self.bs_ue, &self.ue_ue, &self.bs_bs] {
            if !(p.exponent > 0.0 && p.shadowing_std_db >= 0.0 && p.pl0_db.is_finite()) {
                return config_err(format!("channel: invalid path-loss parameters {p:?}"));
            }
        }
        Ok(())
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn mix(words: &[u64]) -> u64 {
    words.iter().fold(0u64, |h, w| splitmix(h ^ splitmix(*w)))
}

fn link_key(seed: u64, a: &Position, b: &Position, kind: LinkKind) -> u64 {
    let ka = (a.x.to_bits(), a.y.to_bits());
    let kb = (b.x.to_bits(), b.y.to_bits());
    let (lo, hi) = if ka <= kb { (ka, kb) } else { (kb, ka) };
    mix(&[seed, kind.hash_code(), lo.0, lo.1, hi.0, hi.1])
}

/// Mean power gain (linear) of the link between `a` and `b`, including a
/// lognormal shadowing term that is a deterministic function of the seed,
/// the link kind and the unordered endpoint pair.
pub fn path_gain(a: &Position, b: &Position, kind: LinkKind, channel: &ChannelConfig, seed: u64) -> f64 {
    let dh = match kind {
        LinkKind::BsUe | LinkKind::UeBs => channel.bs_height_m - channel.ue_height_m,
        LinkKind::UeUe | LinkKind::BsBs => 0.0,
    };
    let d = a.distance(b).hypot(dh).max(channel.min_distance_m);
    let p = channel.params(kind);
    let shadow = if p.shadowing_std_db > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(link_key(seed, a, b, kind));
        let z: f64 = StandardNormal.sample(&mut rng);
        p.shadowing_std_db * z
    } else {
        0.0
    };
    let loss = p.pl0_db + 10.0 * p.exponent * (d / channel.reference_distance_m).log10();
    db_to_lin(shadow - loss)
}

/// Mean gains for every link of a drop. Self links hold zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGainTable {
    n_cells: usize,
    n_ues: usize,
    bs_ue: Vec<f64>,
    ue_ue: Vec<f64>,
    bs_bs: Vec<f64>,
}

impl LinkGainTable {
    pub fn build(cells: &[Position], ues: &[Position], channel: &ChannelConfig, seed: u64) -> Self {
        let (nc, nu) = (cells.len(), ues.len());
        let mut bs_ue = vec![0.0; nc * nu];
        for (c, cp) in cells.iter().enumerate() {
            for (u, up) in ues.iter().enumerate() {
                bs_ue[c * nu + u] = path_gain(cp, up, LinkKind::BsUe, channel, seed);
            }
        }
        let mut ue_ue = vec![0.0; nu * nu];
        for a in 0..nu {
            for b in a + 1..nu {
                let g = path_gain(&ues[a], &ues[b], LinkKind::UeUe, channel, seed);
                ue_ue[a * nu + b] = g;
                ue_ue[b * nu + a] = g;
            }
        }
        let mut bs_bs = vec![0.0; nc * nc];
        for a in 0..nc {
            for b in a + 1..nc {
                let g = path_gain(&cells[a], &cells[b], LinkKind::BsBs, channel, seed);
                bs_bs[a * nc + b] = g;
                bs_bs[b * nc + a] = g;
            }
        }
        LinkGainTable {
            n_cells: nc,
            n_ues: nu,
            bs_ue,
            ue_ue,
            bs_bs,
        }
    }

    /// Table with every BS-UE gain `bs_ue`, UE-UE gain `ue_ue` and BS-BS
    /// gain `bs_bs`; handy for hand-built scenarios.
    pub fn uniform(n_cells: usize, n_ues: usize, bs_ue: f64, ue_ue: f64, bs_bs: f64) -> Self {
        let mut t = LinkGainTable {
            n_cells,
            n_ues,
            bs_ue: vec![bs_ue; n_cells * n_ues],
            ue_ue: vec![ue_ue; n_ues * n_ues],
            bs_bs: vec![bs_bs; n_cells * n_cells],
        };
        for i in 0..n_ues {
            t.ue_ue[i * n_ues + i] = 0.0;
        }
        for i in 0..n_cells {
            t.bs_bs[i * n_cells + i] = 0.0;
        }
        t
    }

    pub fn set_bs_ue(&mut self, cell: CellId, ue: UeId, g: f64) {
        self.bs_ue[cell * self.n_ues + ue] = g;
    }

    pub fn set_ue_ue(&mut self, a: UeId, b: UeId, g: f64) {
        self.ue_ue[a * self.n_ues + b] = g;
        self.ue_ue[b * self.n_ues + a] = g;
    }

    pub fn set_bs_bs(&mut self, a: CellId, b: CellId, g: f64) {
        self.bs_bs[a * self.n_cells + b] = g;
        self.bs_bs[b * self.n_cells + a] = g;
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_ues(&self) -> usize {
        self.n_ues
    }

    #[inline]
    pub fn bs_ue(&self, cell: CellId, ue: UeId) -> f64 {
        self.bs_ue[cell * self.n_ues + ue]
    }

    #[inline]
    pub fn ue_bs(&self, ue: UeId, cell: CellId) -> f64 {
        self.bs_ue(cell, ue)
    }

    #[inline]
    pub fn ue_ue(&self, a: UeId, b: UeId) -> f64 {
        self.ue_ue[a * self.n_ues + b]
    }

    #[inline]
    pub fn bs_bs(&self, a: CellId, b: CellId) -> f64 {
        self.bs_bs[a * self.n_cells + b]
    }

    /// One tab-separated row per link: `kind a b gain_db`. Symmetric kinds are
    /// listed once per unordered pair.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("kind\ta\tb\tgain_db\n");
        for c in 0..self.n_cells {
            for u in 0..self.n_ues {
                out.push_str(&format!("BS-UE\t{c}\t{u}\t{:.3}\n", lin_to_db(self.bs_ue(c, u))));
            }
        }
        for a in 0..self.n_ues {
            for b in a + 1..self.n_ues {
                out.push_str(&format!("UE-UE\t{a}\t{b}\t{:.3}\n", lin_to_db(self.ue_ue(a, b))));
            }
        }
        for a in 0..self.n_cells {
            for b in a + 1..self.n_cells {
                out.push_str(&format!("BS-BS\t{a}\t{b}\t{:.3}\n", lin_to_db(self.bs_bs(a, b))));
            }
        }
        out
    }
}

/// Transmit powers and noise. Powers are spread evenly over `n_prbs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerConfig {
    /// Cell DL power in watts.
    pub p_dl_w: f64,
    /// UE UL power in watts.
    pub p_ul_w: f64,
    /// Noise power per PRB in watts.
    pub noise_w: f64,
    pub n_prbs: usize,
}

impl Default for PowerConfig {
    fn default() -> Self {
        PowerConfig {
            p_dl_w: 40.0,
            p_ul_w: 0.2,
            // -174 dBm/Hz over 180 kHz with a 7 dB noise figure
            noise_w: 3.59e-15,
            n_prbs: 50,
        }
    }
}

impl PowerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_dl_w > 0.0 && self.p_ul_w > 0.0 && self.noise_w > 0.0) {
            return config_err("power: p_dl_w, p_ul_w and noise_w must be positive");
        }
        if self.n_prbs == 0 {
            return config_err("power: n_prbs must be at least 1");
        }
        Ok(())
    }

    #[inline]
    pub fn dl_per_prb(&self) -> f64 {
        self.p_dl_w / self.n_prbs as f64
    }

    #[inline]
    pub fn ul_per_prb(&self) -> f64 {
        self.p_ul_w / self.n_prbs as f64
    }
}

/// One per-PRB SINR evaluation with its power breakdown in watts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinrSample {
    pub value: f64,
    pub direction: Direction,
    pub signal: f64,
    pub cross_link_interference: f64,
    pub same_link_interference: f64,
    pub noise: f64,
}

impl SinrSample {
    fn new(direction: Direction, signal: f64, same: f64, cross: f64, noise: f64) -> Self {
        SinrSample {
            value: signal / (noise + same + cross),
            direction,
            signal,
            cross_link_interference: cross,
            same_link_interference: same,
            noise,
        }
    }

    pub fn db(&self) -> f64 {
        lin_to_db(self.value)
    }

    /// Interference plus noise in watts.
    pub fn interference_plus_noise(&self) -> f64 {
        self.noise + self.same_link_interference + self.cross_link_interference
    }
}

/// Who transmits on one PRB in one slot, across the cluster.
#[derive(Debug, Clone, Copy)]
pub struct PrbActivity<'a> {
    pub dl_cells: &'a [CellId],
    pub ul_ues: &'a [UeId],
}

/// DL SINR of `target` served by `serving` on one PRB. Other DL cells on the
/// PRB add same-link interference; UL UEs add UE-UE cross-link interference.
/// `fading` multiplies the serving link only.
pub fn compute_dl_sinr(
    target: UeId,
    serving: CellId,
    activity: &PrbActivity<'_>,
    gains: &LinkGainTable,
    power: &PowerConfig,
    fading: f64,
) -> Result<SinrSample> {
    if !activity.dl_cells.contains(&serving) {
        return contract_err(format!("cell {serving} does not transmit DL on this PRB"));
    }
    let p = power.dl_per_prb();
    let signal = p * gains.bs_ue(serving, target) * fading;
    let same: f64 = activity
        .dl_cells
        .iter()
        .filter(|&&c| c != serving)
        .map(|&c| p * gains.bs_ue(c, target))
        .sum();
    let pu = power.ul_per_prb();
    let cross: f64 = activity
        .ul_ues
        .iter()
        .filter(|&&j| j != target)
        .map(|&j| pu * gains.ue_ue(j, target))
        .sum();
    Ok(SinrSample::new(Direction::Dl, signal, same, cross, power.noise_w))
}

/// UL SINR at `serving` from `target` on one PRB. Other UL UEs add same-link
/// interference; DL cells add BS-BS cross-link interference, which is
/// cancelled completely under [`CoordinationPolicy::Iuic`].
pub fn compute_ul_sinr(
    serving: CellId,
    target: UeId,
    activity: &PrbActivity<'_>,
    gains: &LinkGainTable,
    power: &PowerConfig,
    policy: CoordinationPolicy,
    fading: f64,
) -> Result<SinrSample> {
    if !activity.ul_ues.contains(&target) {
        return contract_err(format!("UE {target} does not transmit UL on this PRB"));
    }
    let pu = power.ul_per_prb();
    let signal = pu * gains.ue_bs(target, serving) * fading;
    let same: f64 = activity
        .ul_ues
        .iter()
        .filter(|&&j| j != target)
        .map(|&j| pu * gains.ue_bs(j, serving))
        .sum();
    let cross = if policy == CoordinationPolicy::Iuic {
        0.0
    } else {
        let p = power.dl_per_prb();
        activity
            .dl_cells
            .iter()
            .filter(|&&c| c != serving)
            .map(|&c| p * gains.bs_bs(c, serving))
            .sum()
    };
    Ok(SinrSample::new(Direction::Ul, signal, same, cross, power.noise_w))
}

/// Exponential effective SINR mapping:
/// `-beta * ln(mean(exp(-sinr_i / beta)))`, all in linear units.
pub fn eesm_effective_sinr(sinrs: &[f64], beta: f64) -> Result<f64> {
    if sinrs.is_empty() {
        return contract_err("EESM of an empty SINR set");
    }
    if !(beta > 0.0) {
        return contract_err(format!("EESM beta must be positive, got {beta}"));
    }
    // factor out the minimum so the exponentials cannot all underflow
    let min = sinrs.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = sinrs.iter().map(|s| (-(s - min) / beta).exp()).sum::<f64>() / sinrs.len() as f64;
    Ok(min - beta * mean.ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McsEntry {
    pub id: u8,
    /// Information bits per resource element.
    pub spectral_efficiency: f64,
    /// SINR (dB) at which the block error rate is one half.
    pub min_sinr_db: f64,
    pub bler_slope_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsTable {
    pub entries: Vec<McsEntry>,
}

impl Default for McsTable {
    /// Eight entries from QPSK 1/8 to 64QAM 5/6 equivalents.
    fn default() -> Self {
        const ROWS: [(f64, f64); 8] = [
            (0.25, -5.0),
            (0.5, -2.0),
            (1.0, 1.5),
            (1.5, 5.0),
            (2.0, 8.5),
            (3.0, 12.5),
            (4.0, 17.0),
            (5.0, 22.0),
        ];
        McsTable {
            entries: ROWS
                .iter()
                .enumerate()
                .map(|(i, &(se, th))| McsEntry {
                    id: i as u8,
                    spectral_efficiency: se,
                    min_sinr_db: th,
                    bler_slope_db: 1.0,
                })
                .collect(),
        }
    }
}

impl McsTable {
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return config_err("MCS table is empty");
        }
        for w in self.entries.windows(2) {
            if !(w[1].min_sinr_db > w[0].min_sinr_db
                && w[1].spectral_efficiency > w[0].spectral_efficiency)
            {
                return config_err("MCS entries must increase in SINR threshold and efficiency");
            }
        }
        if self.entries.iter().any(|e| !(e.bler_slope_db > 0.0)) {
            return config_err("MCS BLER slopes must be positive");
        }
        Ok(())
    }

    pub fn get(&self, id: u8) -> Option<&McsEntry> {
        self.entries.get(id as usize)
    }
}

/// Highest entry whose threshold does not exceed the effective SINR; the
/// lowest entry when none qualifies.
pub fn select_mcs(effective_sinr: f64, table: &McsTable) -> &McsEntry {
    let db = lin_to_db(effective_sinr);
    table
        .entries
        .iter()
        .rev()
        .find(|e| e.min_sinr_db <= db)
        .unwrap_or(&table.entries[0])
}

pub const BLER_FLOOR: f64 = 1e-4;

/// Logistic block error rate in dB, centred on the entry threshold and
/// clamped to `[1e-4, 1 - 1e-4]`.
pub fn bler(effective_sinr: f64, entry: &McsEntry) -> f64 {
    let db = lin_to_db(effective_sinr);
    let x = (db - entry.min_sinr_db) / entry.bler_slope_db;
    let p = 1.0 / (1.0 + x.exp());
    if p.is_nan() {
        return 1.0 - BLER_FLOOR;
    }
    p.clamp(BLER_FLOOR, 1.0 - BLER_FLOOR)
}
