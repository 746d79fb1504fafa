//! FTP3 Poisson traffic, per-UE buffers and the TCP (CUBIC) / UDP transport
//! models.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FtpFlowConfig {
    /// Bits per packet.
    pub payload_bits: u64,
    /// Packets per second per UE.
    pub arrival_rate: f64,
}

impl FtpFlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.payload_bits == 0 {
            return config_err("traffic: payload_bits must be positive");
        }
        if !(self.arrival_rate >= 0.0 && self.arrival_rate.is_finite()) {
            return config_err("traffic: arrival_rate must be finite and non-negative");
        }
        Ok(())
    }

    /// Offered bits per second of `n_ues` such flows.
    pub fn offered_bps(&self, n_ues: usize) -> f64 {
        n_ues as f64 * self.payload_bits as f64 * self.arrival_rate
    }
}

/// Number of packets arriving in one slot.
pub fn generate_arrivals<R: Rng + ?Sized>(config: &FtpFlowConfig, slot_duration_s: f64, rng: &mut R) -> u64 {
    let mean = config.arrival_rate * slot_duration_s;
    if mean <= 0.0 {
        return 0;
    }
    let d = Poisson::new(mean).expect("positive finite mean");
    d.sample(rng) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransportProtocol {
    #[serde(rename = "TCP")]
    Tcp,
    #[serde(rename = "UDP")]
    Udp,
}

impl fmt::Display for TransportProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransportProtocol::Tcp => "TCP",
            TransportProtocol::Udp => "UDP",
        })
    }
}

impl FromStr for TransportProtocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "TCP" => Ok(TransportProtocol::Tcp),
            "UDP" => Ok(TransportProtocol::Udp),
            _ => Err(Error::Parse(format!("unknown protocol {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TcpConfig {
    pub mss_bytes: u64,
    pub initial_cwnd_mss: f64,
    pub ssthresh_mss: f64,
    /// Receiver advertised window.
    pub advertised_window_bytes: u64,
    pub cubic_c: f64,
    /// Multiplicative-decrease fraction.
    pub cubic_beta: f64,
    /// Round trip outside the radio link.
    pub core_rtt_s: f64,
    pub min_rto_s: f64,
}

impl Default for TcpConfig {
    fn default() -> Self {
        TcpConfig {
            mss_bytes: 1500,
            initial_cwnd_mss: 1.0,
            ssthresh_mss: 35.0,
            advertised_window_bytes: 1 << 20,
            cubic_c: 0.4,
            cubic_beta: 0.3,
            core_rtt_s: 0.01,
            min_rto_s: 0.02,
        }
    }
}

impl TcpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mss_bytes == 0 {
            return config_err("tcp: mss_bytes must be positive");
        }
        if !(self.initial_cwnd_mss >= 1.0 && self.ssthresh_mss >= 2.0) {
            return config_err("tcp: initial_cwnd_mss must be >= 1 and ssthresh_mss >= 2");
        }
        if self.advertised_window_bytes < self.mss_bytes {
            return config_err("tcp: advertised window smaller than one MSS");
        }
        if !(self.cubic_c > 0.0 && self.cubic_beta > 0.0 && self.cubic_beta < 1.0) {
            return config_err("tcp: cubic_c must be positive and cubic_beta in (0, 1)");
        }
        if !(self.core_rtt_s >= 0.0 && self.min_rto_s > 0.0) {
            return config_err("tcp: core_rtt_s must be >= 0 and min_rto_s > 0");
        }
        Ok(())
    }
}

/// Sender state of one long-lived connection. Window quantities in bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcpConnectionState {
    pub cwnd: f64,
    pub ssthresh: f64,
    pub w_max: f64,
    /// Start of the current congestion-avoidance epoch, seconds.
    pub epoch_start: Option<f64>,
    /// Window at the start of the epoch.
    pub epoch_cwnd: f64,
    pub in_slow_start: bool,
    pub rtt_estimate: f64,
    pub in_flight: u64,
    pub mss: u64,
    /// Unacknowledged releases, oldest first: (release time, bytes).
    #[serde(skip)]
    pub segments: VecDeque<(f64, u64)>,
    pub rto_deadline: Option<f64>,
    /// Losses before this time belong to the window already reduced.
    pub recovery_until: Option<f64>,
}

impl TcpConnectionState {
    pub fn new(cfg: &TcpConfig) -> Self {
        let mss = cfg.mss_bytes as f64;
        TcpConnectionState {
            cwnd: cfg.initial_cwnd_mss * mss,
            ssthresh: cfg.ssthresh_mss * mss,
            w_max: 0.0,
            epoch_start: None,
            epoch_cwnd: 0.0,
            in_slow_start: true,
            rtt_estimate: cfg.core_rtt_s.max(cfg.min_rto_s / 2.0),
            in_flight: 0,
            mss: cfg.mss_bytes,
            segments: VecDeque::new(),
            rto_deadline: None,
            recovery_until: None,
        }
    }

    pub fn rto(&self, cfg: &TcpConfig) -> f64 {
        (2.0 * self.rtt_estimate).max(cfg.min_rto_s)
    }

    /// Cubic inflection time of the current epoch, seconds after its start.
    pub fn cubic_k(&self, cfg: &TcpConfig) -> f64 {
        let mss = self.mss as f64;
        (((self.w_max - self.epoch_cwnd) / mss).max(0.0) / cfg.cubic_c).cbrt()
    }

    /// Records `bytes` handed to the link at `now`.
    pub fn on_release(&mut self, cfg: &TcpConfig, now: f64, bytes: u64) {
        if bytes == 0 {
            return;
        }
        if self.in_flight == 0 {
            self.rto_deadline = Some(now + self.rto(cfg));
        }
        self.in_flight += bytes;
        self.segments.push_back((now, bytes));
    }
}

/// Window growth on an acknowledgment of `acked_bytes` at time `now`.
///
/// Below the slow-start threshold the window grows by the acknowledged bytes
/// (capped at the threshold). Above it the window follows
/// `W_max + C (t - K)^3` in MSS units, never shrinking on an ACK.
pub fn cubic_on_ack(state: &mut TcpConnectionState, cfg: &TcpConfig, now: f64, acked_bytes: u64) {
    let acked = acked_bytes.min(state.in_flight);
    state.in_flight -= acked;
    let mut left = acked;
    while left > 0 {
        let Some(front) = state.segments.front_mut() else { break };
        if front.1 <= left {
            left -= front.1;
            let sample = now - front.0;
            state.rtt_estimate = 0.875 * state.rtt_estimate + 0.125 * sample;
            state.segments.pop_front();
        } else {
            front.1 -= left;
            left = 0;
        }
    }
    state.rto_deadline = if state.in_flight > 0 {
        Some(now + state.rto(cfg))
    } else {
        None
    };

    let mss = state.mss as f64;
    if state.in_slow_start && state.cwnd < state.ssthresh {
        state.cwnd = (state.cwnd + acked as f64).min(state.ssthresh);
        if state.cwnd >= state.ssthresh {
            state.in_slow_start = false;
        }
    } else {
        state.in_slow_start = false;
        if state.epoch_start.is_none() {
            state.epoch_start = Some(now);
            state.epoch_cwnd = state.cwnd;
            state.w_max = state.w_max.max(state.cwnd);
        }
        let start = state.epoch_start.unwrap_or(now);
        let k = state.cubic_k(cfg);
        let t = now - start;
        let target = state.w_max + cfg.cubic_c * (t - k).powi(3) * mss;
        state.cwnd = state.cwnd.max(target);
    }
    state.cwnd = state.cwnd.min(cfg.advertised_window_bytes as f64);
}

/// Multiplicative decrease on a loss at `now`.
pub fn cubic_on_loss(state: &mut TcpConnectionState, cfg: &TcpConfig, now: f64) {
    let mss = state.mss as f64;
    state.w_max = state.cwnd;
    state.cwnd = ((1.0 - cfg.cubic_beta) * state.cwnd).max(mss);
    state.ssthresh = state.cwnd.max(2.0 * mss);
    state.epoch_start = Some(now);
    state.epoch_cwnd = state.cwnd;
    state.in_slow_start = false;
}

/// Reacts to a detected loss at most once per round trip, as fast recovery
/// does for a burst of losses from one window. Returns whether the window
/// was reduced.
pub fn congestion_event(state: &mut TcpConnectionState, cfg: &TcpConfig, now: f64) -> bool {
    if state.recovery_until.is_some_and(|t| now < t) {
        return false;
    }
    cubic_on_loss(state, cfg, now);
    state.recovery_until = Some(now + state.rtt_estimate);
    true
}

/// Bytes the transport may hand to the MAC now.
pub fn sendable_bytes(
    state: &TcpConnectionState,
    cfg: &TcpConfig,
    protocol: TransportProtocol,
    buffered_bytes: u64,
) -> u64 {
    match protocol {
        TransportProtocol::Udp => buffered_bytes,
        TransportProtocol::Tcp => {
            let window = state.cwnd.min(cfg.advertised_window_bytes as f64).floor() as u64;
            buffered_bytes.min(window.saturating_sub(state.in_flight))
        }
    }
}
