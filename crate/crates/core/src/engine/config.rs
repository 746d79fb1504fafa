//! Simulation configuration and scenario files.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codebook::{CodebookConfig, RfcCodebook};
use crate::coordination::CoordinationPolicy;
use crate::error::{config_err, Error, Result};
use crate::mac::MacConfig;
use crate::phy::{ChannelConfig, McsTable, PowerConfig};
use crate::traffic::{FtpFlowConfig, TcpConfig, TransportProtocol};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologyConfig {
    pub n_cells: usize,
    /// Inter-site distance in meters.
    pub isd_m: f64,
    pub dl_ues_per_cell: usize,
    pub ul_ues_per_cell: usize,
    /// Minimum UE to serving BS distance.
    pub min_distance_m: f64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            n_cells: 21,
            isd_m: 500.0,
            dl_ues_per_cell: 10,
            ul_ues_per_cell: 10,
            min_distance_m: 35.0,
        }
    }
}

impl TopologyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cells == 0 || self.n_cells > u16::MAX as usize {
            return config_err("topology: n_cells must be in 1..=65535");
        }
        if self.dl_ues_per_cell + self.ul_ues_per_cell == 0 {
            return config_err("topology: at least one UE per cell is required");
        }
        if !(self.isd_m > 0.0 && self.min_distance_m >= 0.0 && self.min_distance_m < self.isd_m / 2.0) {
            return config_err("topology: need isd_m > 0 and 0 <= min_distance_m < isd_m / 2");
        }
        Ok(())
    }

    pub fn ues_per_cell(&self) -> usize {
        self.dl_ues_per_cell + self.ul_ues_per_cell
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficConfig {
    pub dl: FtpFlowConfig,
    pub ul: FtpFlowConfig,
    /// Per-UE MAC buffer limit. UDP arrivals beyond it are dropped; TCP
    /// releases beyond it are lost and held back for retransmission.
    pub link_buffer_cap_bits: u64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig {
            dl: FtpFlowConfig {
                payload_bits: 4000,
                arrival_rate: 500.0,
            },
            ul: FtpFlowConfig {
                payload_bits: 4000,
                arrival_rate: 250.0,
            },
            link_buffer_cap_bits: 4_000_000,
        }
    }
}

impl TrafficConfig {
    pub fn validate(&self) -> Result<()> {
        self.dl.validate()?;
        self.ul.validate()?;
        if !self.dl.payload_bits.is_multiple_of(8) || !self.ul.payload_bits.is_multiple_of(8) {
            return config_err("traffic: payload_bits must be whole bytes");
        }
        if self.link_buffer_cap_bits < self.dl.payload_bits.max(self.ul.payload_bits) {
            return config_err("traffic: link_buffer_cap_bits is smaller than one packet");
        }
        Ok(())
    }
}

/// Everything a run depends on. Scenario files are TOML renderings of this
/// structure; omitted keys take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub policy: CoordinationPolicy,
    pub protocol: TransportProtocol,
    pub seed: u64,
    pub duration_slots: u64,
    /// Leading slots excluded from throughput, SINR, CLI and CWND statistics.
    pub warmup_slots: u64,
    pub slot_duration_s: f64,
    /// Misalignment tolerated without reassignment.
    pub psi: u32,
    /// DL-fraction threshold of the RFC selection.
    pub beta: f64,
    pub rfc_update_period_frames: u64,
    /// Frames between a coordination round and the use of its result (0 or 1).
    pub coordination_delay_frames: u64,
    /// Forces every cell to request this codebook index.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_rfc: Option<usize>,
    pub codebook: CodebookConfig,
    pub topology: TopologyConfig,
    pub traffic: TrafficConfig,
    pub tcp: TcpConfig,
    pub mac: MacConfig,
    pub mcs: McsTable,
    pub power: PowerConfig,
    pub channel: ChannelConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            policy: CoordinationPolicy::Fuc,
            protocol: TransportProtocol::Udp,
            seed: 1,
            duration_slots: 10_000,
            warmup_slots: 1000,
            slot_duration_s: 1e-3,
            psi: 3,
            beta: 0.5,
            rfc_update_period_frames: 1,
            coordination_delay_frames: 0,
            fixed_rfc: None,
            codebook: CodebookConfig::default(),
            topology: TopologyConfig::default(),
            traffic: TrafficConfig::default(),
            tcp: TcpConfig::default(),
            mac: MacConfig::default(),
            mcs: McsTable::default(),
            power: PowerConfig::default(),
            channel: ChannelConfig::default(),
        }
    }
}

impl SimConfig {
    /// Parses a scenario document. Errors name the offending key and line.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("scenario: {e}")))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.codebook.validate()?;
        self.topology.validate()?;
        self.traffic.validate()?;
        self.tcp.validate()?;
        self.mac.validate()?;
        self.mcs.validate()?;
        self.power.validate()?;
        self.channel.validate()?;
        if self.warmup_slots > self.duration_slots {
            return config_err(format!(
                "warmup_slots ({}) exceeds duration_slots ({})",
                self.warmup_slots, self.duration_slots
            ));
        }
        if !(self.slot_duration_s > 0.0 && self.slot_duration_s.is_finite()) {
            return config_err("slot_duration_s must be positive");
        }
        if self.psi as usize > self.codebook.frame_length {
            return config_err(format!(
                "psi ({}) exceeds the frame length ({})",
                self.psi, self.codebook.frame_length
            ));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return config_err(format!("beta ({}) outside [0, 1]", self.beta));
        }
        if self.rfc_update_period_frames == 0 {
            return config_err("rfc_update_period_frames must be at least 1");
        }
        if self.coordination_delay_frames > 1 {
            return config_err("coordination_delay_frames must be 0 or 1");
        }
        if let Some(idx) = self.fixed_rfc {
            let cb = RfcCodebook::build(&self.codebook)?;
            if idx >= cb.len() {
                return config_err(format!("fixed_rfc {idx} outside codebook of {}", cb.len()));
            }
        }
        Ok(())
    }

    /// Identifies the scenario independently of the policy and seed under
    /// which it is run: SHA-256 over the canonical JSON of the remaining
    /// fields.
    pub fn scenario_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("policy");
            map.remove("seed");
        }
        let canonical = serde_json::to_string(&v).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn window_slots(&self) -> u64 {
        self.duration_slots - self.warmup_slots.min(self.duration_slots)
    }
}
