//! System-level simulator for dynamic TDD cell clusters.
//!
//! Cells pick radio frame configurations (RFCs, ten-slot DL/UL patterns) from
//! a shared sliding codebook. A master cell aligns the requested patterns to a
//! common RFC so that cross-link interference (BS-BS and UE-UE) is avoided.
//! Uncoordinated and ideal-UL-cancellation baselines run on the same engine.
//!
//! The crate is organised bottom-up:
//!
//! - [`codebook`]: patterns, cyclic shifts, sub-codebooks and index encoding.
//! - [`coordination`]: slave-side RFC selection and the master-side round.
//! - [`xn`]: the inter-cell request/response wire format.
//! - [`phy`]: link gains, SINR, EESM and the MCS/BLER tables.
//! - [`mac`]: proportional-fair scheduling and Chase-combining HARQ.
//! - [`traffic`]: FTP3 arrivals, buffers, CUBIC TCP and UDP release.
//! - [`engine`]: topology, configuration and the slot loop.
//! - [`metrics`]: ECDFs, throughput ledgers and the run report.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codebook;
pub mod coordination;
pub mod engine;
pub mod error;
pub mod mac;
pub mod metrics;
pub mod oracle;
pub mod phy;
pub mod traffic;
pub mod xn;

pub use codebook::{
    cyclic_shift, misalignment, CodebookConfig, Direction, IndexBits, Ratio, RfcCodebook,
    RfcPattern, SubCodebook, SubCodebookSpec,
};
pub use coordination::{
    coordinate_round, elect_common_rfc, select_rfc_for_cell, CoordinationPolicy,
    CoordinationRound, RfcAssignment, RfcRequest, TrafficSnapshot,
};
pub use engine::{place_drop, run, ClusterTopology, SimConfig};
pub use error::{Error, Result};
pub use metrics::MetricsReport;

/// Identifier of a cell inside one cluster.
pub type CellId = usize;
/// Global identifier of a UE inside one cluster.
pub type UeId = usize;

/// Version tag embedded in every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
