//! Hexagonal cluster layout and UE drops.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TopologyConfig;
use crate::codebook::Direction;
use crate::error::Result;
use crate::phy::{mix, Position};
use crate::{CellId, UeId};

const TOPOLOGY_STREAM: u64 = 0x746f_706f;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSite {
    pub id: CellId,
    pub position: Position,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UeRecord {
    pub id: UeId,
    pub serving_cell: CellId,
    pub position: Position,
    /// The direction this UE's traffic flows in.
    pub role: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTopology {
    pub cells: Vec<CellSite>,
    /// Grouped by cell; within a cell DL UEs precede UL UEs.
    pub ues: Vec<UeRecord>,
    pub master_cell_id: CellId,
}

impl ClusterTopology {
    pub fn cell_positions(&self) -> Vec<Position> {
        self.cells.iter().map(|c| c.position).collect()
    }

    pub fn ue_positions(&self) -> Vec<Position> {
        self.ues.iter().map(|u| u.position).collect()
    }
}

/// Axial hex coordinates spiralling outward from the origin: centre, then
/// each ring in turn.
fn hex_spiral(n: usize) -> Vec<(i64, i64)> {
    const DIRS: [(i64, i64); 6] = [(1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1)];
    let mut out = vec![(0, 0)];
    let mut ring = 1i64;
    while out.len() < n {
        let (mut q, mut r) = (DIRS[4].0 * ring, DIRS[4].1 * ring);
        for d in DIRS {
            for _ in 0..ring {
                out.push((q, r));
                q += d.0;
                r += d.1;
            }
        }
        ring += 1;
    }
    out.truncate(n);
    out
}

/// BS positions for `n` cells at inter-site distance `isd`.
pub fn hex_cell_positions(n: usize, isd: f64) -> Vec<Position> {
    hex_spiral(n)
        .into_iter()
        .map(|(q, r)| Position::new(isd * (q as f64 + r as f64 / 2.0), isd * 3f64.sqrt() / 2.0 * r as f64))
        .collect()
}

/// Places cells on the hexagonal grid and drops every UE uniformly over the
/// annulus between `min_distance_m` and `isd_m / 2` around its BS.
pub fn place_drop(config: &TopologyConfig, seed: u64) -> Result<ClusterTopology> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, TOPOLOGY_STREAM]));
    let sites = hex_cell_positions(config.n_cells, config.isd_m);
    let radius = config.isd_m / 2.0;
    let inner = config.min_distance_m;
    let mut ues = Vec::with_capacity(config.n_cells * config.ues_per_cell());
    for (c, bs) in sites.iter().enumerate() {
        for k in 0..config.ues_per_cell() {
            // inverse CDF of the radius under area-uniform placement
            let u: f64 = rng.random();
            let d = (inner * inner + u * (radius * radius - inner * inner)).sqrt();
            let a = rng.random::<f64>() * 2.0 * PI;
            ues.push(UeRecord {
                id: ues.len(),
                serving_cell: c,
                position: Position::new(bs.x + d * a.cos(), bs.y + d * a.sin()),
                role: if k < config.dl_ues_per_cell { Direction::Dl } else { Direction::Ul },
            });
        }
    }
    Ok(ClusterTopology {
        cells: sites
            .into_iter()
            .enumerate()
            .map(|(id, position)| CellSite { id, position })
            .collect(),
        ues,
        master_cell_id: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn spiral_positions_are_distinct_and_neighbours_at_isd() {
        let p = hex_cell_positions(21, 500.0);
        assert_eq!(p.len(), 21);
        for i in 1..7 {
            assert_relative_eq!(p[0].distance(&p[i]), 500.0, epsilon = 1e-9);
        }
        for i in 0..21 {
            for j in i + 1..21 {
                assert!(p[i].distance(&p[j]) > 499.0);
            }
        }
        for i in 7..19 {
            let d = p[0].distance(&p[i]);
            assert!(d > 800.0 && d < 1001.0, "{d}");
        }
    }

    #[test]
    fn drop_counts_roles_and_determinism() {
        let cfg = TopologyConfig::default();
        let t = place_drop(&cfg, 4).unwrap();
        assert_eq!(t.cells.len(), 21);
        assert_eq!(t.ues.len(), 21 * 20);
        assert_eq!(t.ues.iter().filter(|u| u.role == Direction::Dl).count(), 210);
        assert_eq!(t, place_drop(&cfg, 4).unwrap());
        assert_ne!(t, place_drop(&cfg, 5).unwrap());
        for u in &t.ues {
            let d = u.position.distance(&t.cells[u.serving_cell].position);
            assert!((35.0..=250.0 + 1e-9).contains(&d));
        }
    }
}
