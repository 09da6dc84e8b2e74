//! Ring, 2D-torus and PQ-grid neighbor maps.

use serde::{Deserialize, Serialize};

use super::RankId;
use crate::error::{MeshError, Result};

/// Logical arrangement of the ranks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Ring,
    /// `p` rows by `q` columns with wraparound in both dimensions.
    Torus2d { p: usize, q: usize },
    /// `p` rows by `q` columns without link structure; rank `r` sits at
    /// `(r div q, r mod q)`.
    PqGrid { p: usize, q: usize },
}

/// Neighbors of one rank under a topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeighborMap {
    Ring { prev: RankId, next: RankId },
    Torus(TorusNeighbors),
    Grid { p: usize, q: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TorusNeighbors {
    pub up: RankId,
    pub down: RankId,
    pub left: RankId,
    pub right: RankId,
}

impl Topology {
    /// Check the dimensions against the communicator size.
    pub fn validate(&self, world_size: usize) -> Result<()> {
        match *self {
            Topology::Ring => Ok(()),
            Topology::Torus2d { p, q } | Topology::PqGrid { p, q } => {
                if p * q != world_size {
                    Err(MeshError::Config(format!(
                        "{p}x{q} grid does not cover {world_size} ranks"
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn neighbors(&self, rank: RankId, world_size: usize) -> Result<NeighborMap> {
        self.validate(world_size)?;
        if rank.0 >= world_size {
            return Err(MeshError::Config(format!(
                "rank {rank} outside world of size {world_size}"
            )));
        }
        Ok(match *self {
            Topology::Ring => NeighborMap::Ring {
                prev: RankId((rank.0 + world_size - 1) % world_size),
                next: RankId((rank.0 + 1) % world_size),
            },
            Topology::Torus2d { p, q } => NeighborMap::Torus(torus_neighbors(rank, p, q)),
            Topology::PqGrid { q, .. } => NeighborMap::Grid {
                p: rank.0 / q,
                q: rank.0 % q,
            },
        })
    }
}

/// Wraparound neighbors of `rank` on a `p x q` torus.
pub fn torus_neighbors(rank: RankId, p: usize, q: usize) -> TorusNeighbors {
    let (row, col) = (rank.0 / q, rank.0 % q);
    let at = |r: usize, c: usize| RankId(r * q + c);
    TorusNeighbors {
        up: at((row + p - 1) % p, col),
        down: at((row + 1) % p, col),
        left: at(row, (col + q - 1) % q),
        right: at(row, (col + 1) % q),
    }
}

/// Ring neighbors of `rank` in a world of `world_size`.
pub fn ring_neighbors(rank: RankId, world_size: usize) -> (RankId, RankId) {
    (
        RankId((rank.0 + world_size - 1) % world_size),
        RankId((rank.0 + 1) % world_size),
    )
}
