//! The benchmark kernels. Each takes a [`Communicator`] and a config, runs
//! the repetition protocol on its rank and returns a per-rank outcome; the
//! harness combines outcomes into a report.
//!
//! Timing protocol shared by all benchmarks: ranks synchronize with a
//! barrier before every timed repetition, each rank measures its own elapsed
//! time, the repetition is scored by the slowest rank and derived metrics
//! come from the best repetition.

pub mod beff;
pub mod epbench;
pub mod hpl;
pub mod ptrans;
pub mod randomaccess;

use serde::{Deserialize, Serialize};

use crate::transport::Communicator;

/// Which communication path a benchmark models: `Staged` emulates the
/// device-host-network-host-device sequence, `Direct` the point-to-point
/// channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommMode {
    Staged,
    Direct,
}

impl std::fmt::Display for CommMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CommMode::Staged => write!(f, "staged"),
            CommMode::Direct => write!(f, "direct"),
        }
    }
}

impl std::str::FromStr for CommMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "staged" => Ok(CommMode::Staged),
            "direct" => Ok(CommMode::Direct),
            other => Err(format!("unknown mode {other:?}, expected staged|direct")),
        }
    }
}

/// Slowest rank per repetition: element-wise maximum over the ranks'
/// per-repetition times.
pub fn slowest_per_repetition(per_rank: &[Vec<f64>]) -> Vec<f64> {
    let reps = per_rank.iter().map(Vec::len).min().unwrap_or(0);
    (0..reps)
        .map(|rep| {
            per_rank
                .iter()
                .map(|times| times[rep])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Index and value of the best (fastest) repetition.
pub fn best_repetition(slowest: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, &t) in slowest.iter().enumerate() {
        if t < best.1 {
            best = (i, t);
        }
    }
    best
}

pub(crate) fn measure<T>(
    comm: &dyn Communicator,
    mut body: impl FnMut() -> crate::Result<T>,
) -> crate::Result<(f64, T)> {
    comm.barrier()?;
    let start = comm.clock_seconds();
    let out = body()?;
    Ok((comm.clock_seconds() - start, out))
}
