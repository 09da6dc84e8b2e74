//! Distributed RandomAccess (GUPS) with replicated random-number lanes.
//!
//! The global table of `2^m` 64-bit words is split evenly across ranks.
//! Every rank scans the full global update sequence through `K` replicated
//! LFSR lanes feeding a shift register; a lane only inserts a number whose
//! target address falls into the rank's table slice and stalls while its
//! insertion slot is occupied. Remote addresses are discarded, so the union
//! of the updates applied across all ranks is exactly the global sequence.

use serde::{Deserialize, Serialize};

use crate::error::{MeshError, Result};
use crate::transport::Communicator;

/// Generator polynomial of the 64-bit LFSR.
pub const LFSR_POLY: u64 = 0x7;

/// Value of the sequence at position zero.
pub const LFSR_START: u64 = 1;

/// One step of the period-(2^64 - 1) LFSR.
#[inline]
pub fn lfsr_step(s: u64) -> u64 {
    (s << 1) ^ (((s >> 63) & 1) * LFSR_POLY)
}

type BitMatrix = [u64; 64];

/// Matrix-vector product over GF(2): columns of `m` selected by the set bits
/// of `v`.
fn mat_vec(m: &BitMatrix, v: u64) -> u64 {
    let mut out = 0;
    let mut bits = v;
    while bits != 0 {
        let j = bits.trailing_zeros() as usize;
        out ^= m[j];
        bits &= bits - 1;
    }
    out
}

fn mat_mul(a: &BitMatrix, b: &BitMatrix) -> BitMatrix {
    let mut out = [0u64; 64];
    for j in 0..64 {
        out[j] = mat_vec(a, b[j]);
    }
    out
}

/// Sequence value at `position`, in O(log position) via exponentiation of
/// the step matrix over GF(2).
pub fn lfsr_skip(position: u64) -> u64 {
    // Column j of the step matrix is step(e_j).
    let mut base: BitMatrix = [0u64; 64];
    for (j, col) in base.iter_mut().enumerate() {
        *col = lfsr_step(1u64 << j);
    }
    let mut value = LFSR_START;
    let mut exp = position;
    while exp != 0 {
        if exp & 1 == 1 {
            value = mat_vec(&base, value);
        }
        base = mat_mul(&base, &base);
        exp >>= 1;
    }
    value
}

/// RandomAccess configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RaConfig {
    /// Global table holds `2^table_size_log` 64-bit words.
    pub table_size_log: u32,
    /// `2^rng_count_log` LFSR lanes per rank.
    pub rng_count_log: u32,
    /// Slots between lane insertion points in the shift register.
    pub rng_distance: usize,
    /// Total updates = `update_factor * table_size`.
    pub update_factor: u64,
    pub repetitions: usize,
    /// Lockstep cycles are converted to virtual seconds at this clock.
    pub virtual_clock_hz: f64,
    /// Return the final local table slices for equivalence checks.
    pub collect_table: bool,
}

impl Default for RaConfig {
    fn default() -> Self {
        RaConfig {
            table_size_log: 16,
            rng_count_log: 2,
            rng_distance: 2,
            update_factor: 4,
            repetitions: 1,
            virtual_clock_hz: 100e6,
            collect_table: false,
        }
    }
}

impl RaConfig {
    pub fn table_size(&self) -> u64 {
        1u64 << self.table_size_log
    }

    pub fn total_updates(&self) -> u64 {
        self.update_factor * self.table_size()
    }

    pub fn lanes(&self) -> usize {
        1usize << self.rng_count_log
    }

    pub fn validate(&self, world_size: usize) -> Result<()> {
        if !world_size.is_power_of_two() {
            return Err(MeshError::Config(format!(
                "RandomAccess needs a power-of-two rank count, got {world_size}"
            )));
        }
        if (world_size as u64) > self.table_size() {
            return Err(MeshError::Config(
                "more ranks than table words".into(),
            ));
        }
        if self.rng_distance == 0 {
            return Err(MeshError::Config("rng_distance must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-lane accounting of the sequencer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaneStats {
    pub applied: u64,
    pub discarded: u64,
    pub assigned: u64,
}

struct Lane {
    state: u64,
    remaining: u64,
    stats: LaneStats,
}

/// Lockstep shift-register sequencer over the rank-local table slice.
///
/// Returns the per-lane statistics and the number of shift cycles taken.
pub fn sequencer_apply(
    table: &mut [u64],
    local_start: u64,
    cfg: &RaConfig,
) -> (Vec<LaneStats>, u64) {
    let lanes_n = cfg.lanes();
    let total = cfg.total_updates();
    let mask = cfg.table_size() - 1;
    let local_end = local_start + table.len() as u64;
    let mut lanes: Vec<Lane> = (0..lanes_n as u64)
        .map(|i| {
            let begin = i * total / lanes_n as u64;
            let end = (i + 1) * total / lanes_n as u64;
            Lane {
                state: lfsr_skip(begin),
                remaining: end - begin,
                stats: LaneStats {
                    assigned: end - begin,
                    ..LaneStats::default()
                },
            }
        })
        .collect();
    let mut register: Vec<Option<u64>> = vec![None; lanes_n * cfg.rng_distance];
    let mut cycles = 0u64;
    loop {
        let exhausted = lanes.iter().all(|l| l.remaining == 0);
        let drained = register.iter().all(Option::is_none);
        if exhausted && drained {
            break;
        }
        cycles += 1;
        // The head of the register feeds the update stage: at most one
        // update per cycle.
        if let Some(value) = register[0].take() {
            let index = value & mask;
            table[(index - local_start) as usize] ^= value;
        }
        register.rotate_left(1);
        *register.last_mut().unwrap() = None;
        for (i, lane) in lanes.iter_mut().enumerate() {
            if lane.remaining == 0 {
                continue;
            }
            let value = lfsr_step(lane.state);
            let index = value & mask;
            if index < local_start || index >= local_end {
                // Remote address: the filter drops it and the lane advances.
                lane.state = value;
                lane.remaining -= 1;
                lane.stats.discarded += 1;
                continue;
            }
            let slot = i * cfg.rng_distance;
            if register[slot].is_none() {
                register[slot] = Some(value);
                lane.state = value;
                lane.remaining -= 1;
                lane.stats.applied += 1;
            }
            // Occupied slot: the lane stalls without advancing its LFSR.
        }
    }
    (lanes.into_iter().map(|l| l.stats).collect(), cycles)
}

/// Plain filtered scan: the scalar reference loop restricted to a local
/// range. Oracle for the sequencer and the engine of the verification pass.
pub fn filtered_scan(table: &mut [u64], local_start: u64, cfg: &RaConfig) -> u64 {
    let mask = cfg.table_size() - 1;
    let local_end = local_start + table.len() as u64;
    let mut value = LFSR_START;
    let mut applied = 0;
    for _ in 0..cfg.total_updates() {
        value = lfsr_step(value);
        let index = value & mask;
        if index >= local_start && index < local_end {
            table[(index - local_start) as usize] ^= value;
            applied += 1;
        }
    }
    applied
}

/// Count table words differing from the `table[i] = i` initial state after
/// re-applying the full sequence.
pub fn verify_local(table: &mut [u64], local_start: u64, cfg: &RaConfig) -> u64 {
    filtered_scan(table, local_start, cfg);
    table
        .iter()
        .enumerate()
        .filter(|&(i, &v)| v != local_start + i as u64)
        .count() as u64
}

/// Per-rank outcome of a RandomAccess run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RaRankOutcome {
    pub per_rep_seconds: Vec<f64>,
    pub applied_updates: u64,
    pub lane_stats: Vec<LaneStats>,
    pub mismatches: u64,
    pub local_words: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<u64>>,
}

/// Run the benchmark on this rank: initialize the local slice to
/// `table[i] = i`, scan the full sequence through the sequencer, verify by
/// re-application.
pub fn run_randomaccess(comm: &dyn Communicator, cfg: &RaConfig) -> Result<RaRankOutcome> {
    cfg.validate(comm.world_size())?;
    let world = comm.world_size() as u64;
    let local_words = cfg.table_size() / world;
    let local_start = comm.rank().0 as u64 * local_words;

    let mut per_rep_seconds = Vec::with_capacity(cfg.repetitions);
    let mut table = Vec::new();
    let mut lane_stats = Vec::new();
    for _ in 0..cfg.repetitions.max(1) {
        table = (local_start..local_start + local_words).collect();
        let (elapsed, (stats, cycles)) = super::measure(comm, || {
            let out = sequencer_apply(&mut table, local_start, cfg);
            Ok(out)
        })?;
        if comm.virtual_clock().is_ok() {
            // One shift cycle per clock tick.
            comm.advance(cycles as f64 / cfg.virtual_clock_hz);
            per_rep_seconds.push(elapsed + cycles as f64 / cfg.virtual_clock_hz);
        } else {
            per_rep_seconds.push(elapsed);
        }
        lane_stats = stats;
    }
    let applied_updates: u64 = lane_stats.iter().map(|s| s.applied).sum();

    // Verification re-applies the sequence; XOR cancellation restores the
    // initial pattern wherever every update was applied exactly once.
    let mut check = table.clone();
    let mismatches = verify_local(&mut check, local_start, cfg);

    Ok(RaRankOutcome {
        per_rep_seconds,
        applied_updates,
        lane_stats,
        mismatches,
        local_words,
        table: cfg.collect_table.then_some(table),
    })
}

/// Final metrics assembled from all ranks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RaMetrics {
    pub gups_updates_per_s: f64,
    pub error_ratio: f64,
    pub error_ok: bool,
    pub total_updates_count: u64,
    pub per_rank_applied_count: Vec<u64>,
    pub best_seconds: f64,
}

/// Error ratio at or below which a run passes.
pub const ERROR_RATIO_LIMIT: f64 = 0.01;

pub fn aggregate(cfg: &RaConfig, outcomes: &[RaRankOutcome]) -> RaMetrics {
    let per_rank: Vec<Vec<f64>> = outcomes.iter().map(|o| o.per_rep_seconds.clone()).collect();
    let slowest = super::slowest_per_repetition(&per_rank);
    let (_, best) = super::best_repetition(&slowest);
    let mismatches: u64 = outcomes.iter().map(|o| o.mismatches).sum();
    let error_ratio = mismatches as f64 / cfg.table_size() as f64;
    RaMetrics {
        gups_updates_per_s: cfg.total_updates() as f64 / best,
        error_ratio,
        error_ok: error_ratio <= ERROR_RATIO_LIMIT,
        total_updates_count: cfg.total_updates(),
        per_rank_applied_count: outcomes.iter().map(|o| o.applied_updates).collect(),
        best_seconds: best,
    }
}
