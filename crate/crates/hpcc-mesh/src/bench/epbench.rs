//! Embarrassingly parallel STREAM triad and GEMM.
//!
//! No inter-rank data moves during the timed region; the ranks only share
//! the barrier-synchronized timing protocol and the metric aggregation. On
//! the virtual-time backend the kernels charge their logical clock from a
//! nominal per-rank rate, so multi-rank aggregation stays meaningful.

use serde::{Deserialize, Serialize};

use crate::blockmat::{
    block_matmul_add, uniform_block, Block, BlockMatrix, DataType, Distribution, Grid, GridCoord,
    Scalar, SplitMix64,
};
use crate::blockmat::block_seed;
use crate::error::{MeshError, Result};
use crate::transport::Communicator;

/// STREAM triad: `a[i] = b[i] + scalar * c[i]` per rank.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamConfig {
    pub array_length: usize,
    pub scalar: f32,
    pub repetitions: usize,
    /// Nominal per-rank memory bandwidth used to charge virtual time.
    pub virtual_mem_bandwidth: f64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            array_length: 1 << 20,
            scalar: 3.0,
            repetitions: 3,
            virtual_mem_bandwidth: 19.2e9,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamRankOutcome {
    pub per_rep_seconds: Vec<f64>,
    pub validation_ok: bool,
    pub timed_messages_sent: u64,
}

pub fn run_stream_triad(comm: &dyn Communicator, cfg: &StreamConfig) -> Result<StreamRankOutcome> {
    if cfg.array_length == 0 {
        return Err(MeshError::Config("array_length must be at least 1".into()));
    }
    let n = cfg.array_length;
    let s = cfg.scalar;
    let mut rng = SplitMix64::new(0x5742_EA11 ^ comm.rank().0 as u64);
    let b: Vec<f32> = (0..n).map(|_| rng.next_f64() as f32).collect();
    let c: Vec<f32> = (0..n).map(|_| rng.next_f64() as f32).collect();
    let mut a = vec![0.0f32; n];
    let virtual_cost = 3.0 * n as f64 * 4.0 / cfg.virtual_mem_bandwidth;

    let before = comm.stats();
    let mut per_rep_seconds = Vec::with_capacity(cfg.repetitions);
    for _ in 0..cfg.repetitions.max(1) {
        let (elapsed, ()) = super::measure(comm, || {
            for i in 0..n {
                a[i] = b[i] + s * c[i];
            }
            Ok(())
        })?;
        if comm.virtual_clock().is_ok() {
            comm.advance(virtual_cost);
            per_rep_seconds.push(elapsed + virtual_cost);
        } else {
            per_rep_seconds.push(elapsed);
        }
    }
    let timed_messages_sent = (comm.stats() - before).messages_sent;

    let mut check = SplitMix64::new(0x600D_C0DE);
    let validation_ok = (0..64.min(n)).all(|_| {
        let i = (check.next_u64() % n as u64) as usize;
        a[i] == b[i] + s * c[i]
    });
    Ok(StreamRankOutcome {
        per_rep_seconds,
        validation_ok,
        timed_messages_sent,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamMetrics {
    pub aggregate_bytes_per_s: f64,
    pub best_seconds: f64,
    pub validation_ok: bool,
}

pub fn aggregate_stream(
    world: usize,
    cfg: &StreamConfig,
    outcomes: &[StreamRankOutcome],
) -> StreamMetrics {
    let per_rank: Vec<Vec<f64>> = outcomes.iter().map(|o| o.per_rep_seconds.clone()).collect();
    let slowest = super::slowest_per_repetition(&per_rank);
    let (_, best) = super::best_repetition(&slowest);
    // Triad touches three arrays per element.
    let bytes = 3.0 * cfg.array_length as f64 * 4.0;
    StreamMetrics {
        aggregate_bytes_per_s: world as f64 * bytes / best,
        best_seconds: best,
        validation_ok: outcomes.iter().all(|o| o.validation_ok),
    }
}

/// Per-rank GEMM: `C <- C + A * B` on square matrices of `matrix_width`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GemmConfig {
    pub matrix_width: usize,
    pub block_size: usize,
    pub register_block: usize,
    pub dtype: DataType,
    pub seed: u64,
    pub repetitions: usize,
    /// Nominal per-rank compute rate used to charge virtual time.
    pub virtual_flops: f64,
}

impl Default for GemmConfig {
    fn default() -> Self {
        GemmConfig {
            matrix_width: 256,
            block_size: 64,
            register_block: 8,
            dtype: DataType::Float32,
            seed: 1,
            repetitions: 1,
            virtual_flops: 102.4e9,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GemmRankOutcome {
    pub per_rep_seconds: Vec<f64>,
    pub sample_max_rel_error: f64,
    pub timed_messages_sent: u64,
}

pub fn run_gemm(comm: &dyn Communicator, cfg: &GemmConfig) -> Result<GemmRankOutcome> {
    match cfg.dtype {
        DataType::Float32 => run_gemm_typed::<f32>(comm, cfg),
        DataType::Float64 => run_gemm_typed::<f64>(comm, cfg),
    }
}

fn run_gemm_typed<S: Scalar>(comm: &dyn Communicator, cfg: &GemmConfig) -> Result<GemmRankOutcome> {
    let (w, bs) = (cfg.matrix_width, cfg.block_size);
    if w == 0 || bs == 0 || w % bs != 0 {
        return Err(MeshError::Config(format!(
            "matrix width {w} must be a positive multiple of block size {bs}"
        )));
    }
    // Every rank works on its own data set.
    let rank_seed = block_seed(cfg.seed, 0xEA, comm.rank().0 as u64, 0);
    let grid = Grid::new(1, 1);
    let single = GridCoord { p: 0, q: 0 };
    let gen = |stream: u64| -> Result<BlockMatrix<S>> {
        let mut m = BlockMatrix::empty(w, bs, grid, Distribution::BlockCyclic)?;
        for (br, bc) in m.owned_coords(single) {
            m.insert(br, bc, uniform_block::<S>(rank_seed, stream, br, bc, bs));
        }
        Ok(m)
    };
    use crate::blockmat::generate_streams as streams;
    let a = gen(streams::GEMM_A)?;
    let b = gen(streams::GEMM_B)?;
    let nb = a.nblocks();
    let flops = 2.0 * (w as f64).powi(3);
    let virtual_cost = flops / cfg.virtual_flops;

    let before = comm.stats();
    let mut per_rep_seconds = Vec::with_capacity(cfg.repetitions);
    let mut c = gen(streams::GEMM_C)?;
    for _ in 0..cfg.repetitions.max(1) {
        c = gen(streams::GEMM_C)?;
        let (elapsed, ()) = super::measure(comm, || {
            for bi in 0..nb {
                for bj in 0..nb {
                    let mut acc = c.take(bi, bj).unwrap();
                    for bk in 0..nb {
                        block_matmul_add(
                            &mut acc,
                            a.block(bi, bk).unwrap(),
                            b.block(bk, bj).unwrap(),
                            cfg.register_block,
                        )?;
                    }
                    c.insert(bi, bj, acc);
                }
            }
            Ok(())
        })?;
        if comm.virtual_clock().is_ok() {
            comm.advance(virtual_cost);
            per_rep_seconds.push(elapsed + virtual_cost);
        } else {
            per_rep_seconds.push(elapsed);
        }
    }
    let timed_messages_sent = (comm.stats() - before).messages_sent;

    // Validate one sampled block against a naive triple loop.
    let c0 = gen(streams::GEMM_C)?;
    let sample_max_rel_error = sample_block_error(&a, &b, &c0, &c, 0, 0);

    Ok(GemmRankOutcome {
        per_rep_seconds,
        sample_max_rel_error,
        timed_messages_sent,
    })
}

fn sample_block_error<S: Scalar>(
    a: &BlockMatrix<S>,
    b: &BlockMatrix<S>,
    c0: &BlockMatrix<S>,
    c: &BlockMatrix<S>,
    bi: usize,
    bj: usize,
) -> f64 {
    let bs = a.block_size;
    let nb = a.nblocks();
    let got: &Block<S> = c.block(bi, bj).unwrap();
    let mut max_rel: f64 = 0.0;
    for r in 0..bs {
        for col in 0..bs {
            let mut acc = c0.block(bi, bj).unwrap()[(r, col)].to_f64();
            for bk in 0..nb {
                let ab = a.block(bi, bk).unwrap();
                let bb = b.block(bk, bj).unwrap();
                for k in 0..bs {
                    acc += ab[(r, k)].to_f64() * bb[(k, col)].to_f64();
                }
            }
            let rel = (got[(r, col)].to_f64() - acc).abs() / acc.abs().max(1.0);
            max_rel = max_rel.max(rel);
        }
    }
    max_rel
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GemmMetrics {
    pub aggregate_flops_per_s: f64,
    pub best_seconds: f64,
    pub sample_max_rel_error: f64,
    pub validation_ok: bool,
}

/// Tolerance on the sampled-block comparison with the naive oracle.
pub const GEMM_SAMPLE_TOLERANCE: f64 = 1e-5;

pub fn aggregate_gemm(
    world: usize,
    cfg: &GemmConfig,
    outcomes: &[GemmRankOutcome],
) -> GemmMetrics {
    let per_rank: Vec<Vec<f64>> = outcomes.iter().map(|o| o.per_rep_seconds.clone()).collect();
    let slowest = super::slowest_per_repetition(&per_rank);
    let (_, best) = super::best_repetition(&slowest);
    let flops = 2.0 * (cfg.matrix_width as f64).powi(3);
    let err = outcomes
        .iter()
        .map(|o| o.sample_max_rel_error)
        .fold(0.0, f64::max);
    GemmMetrics {
        aggregate_flops_per_s: world as f64 * flops / best,
        best_seconds: best,
        sample_max_rel_error: err,
        validation_ok: err <= GEMM_SAMPLE_TOLERANCE,
    }
}
