//! Distributed transpose-add `C = B + A^T` over the diagonal block
//! distribution.
//!
//! Under the diagonal distribution with a square grid, every block a rank
//! owns transposes onto blocks of one single partner rank, so the exchange
//! runs over a static pairwise connection table. Each element of `C` is
//! produced by exactly one addition, making the distributed result bitwise
//! equal to a dense single-rank computation.

use serde::{Deserialize, Serialize};

use super::CommMode;
use crate::blockmat::{
    block_transpose_add, generate_streams, uniform_block, Block, BlockMatrix, DataType,
    Distribution, Grid, Scalar,
};
use crate::error::{MeshError, Result};
use crate::transport::{Communicator, RankId};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PtransConfig {
    /// Global matrix width in elements.
    pub n: usize,
    pub block_size: usize,
    /// Grid dimension; the grid is `grid_dim x grid_dim` (P = Q).
    pub grid_dim: usize,
    pub mode: CommMode,
    pub repetitions: usize,
    pub dtype: DataType,
    pub seed: u64,
    /// Gather the dense result to rank 0 for equivalence checks.
    pub collect_result: bool,
}

impl Default for PtransConfig {
    fn default() -> Self {
        PtransConfig {
            n: 512,
            block_size: 64,
            grid_dim: 1,
            mode: CommMode::Direct,
            repetitions: 2,
            dtype: DataType::Float32,
            seed: 42,
            collect_result: false,
        }
    }
}

impl PtransConfig {
    pub fn validate(&self, world_size: usize) -> Result<()> {
        if self.grid_dim * self.grid_dim != world_size {
            return Err(MeshError::Config(format!(
                "grid {0}x{0} does not cover {world_size} ranks (P = Q is required)",
                self.grid_dim
            )));
        }
        if self.n == 0 || self.block_size == 0 || self.n % self.block_size != 0 {
            return Err(MeshError::Config(format!(
                "matrix width {} must be a positive multiple of block size {}",
                self.n, self.block_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PtransRankOutcome {
    pub per_rep_seconds: Vec<f64>,
    pub local_max_residual: f64,
    /// Bytes this rank sent inside the first timed repetition.
    pub timed_bytes_sent: u64,
    pub timed_messages_sent: u64,
    /// Dense row-major result, little-endian, on rank 0 when collection is
    /// on.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub collected_dense: Option<Vec<u8>>,
}

pub fn run_ptrans(comm: &dyn Communicator, cfg: &PtransConfig) -> Result<PtransRankOutcome> {
    match cfg.dtype {
        DataType::Float32 => run_ptrans_typed::<f32>(comm, cfg),
        DataType::Float64 => run_ptrans_typed::<f64>(comm, cfg),
    }
}

fn block_tag(nblocks: usize, br: usize, bc: usize) -> u32 {
    (br * nblocks + bc) as u32
}

const TAG_GATHER_BASE: u32 = 1 << 24;

fn run_ptrans_typed<S: Scalar>(
    comm: &dyn Communicator,
    cfg: &PtransConfig,
) -> Result<PtransRankOutcome> {
    cfg.validate(comm.world_size())?;
    let grid = Grid::new(cfg.grid_dim, cfg.grid_dim);
    let me = grid.coord_of(comm.rank().0);
    let gen = |stream: u64| -> Result<BlockMatrix<S>> {
        let mut m = BlockMatrix::empty(cfg.n, cfg.block_size, grid, Distribution::Diagonal)?;
        for (br, bc) in m.owned_coords(me) {
            m.insert(br, bc, uniform_block(cfg.seed, stream, br, bc, cfg.block_size));
        }
        Ok(m)
    };
    let a = gen(generate_streams::PTRANS_A)?;
    let b = gen(generate_streams::PTRANS_B)?;
    run_ptrans_on(comm, cfg, &a, &b)
}

/// Core exchange-and-add on prepared matrices (tests inject custom inputs).
pub(crate) fn run_ptrans_on<S: Scalar>(
    comm: &dyn Communicator,
    cfg: &PtransConfig,
    a: &BlockMatrix<S>,
    b: &BlockMatrix<S>,
) -> Result<PtransRankOutcome> {
    let grid = a.grid;
    let me = grid.coord_of(comm.rank().0);
    let nb = a.nblocks();
    let owned = a.owned_coords(me);

    let mut per_rep_seconds = Vec::with_capacity(cfg.repetitions);
    let mut timed_bytes_sent = 0;
    let mut timed_messages_sent = 0;
    let mut c = BlockMatrix::<S>::empty(a.n, a.block_size, grid, a.dist)?;
    for rep in 0..cfg.repetitions.max(1) {
        c = BlockMatrix::empty(a.n, a.block_size, grid, a.dist)?;
        let before = comm.stats();
        let (elapsed, ()) = super::measure(comm, || {
            // Exchange: a block of A travels to the owner of its transpose
            // target. The diagonal distribution pairs each rank with exactly
            // one partner.
            for &(bi, bj) in &owned {
                let dest = RankId(a.owner_rank(bj, bi));
                let payload = a.block(bi, bj).unwrap().to_bytes();
                match cfg.mode {
                    CommMode::Direct => comm.send(dest, block_tag(nb, bi, bj), &payload)?,
                    CommMode::Staged => {
                        // Device to host staging copy before the exchange.
                        let host = payload.clone();
                        comm.send(dest, block_tag(nb, bi, bj), &host)?;
                    }
                }
            }
            // Compute: every owned C block adds the transposed incoming
            // block of A onto the local block of B.
            for &(br, bc) in &owned {
                let src = RankId(a.owner_rank(bc, br));
                let bytes = comm.recv(src, block_tag(nb, bc, br))?;
                let bytes = match cfg.mode {
                    CommMode::Direct => bytes,
                    CommMode::Staged => bytes.clone(), // host to device copy
                };
                let a_in: Block<S> = Block::from_bytes(a.block_size, &bytes)?;
                let out = block_transpose_add(&a_in, b.block(br, bc).unwrap())?;
                c.insert(br, bc, out);
            }
            Ok(())
        })?;
        per_rep_seconds.push(elapsed);
        if rep == 0 {
            let delta = comm.stats() - before;
            timed_bytes_sent = delta.bytes_sent;
            timed_messages_sent = delta.messages_sent;
        }
    }

    let outcome_residual = validate_ptrans(comm, cfg, a, b, &c)?;

    let collected_dense = if cfg.collect_result {
        Some(gather_dense(comm, &c)?)
    } else {
        None
    };

    Ok(PtransRankOutcome {
        per_rep_seconds,
        local_max_residual: outcome_residual,
        timed_bytes_sent,
        timed_messages_sent,
        collected_dense,
    })
}

/// Max over locally owned elements of `|C - (B + A^T)|`. The reference value
/// for element `(i, j)` needs block `(bc, br)` of A, which may live on the
/// partner rank; it is re-exchanged outside the timed region.
fn validate_ptrans<S: Scalar>(
    comm: &dyn Communicator,
    _cfg: &PtransConfig,
    a: &BlockMatrix<S>,
    b: &BlockMatrix<S>,
    c: &BlockMatrix<S>,
) -> Result<f64> {
    let grid = a.grid;
    let me = grid.coord_of(comm.rank().0);
    let nb = a.nblocks();
    // Non-timed re-exchange of the untransposed blocks for the reference
    // computation.
    for (&(bi, bj), block) in a.stored() {
        let dest = RankId(a.owner_rank(bj, bi));
        comm.send(dest, TAG_GATHER_BASE + block_tag(nb, bi, bj), &block.to_bytes())?;
    }
    let mut max_residual = 0.0f64;
    for &(br, bc) in &c.owned_coords(me) {
        let src = RankId(a.owner_rank(bc, br));
        let bytes = comm.recv(src, TAG_GATHER_BASE + block_tag(nb, bc, br))?;
        let a_in: Block<S> = Block::from_bytes(a.block_size, &bytes)?;
        let b_blk = b.block(br, bc).unwrap();
        let c_blk = c.block(br, bc).unwrap();
        for r in 0..a.block_size {
            for col in 0..a.block_size {
                let reference = b_blk[(r, col)] + a_in[(col, r)];
                let diff = (c_blk[(r, col)] - reference).abs().to_f64();
                max_residual = max_residual.max(diff);
            }
        }
    }
    Ok(max_residual)
}

/// Send every owned block of `m` to rank 0 and assemble the dense matrix
/// there (little-endian bytes). Other ranks return an empty vector.
fn gather_dense<S: Scalar>(comm: &dyn Communicator, m: &BlockMatrix<S>) -> Result<Vec<u8>> {
    let nb = m.nblocks();
    for (&(br, bc), block) in m.stored() {
        comm.send(
            RankId(0),
            TAG_GATHER_BASE * 2 + block_tag(nb, br, bc),
            &block.to_bytes(),
        )?;
    }
    if comm.rank().0 != 0 {
        return Ok(Vec::new());
    }
    let mut full = BlockMatrix::<S>::empty(m.n, m.block_size, m.grid, m.dist)?;
    for br in 0..nb {
        for bc in 0..nb {
            let src = RankId(m.owner_rank(br, bc));
            let bytes = comm.recv(src, TAG_GATHER_BASE * 2 + block_tag(nb, br, bc))?;
            full.insert(br, bc, Block::from_bytes(m.block_size, &bytes)?);
        }
    }
    let dense = full.to_dense()?;
    let mut out = Vec::with_capacity(dense.len() * S::BYTES);
    for v in dense {
        v.write_le(&mut out);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PtransMetrics {
    pub best_seconds: f64,
    /// One addition per element: n^2 operations.
    pub flops_per_s: f64,
    pub max_residual: f64,
    pub validation_ok: bool,
    /// Predicted single-block time on a channel link.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_block_seconds: Option<f64>,
    /// Global memory bandwidth needed to stay network-bound.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_memory_bandwidth_bytes_per_s: Option<f64>,
    /// Network-bound transpose-add rate over all ranks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_peak_flops_per_s: Option<f64>,
}

pub fn aggregate(
    cfg: &PtransConfig,
    link: Option<&crate::transport::VirtualLink>,
    outcomes: &[PtransRankOutcome],
) -> PtransMetrics {
    let per_rank: Vec<Vec<f64>> = outcomes.iter().map(|o| o.per_rep_seconds.clone()).collect();
    let slowest = super::slowest_per_repetition(&per_rank);
    let (_, best) = super::best_repetition(&slowest);
    let max_residual = outcomes
        .iter()
        .map(|o| o.local_max_residual)
        .fold(0.0, f64::max);
    let channel = match link {
        Some(crate::transport::VirtualLink::Channel(c)) => Some(c),
        _ => None,
    };
    let elem = cfg.dtype.bytes() as u64;
    PtransMetrics {
        best_seconds: best,
        flops_per_s: (cfg.n as f64) * (cfg.n as f64) / best,
        max_residual,
        validation_ok: max_residual == 0.0,
        model_block_seconds: channel.map(|c| {
            crate::netmodel::model_ptrans_block_time(
                cfg.block_size as u64,
                (c.pair_width_bytes() / elem).max(1),
                c.frequency_hz,
                c.latency_s,
            )
        }),
        model_memory_bandwidth_bytes_per_s: channel
            .map(|c| crate::netmodel::model_ptrans_memory_bandwidth(c.replications, c)),
        model_peak_flops_per_s: channel.map(|c| {
            crate::netmodel::model_ptrans_peak_flops(
                outcomes.len() as u64,
                c.replications,
                elem,
                c,
            )
        }),
    }
}

/// Dense single-rank oracle: `C[i][j] = B[i][j] + A[j][i]` on the assembled
/// matrices.
pub fn dense_oracle<S: Scalar>(n: usize, block_size: usize, seed: u64) -> Result<Vec<S>> {
    let grid = Grid::new(1, 1);
    let origin = grid.coord_of(0);
    let mut a = BlockMatrix::<S>::empty(n, block_size, grid, Distribution::Diagonal)?;
    let mut b = BlockMatrix::<S>::empty(n, block_size, grid, Distribution::Diagonal)?;
    for (br, bc) in a.owned_coords(origin) {
        a.insert(br, bc, uniform_block(seed, generate_streams::PTRANS_A, br, bc, block_size));
        b.insert(br, bc, uniform_block(seed, generate_streams::PTRANS_B, br, bc, block_size));
    }
    let da = a.to_dense()?;
    let db = b.to_dense()?;
    let mut out = vec![S::default(); n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = db[i * n + j] + da[j * n + i];
        }
    }
    Ok(out)
}
