//! Deterministic matrix generation.
//!
//! Every block is generated from a stream keyed by `(seed, stream id, block
//! row, block col)`, so ranks can regenerate any block locally and the
//! assembled matrix is identical for every grid size.

use super::{Block, BlockMatrix, Distribution, Grid, GridCoord, Scalar};
use crate::error::Result;

/// 64-bit counter-based generator (SplitMix64).
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Stream key for the block at `(block_row, block_col)` of matrix `stream`.
pub fn block_seed(seed: u64, stream: u64, block_row: u64, block_col: u64) -> u64 {
    mix64(mix64(mix64(mix64(seed) ^ stream) ^ block_row) ^ block_col)
}

/// Raw uniform [0, 1) block, before any diagonal adjustment.
pub fn uniform_block<S: Scalar>(
    seed: u64,
    stream: u64,
    block_row: usize,
    block_col: usize,
    block_size: usize,
) -> Block<S> {
    let mut rng = SplitMix64::new(block_seed(seed, stream, block_row as u64, block_col as u64));
    let mut block = Block::zero(block_size);
    for v in block.as_mut_slice() {
        *v = S::from_f64(rng.next_f64());
    }
    block
}

/// Stream ids for the matrices a benchmark draws from one seed.
pub mod streams {
    pub const PTRANS_A: u64 = 1;
    pub const PTRANS_B: u64 = 2;
    pub const HPL_A: u64 = 3;
    pub const GEMM_A: u64 = 4;
    pub const GEMM_B: u64 = 5;
    pub const GEMM_C: u64 = 6;
}

/// Off-diagonal row sums of every row in block row `br`, accumulated in f64
/// over ascending columns. Regenerates the raw blocks of the row, so any
/// rank computes the same values.
fn block_row_offdiag_sums<S: Scalar>(
    seed: u64,
    stream: u64,
    br: usize,
    n: usize,
    block_size: usize,
) -> Vec<f64> {
    let mut sums = vec![0.0; block_size];
    for bc in 0..n / block_size {
        let raw = uniform_block::<S>(seed, stream, br, bc, block_size);
        for (r, sum) in sums.iter_mut().enumerate() {
            let i = br * block_size + r;
            for c in 0..block_size {
                let j = bc * block_size + c;
                if j != i {
                    *sum += raw[(r, c)].to_f64();
                }
            }
        }
    }
    sums
}

/// The diagonally dominant matrix used by the LU benchmark: off-diagonal
/// entries uniform in [0, 1), each diagonal entry one plus its off-diagonal
/// row sum. Only the blocks owned by `coord` are materialized.
pub fn generate_matrix<S: Scalar>(
    n: usize,
    block_size: usize,
    grid: Grid,
    dist: Distribution,
    seed: u64,
    coord: GridCoord,
) -> Result<BlockMatrix<S>> {
    let mut m = BlockMatrix::empty(n, block_size, grid, dist)?;
    for (br, bc) in m.owned_coords(coord) {
        let mut block = uniform_block::<S>(seed, streams::HPL_A, br, bc, block_size);
        if br == bc {
            let sums = block_row_offdiag_sums::<S>(seed, streams::HPL_A, br, n, block_size);
            for (r, sum) in sums.iter().enumerate() {
                block[(r, r)] = S::from_f64(1.0 + sum);
            }
        }
        m.insert(br, bc, block);
    }
    Ok(m)
}

/// Right-hand side `b = A * 1`, i.e. the exact row sums, making the all-ones
/// vector the solution of `A x = b`.
pub fn rhs_all_ones_product<S: Scalar>(n: usize, block_size: usize, seed: u64) -> Vec<S> {
    let mut out = Vec::with_capacity(n);
    for br in 0..n / block_size {
        let sums = block_row_offdiag_sums::<S>(seed, streams::HPL_A, br, n, block_size);
        for sum in sums {
            // diagonal (1 + sum) plus the off-diagonal row entries.
            out.push(S::from_f64(S::from_f64(1.0 + sum).to_f64() + sum));
        }
    }
    out
}
