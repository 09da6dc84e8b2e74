//! Distributed block-matrix data model shared by the transpose, LU and GEMM
//! benchmarks.
//!
//! A square `n x n` matrix is split into `block_size x block_size` blocks.
//! Blocks are assigned to ranks arranged in a `P x Q` grid by an owner
//! function; each rank stores exactly the blocks it owns. All element
//! generation is keyed by `(seed, block coordinates)` so the same matrix is
//! produced for any rank count.

mod generate;
mod kernels;

pub use generate::streams as generate_streams;
pub use generate::{block_seed, generate_matrix, rhs_all_ones_product, uniform_block, SplitMix64};
pub use kernels::{
    block_lu_decompose, block_matmul_add, block_matmul_sub, block_top_update,
    block_transpose_add, BlockLeftUpdate,
};
pub use kernels::block_left_update;

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::ops::{Add, Div, Index, IndexMut, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{MeshError, Result};

/// Matrix element type. Implemented for `f32` and `f64`.
pub trait Scalar:
    Copy
    + Default
    + PartialOrd
    + PartialEq
    + Send
    + Sync
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + 'static
{
    const EPSILON: f64;
    const BYTES: usize;
    const NAME: &'static str;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn abs(self) -> Self;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const EPSILON: f64 = f32::EPSILON as f64;
    const BYTES: usize = 4;
    const NAME: &'static str = "float32";
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn abs(self) -> Self {
        f32::abs(self)
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Scalar for f64 {
    const EPSILON: f64 = f64::EPSILON;
    const BYTES: usize = 8;
    const NAME: &'static str = "float64";
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// Element type selector carried through configs and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataType {
    Float32,
    Float64,
}

impl DataType {
    pub fn bytes(self) -> usize {
        match self {
            DataType::Float32 => 4,
            DataType::Float64 => 8,
        }
    }
}

impl std::fmt::Display for DataType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DataType::Float32 => write!(f, "float32"),
            DataType::Float64 => write!(f, "float64"),
        }
    }
}

impl std::str::FromStr for DataType {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "float" | "float32" | "f32" => Ok(DataType::Float32),
            "double" | "float64" | "f64" => Ok(DataType::Float64),
            other => Err(format!("unknown data type {other:?}, expected float|double")),
        }
    }
}

/// Position of a rank in the `P x Q` process grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridCoord {
    pub p: usize,
    pub q: usize,
}

/// A `P x Q` logical rank grid. Rank index `r` sits at
/// `(p, q) = (r div Q, r mod Q)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub p: usize,
    pub q: usize,
}

impl Grid {
    pub fn new(p: usize, q: usize) -> Self {
        Grid { p, q }
    }

    pub fn size(&self) -> usize {
        self.p * self.q
    }

    pub fn coord_of(&self, rank: usize) -> GridCoord {
        GridCoord {
            p: rank / self.q,
            q: rank % self.q,
        }
    }

    pub fn rank_of(&self, c: GridCoord) -> usize {
        c.p * self.q + c.q
    }
}

/// Block-to-rank assignment rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    /// Plain block-cyclic: `(row mod P, col mod Q)`.
    BlockCyclic,
    /// Block-cyclic with a per-row shift: `(row mod P, (row + col) mod Q)`.
    /// Pairs transpose partners on static point-to-point connections.
    Diagonal,
}

/// Owner of block `(row, col)` under the diagonal distribution.
pub fn owner_diagonal(block_row: usize, block_col: usize, p: usize, q: usize) -> GridCoord {
    GridCoord {
        p: block_row % p,
        q: (block_row + block_col) % q,
    }
}

/// Owner of block `(row, col)` under the plain block-cyclic distribution.
pub fn owner_pq(block_row: usize, block_col: usize, p: usize, q: usize) -> GridCoord {
    GridCoord {
        p: block_row % p,
        q: block_col % q,
    }
}

impl Distribution {
    pub fn owner(&self, block_row: usize, block_col: usize, grid: Grid) -> GridCoord {
        match self {
            Distribution::BlockCyclic => owner_pq(block_row, block_col, grid.p, grid.q),
            Distribution::Diagonal => owner_diagonal(block_row, block_col, grid.p, grid.q),
        }
    }
}

/// Dense square tile stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block<S> {
    size: usize,
    data: Vec<S>,
}

impl<S: Scalar> Block<S> {
    pub fn zero(size: usize) -> Self {
        Block {
            size,
            data: vec![S::default(); size * size],
        }
    }

    pub fn identity(size: usize) -> Self {
        let mut b = Block::zero(size);
        for i in 0..size {
            b[(i, i)] = S::from_f64(1.0);
        }
        b
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let size = rows.len();
        let mut b = Block::zero(size);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), size, "block must be square");
            for (j, &v) in row.iter().enumerate() {
                b[(i, j)] = S::from_f64(v);
            }
        }
        b
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.size..(i + 1) * self.size]
    }

    /// Out-of-place transpose.
    pub fn transposed(&self) -> Block<S> {
        let mut out = Block::zero(self.size);
        for i in 0..self.size {
            for j in 0..self.size {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    /// Serialize to little-endian bytes for transport payloads.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * S::BYTES);
        for &v in &self.data {
            v.write_le(&mut out);
        }
        out
    }

    /// Rebuild a block of edge `size` from transport bytes.
    pub fn from_bytes(size: usize, bytes: &[u8]) -> Result<Block<S>> {
        if bytes.len() != size * size * S::BYTES {
            return Err(MeshError::Validation(format!(
                "block payload of {} bytes does not match a {size}x{size} {} block",
                bytes.len(),
                S::NAME
            )));
        }
        let data = bytes
            .chunks_exact(S::BYTES)
            .map(|c| S::read_le(c))
            .collect();
        Ok(Block { size, data })
    }

    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .map(|v| v.abs().to_f64())
            .fold(0.0, f64::max)
    }
}

impl<S: Scalar> Index<(usize, usize)> for Block<S> {
    type Output = S;
    fn index(&self, (i, j): (usize, usize)) -> &S {
        &self.data[i * self.size + j]
    }
}

impl<S: Scalar> IndexMut<(usize, usize)> for Block<S> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut S {
        &mut self.data[i * self.size + j]
    }
}

/// The blocks of one matrix that live on a single rank, plus the global
/// layout needed to locate every other block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix<S> {
    pub n: usize,
    pub block_size: usize,
    pub grid: Grid,
    pub dist: Distribution,
    blocks: BTreeMap<(usize, usize), Block<S>>,
}

impl<S: Scalar> BlockMatrix<S> {
    pub fn empty(n: usize, block_size: usize, grid: Grid, dist: Distribution) -> Result<Self> {
        if n == 0 || block_size == 0 || n % block_size != 0 {
            return Err(MeshError::Config(format!(
                "matrix width {n} must be a positive multiple of block size {block_size}"
            )));
        }
        Ok(BlockMatrix {
            n,
            block_size,
            grid,
            dist,
            blocks: BTreeMap::new(),
        })
    }

    pub fn nblocks(&self) -> usize {
        self.n / self.block_size
    }

    pub fn owner(&self, block_row: usize, block_col: usize) -> GridCoord {
        self.dist.owner(block_row, block_col, self.grid)
    }

    pub fn owner_rank(&self, block_row: usize, block_col: usize) -> usize {
        self.grid.rank_of(self.owner(block_row, block_col))
    }

    /// Block coordinates owned by `coord`, in row-major order.
    pub fn owned_coords(&self, coord: GridCoord) -> Vec<(usize, usize)> {
        let nb = self.nblocks();
        let mut out = Vec::new();
        for br in 0..nb {
            for bc in 0..nb {
                if self.owner(br, bc) == coord {
                    out.push((br, bc));
                }
            }
        }
        out
    }

    pub fn insert(&mut self, block_row: usize, block_col: usize, block: Block<S>) {
        debug_assert_eq!(block.size(), self.block_size);
        self.blocks.insert((block_row, block_col), block);
    }

    pub fn block(&self, block_row: usize, block_col: usize) -> Option<&Block<S>> {
        self.blocks.get(&(block_row, block_col))
    }

    pub fn block_mut(&mut self, block_row: usize, block_col: usize) -> Option<&mut Block<S>> {
        self.blocks.get_mut(&(block_row, block_col))
    }

    pub fn take(&mut self, block_row: usize, block_col: usize) -> Option<Block<S>> {
        self.blocks.remove(&(block_row, block_col))
    }

    pub fn stored(&self) -> impl Iterator<Item = (&(usize, usize), &Block<S>)> {
        self.blocks.iter()
    }

    pub fn stored_count(&self) -> usize {
        self.blocks.len()
    }

    /// Assemble a dense row-major matrix. Every block must be present.
    pub fn to_dense(&self) -> Result<Vec<S>> {
        let nb = self.nblocks();
        let bs = self.block_size;
        let mut out = vec![S::default(); self.n * self.n];
        for br in 0..nb {
            for bc in 0..nb {
                let block = self.blocks.get(&(br, bc)).ok_or_else(|| {
                    MeshError::Validation(format!("block ({br},{bc}) missing from gather"))
                })?;
                for r in 0..bs {
                    let dst = (br * bs + r) * self.n + bc * bs;
                    out[dst..dst + bs].copy_from_slice(block.row(r));
                }
            }
        }
        Ok(out)
    }

    /// Split a dense row-major matrix into blocks (used by single-rank
    /// oracles and tests).
    pub fn from_dense(
        n: usize,
        block_size: usize,
        grid: Grid,
        dist: Distribution,
        dense: &[S],
    ) -> Result<Self> {
        let mut m = BlockMatrix::empty(n, block_size, grid, dist)?;
        assert_eq!(dense.len(), n * n);
        let nb = m.nblocks();
        for br in 0..nb {
            for bc in 0..nb {
                let mut block = Block::zero(block_size);
                for r in 0..block_size {
                    let src = (br * block_size + r) * n + bc * block_size;
                    block.as_mut_slice()[r * block_size..(r + 1) * block_size]
                        .copy_from_slice(&dense[src..src + block_size]);
                }
                m.insert(br, bc, block);
            }
        }
        Ok(m)
    }

    /// Debug dump: header (n, block_size, P, Q, dtype) followed by the
    /// stored blocks with their coordinates, all little-endian.
    pub fn write_dump<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(b"HMBM")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        w.write_all(&(self.block_size as u64).to_le_bytes())?;
        w.write_all(&(self.grid.p as u32).to_le_bytes())?;
        w.write_all(&(self.grid.q as u32).to_le_bytes())?;
        w.write_all(&[S::BYTES as u8, matches!(self.dist, Distribution::Diagonal) as u8])?;
        w.write_all(&(self.blocks.len() as u64).to_le_bytes())?;
        for (&(br, bc), block) in &self.blocks {
            w.write_all(&(br as u64).to_le_bytes())?;
            w.write_all(&(bc as u64).to_le_bytes())?;
            w.write_all(&block.to_bytes())?;
        }
        Ok(())
    }

    pub fn read_dump<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"HMBM" {
            return Err(MeshError::Validation("bad dump magic".into()));
        }
        let mut buf8 = [0u8; 8];
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4)?;
        if u32::from_le_bytes(buf4) != 1 {
            return Err(MeshError::Validation("unknown dump version".into()));
        }
        r.read_exact(&mut buf8)?;
        let n = u64::from_le_bytes(buf8) as usize;
        r.read_exact(&mut buf8)?;
        let block_size = u64::from_le_bytes(buf8) as usize;
        r.read_exact(&mut buf4)?;
        let p = u32::from_le_bytes(buf4) as usize;
        r.read_exact(&mut buf4)?;
        let q = u32::from_le_bytes(buf4) as usize;
        let mut flags = [0u8; 2];
        r.read_exact(&mut flags)?;
        if flags[0] as usize != S::BYTES {
            return Err(MeshError::Validation(format!(
                "dump holds {}-byte elements, expected {}",
                flags[0],
                S::BYTES
            )));
        }
        let dist = if flags[1] == 1 {
            Distribution::Diagonal
        } else {
            Distribution::BlockCyclic
        };
        let mut m = BlockMatrix::empty(n, block_size, Grid::new(p, q), dist)?;
        r.read_exact(&mut buf8)?;
        let count = u64::from_le_bytes(buf8);
        let mut payload = vec![0u8; block_size * block_size * S::BYTES];
        for _ in 0..count {
            r.read_exact(&mut buf8)?;
            let br = u64::from_le_bytes(buf8) as usize;
            r.read_exact(&mut buf8)?;
            let bc = u64::from_le_bytes(buf8) as usize;
            r.read_exact(&mut payload)?;
            m.insert(br, bc, Block::from_bytes(block_size, &payload)?);
        }
        Ok(m)
    }
}
