//! Distributed blocked right-looking LU decomposition without pivoting on a
//! square 2D torus, followed by an untimed reference solve and residual
//! verification.
//!
//! Blocks are spread block-cyclically over the `T x T` grid. Iteration `k`
//! factorizes the diagonal block, streams the packed block rightward along
//! its torus row and downward along its column, updates the top row and left
//! column of the trailing matrix (left blocks travel transposed) and applies
//! one matrix-multiplication update to every inner block. With overlap on,
//! the next iteration's communication phase starts as soon as the first
//! inner block row and column are updated; overlap changes the schedule
//! only, never the data each kernel sees, so factors are bitwise identical
//! either way.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::CommMode;
use crate::blockmat::{
    block_left_update, block_lu_decompose, block_matmul_sub, block_top_update, generate_matrix,
    owner_pq, rhs_all_ones_product, Block, BlockMatrix, DataType, Distribution, Grid, GridCoord,
    Scalar,
};
use crate::error::{MeshError, Result};
use crate::transport::{Communicator, RankId};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HplConfig {
    /// Global matrix width in elements.
    pub n: usize,
    /// Blocks have edge `2^block_size_log`.
    pub block_size_log: u32,
    /// Matmul micro-tiles have edge `2^register_block_log`.
    pub register_block_log: u32,
    /// The torus is `torus_dim x torus_dim`.
    pub torus_dim: usize,
    pub mode: CommMode,
    pub overlap: bool,
    pub repetitions: usize,
    pub dtype: DataType,
    pub seed: u64,
    /// Gather the dense packed factors to rank 0 for equivalence checks.
    pub collect_factors: bool,
}

impl Default for HplConfig {
    fn default() -> Self {
        HplConfig {
            n: 512,
            block_size_log: 6,
            register_block_log: 3,
            torus_dim: 1,
            mode: CommMode::Direct,
            overlap: true,
            repetitions: 1,
            dtype: DataType::Float32,
            seed: 42,
            collect_factors: false,
        }
    }
}

impl HplConfig {
    pub fn block_size(&self) -> usize {
        1 << self.block_size_log
    }

    pub fn register_block(&self) -> usize {
        1 << self.register_block_log
    }

    pub fn nblocks(&self) -> usize {
        self.n / self.block_size()
    }

    pub fn validate(&self, world_size: usize) -> Result<()> {
        if self.torus_dim * self.torus_dim != world_size {
            return Err(MeshError::Config(format!(
                "torus {0}x{0} does not cover {world_size} ranks",
                self.torus_dim
            )));
        }
        if self.n == 0 || self.n % self.block_size() != 0 {
            return Err(MeshError::Config(format!(
                "matrix width {} must be a positive multiple of block size {}",
                self.n,
                self.block_size()
            )));
        }
        if self.block_size() % self.register_block() != 0 {
            return Err(MeshError::Config(
                "register block must divide block size".into(),
            ));
        }
        if self.nblocks() >= 1 << 14 {
            return Err(MeshError::Config("too many blocks for the tag space".into()));
        }
        Ok(())
    }
}

const KIND_LU: u32 = 0;
const KIND_TOP: u32 = 1;
const KIND_LEFT: u32 = 2;
const KIND_GATHER: u32 = 3;

fn tag(kind: u32, k: usize, idx: usize) -> u32 {
    (kind << 28) | ((k as u32) << 14) | idx as u32
}

/// Per-rank task of one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HplTask {
    Lu { k: usize },
    Top { k: usize, j: usize },
    Left { k: usize, i: usize },
    Inner { k: usize, i: usize, j: usize },
}

/// Static description of iteration `k`: who factorizes, how the packed
/// block travels, and which block operations each rank performs.
#[derive(Debug, Clone)]
pub struct IterationPlan {
    pub k: usize,
    pub lu_owner: GridCoord,
    /// Neighbor hops of the packed LU block rightward along the torus row.
    pub row_route: Vec<(usize, usize)>,
    /// Neighbor hops downward along the torus column.
    pub col_route: Vec<(usize, usize)>,
    /// Task list per rank.
    pub tasks: Vec<Vec<HplTask>>,
}

pub fn plan_iteration(k: usize, nblocks: usize, torus_dim: usize) -> IterationPlan {
    let t = torus_dim;
    let grid = Grid::new(t, t);
    let lu_owner = GridCoord { p: k % t, q: k % t };
    let mut row_route = Vec::new();
    let mut col_route = Vec::new();
    let mut cur = lu_owner;
    for _ in 1..t {
        let next = GridCoord {
            p: cur.p,
            q: (cur.q + 1) % t,
        };
        row_route.push((grid.rank_of(cur), grid.rank_of(next)));
        cur = next;
    }
    cur = lu_owner;
    for _ in 1..t {
        let next = GridCoord {
            p: (cur.p + 1) % t,
            q: cur.q,
        };
        col_route.push((grid.rank_of(cur), grid.rank_of(next)));
        cur = next;
    }
    let mut tasks = vec![Vec::new(); t * t];
    for rank in 0..t * t {
        let coord = grid.coord_of(rank);
        let list = &mut tasks[rank];
        if coord == lu_owner {
            list.push(HplTask::Lu { k });
        }
        for j in k + 1..nblocks {
            if owner_pq(k, j, t, t) == coord {
                list.push(HplTask::Top { k, j });
            }
        }
        for i in k + 1..nblocks {
            if owner_pq(i, k, t, t) == coord {
                list.push(HplTask::Left { k, i });
            }
        }
        for i in k + 1..nblocks {
            for j in k + 1..nblocks {
                if owner_pq(i, j, t, t) == coord {
                    list.push(HplTask::Inner { k, i, j });
                }
            }
        }
    }
    IterationPlan {
        k,
        lu_owner,
        row_route,
        col_route,
        tasks,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HplCounters {
    pub lu_calls: u64,
    pub lu_block_sends: u64,
    pub top_block_sends: u64,
    pub left_block_sends: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HplRankOutcome {
    pub per_rep_seconds: Vec<f64>,
    pub counters: HplCounters,
    /// Accumulated (communication, update) seconds per iteration of the last
    /// repetition.
    pub phase_seconds: Vec<(f64, f64)>,
    /// Solve results, present on rank 0 only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solution_inf_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solve_ok: Option<bool>,
    /// Dense packed factors (little-endian), rank 0 with collection on.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factors_dense: Option<Vec<u8>>,
}

pub fn run_hpl(comm: &dyn Communicator, cfg: &HplConfig) -> Result<HplRankOutcome> {
    match cfg.dtype {
        DataType::Float32 => run_hpl_typed::<f32>(comm, cfg),
        DataType::Float64 => run_hpl_typed::<f64>(comm, cfg),
    }
}

enum InnerSubset {
    /// First inner block row and column: the blocks the next communication
    /// phase depends on.
    Dark,
    Light,
    All,
}

struct RankCtx<'a, S> {
    comm: &'a dyn Communicator,
    cfg: &'a HplConfig,
    grid: Grid,
    me: GridCoord,
    nb: usize,
    bs: usize,
    a: BlockMatrix<S>,
    tops: HashMap<(usize, usize), Block<S>>,
    lefts: HashMap<(usize, usize), Block<S>>,
    counters: HplCounters,
    phase: Vec<(f64, f64)>,
}

impl<'a, S: Scalar> RankCtx<'a, S> {
    fn rank_at(&self, p: usize, q: usize) -> RankId {
        RankId(self.grid.rank_of(GridCoord { p, q }))
    }

    fn factorize(&mut self) -> Result<()> {
        let nb = self.nb;
        if self.cfg.overlap {
            self.comm_phase(0)?;
            for k in 0..nb {
                self.inner_phase(k, InnerSubset::Dark)?;
                if k + 1 < nb {
                    self.comm_phase(k + 1)?;
                }
                self.inner_phase(k, InnerSubset::Light)?;
                self.cleanup(k);
            }
        } else {
            for k in 0..nb {
                self.comm_phase(k)?;
                self.inner_phase(k, InnerSubset::All)?;
                self.cleanup(k);
                self.comm.barrier()?;
            }
        }
        Ok(())
    }

    /// Factorize the diagonal block, move it along the torus, update and
    /// move the top and left blocks of iteration `k`.
    fn comm_phase(&mut self, k: usize) -> Result<()> {
        let started = self.comm.clock_seconds();
        let t = self.cfg.torus_dim;
        let me = self.me;
        let owner = GridCoord { p: k % t, q: k % t };
        let right = self.rank_at(me.p, (me.q + 1) % t);
        let down = self.rank_at((me.p + 1) % t, me.q);
        let left_n = self.rank_at(me.p, (me.q + t - 1) % t);
        let up_n = self.rank_at((me.p + t - 1) % t, me.q);
        let in_row = me.p == owner.p;
        let in_col = me.q == owner.q;

        let lu: Option<Block<S>> = if me == owner {
            let block = self
                .a
                .block_mut(k, k)
                .ok_or_else(|| MeshError::Config(format!("diagonal block {k} not owned")))?;
            block_lu_decompose(block)
                .map_err(|e| MeshError::Numerical(format!("iteration {k}: {e}")))?;
            self.counters.lu_calls += 1;
            let bytes = block.to_bytes();
            let lu = block.clone();
            if t > 1 {
                match self.cfg.mode {
                    CommMode::Direct => {
                        self.comm.send(right, tag(KIND_LU, k, 0), &bytes)?;
                        self.comm.send(down, tag(KIND_LU, k, 0), &bytes)?;
                        self.counters.lu_block_sends += 2;
                    }
                    CommMode::Staged => {
                        for d in 1..t {
                            self.comm.send(
                                self.rank_at(owner.p, (owner.q + d) % t),
                                tag(KIND_LU, k, 0),
                                &bytes,
                            )?;
                            self.comm.send(
                                self.rank_at((owner.p + d) % t, owner.q),
                                tag(KIND_LU, k, 0),
                                &bytes,
                            )?;
                            self.counters.lu_block_sends += 2;
                        }
                    }
                }
            }
            Some(lu)
        } else if in_row {
            let bytes = match self.cfg.mode {
                CommMode::Direct => {
                    let bytes = self.comm.recv(left_n, tag(KIND_LU, k, 0))?;
                    let pos = (me.q + t - owner.q) % t;
                    if pos < t - 1 {
                        self.comm.send(right, tag(KIND_LU, k, 0), &bytes)?;
                        self.counters.lu_block_sends += 1;
                    }
                    bytes
                }
                CommMode::Staged => self
                    .comm
                    .recv(RankId(self.grid.rank_of(owner)), tag(KIND_LU, k, 0))?,
            };
            Some(Block::from_bytes(self.bs, &bytes)?)
        } else if in_col {
            let bytes = match self.cfg.mode {
                CommMode::Direct => {
                    let bytes = self.comm.recv(up_n, tag(KIND_LU, k, 0))?;
                    let pos = (me.p + t - owner.p) % t;
                    if pos < t - 1 {
                        self.comm.send(down, tag(KIND_LU, k, 0), &bytes)?;
                        self.counters.lu_block_sends += 1;
                    }
                    bytes
                }
                CommMode::Staged => self
                    .comm
                    .recv(RankId(self.grid.rank_of(owner)), tag(KIND_LU, k, 0))?,
            };
            Some(Block::from_bytes(self.bs, &bytes)?)
        } else {
            None
        };

        // Top blocks: row k, columns owned by this rank.
        if in_row {
            let lu_ref = lu.as_ref().expect("row ranks hold the packed block");
            for j in (k + 1..self.nb).filter(|j| j % t == me.q) {
                let block = self.a.block_mut(k, j).expect("top block owned");
                block_top_update(lu_ref, block)?;
                let bytes = block.to_bytes();
                let stored = block.clone();
                match self.cfg.mode {
                    CommMode::Direct => {
                        if t > 1 {
                            self.comm.send(down, tag(KIND_TOP, k, j), &bytes)?;
                            self.counters.top_block_sends += 1;
                        }
                    }
                    CommMode::Staged => {
                        for d in 1..t {
                            self.comm.send(
                                self.rank_at((me.p + d) % t, me.q),
                                tag(KIND_TOP, k, j),
                                &bytes,
                            )?;
                            self.counters.top_block_sends += 1;
                        }
                    }
                }
                self.tops.insert((k, j), stored);
            }
        }
        // Tops computed elsewhere flow down this rank's grid column.
        for j in (k + 1..self.nb).filter(|j| j % t == me.q) {
            if owner_pq(k, j, t, t) == me {
                continue;
            }
            let bytes = match self.cfg.mode {
                CommMode::Direct => {
                    let bytes = self.comm.recv(up_n, tag(KIND_TOP, k, j))?;
                    let pos = (me.p + t - owner.p) % t;
                    if pos < t - 1 {
                        self.comm.send(down, tag(KIND_TOP, k, j), &bytes)?;
                        self.counters.top_block_sends += 1;
                    }
                    bytes
                }
                CommMode::Staged => self
                    .comm
                    .recv(self.rank_at(owner.p, me.q), tag(KIND_TOP, k, j))?,
            };
            self.tops.insert((k, j), Block::from_bytes(self.bs, &bytes)?);
        }

        // Left blocks: column k, rows owned by this rank. They travel
        // transposed; the factor block stays untransposed in the matrix.
        if in_col {
            let lu_ref = lu.as_ref().expect("column ranks hold the packed block");
            for i in (k + 1..self.nb).filter(|i| i % t == me.p) {
                let block = self.a.block(i, k).expect("left block owned");
                let transposed = block_left_update(lu_ref, block)?;
                let factor = transposed.transposed();
                self.a.insert(i, k, factor.clone());
                let bytes = transposed.to_bytes();
                match self.cfg.mode {
                    CommMode::Direct => {
                        if t > 1 {
                            self.comm.send(right, tag(KIND_LEFT, k, i), &bytes)?;
                            self.counters.left_block_sends += 1;
                        }
                    }
                    CommMode::Staged => {
                        for d in 1..t {
                            self.comm.send(
                                self.rank_at(me.p, (me.q + d) % t),
                                tag(KIND_LEFT, k, i),
                                &bytes,
                            )?;
                            self.counters.left_block_sends += 1;
                        }
                    }
                }
                self.lefts.insert((k, i), factor);
            }
        }
        // Lefts computed elsewhere flow right along this rank's grid row.
        for i in (k + 1..self.nb).filter(|i| i % t == me.p) {
            if owner_pq(i, k, t, t) == me {
                continue;
            }
            let bytes = match self.cfg.mode {
                CommMode::Direct => {
                    let bytes = self.comm.recv(left_n, tag(KIND_LEFT, k, i))?;
                    let pos = (me.q + t - owner.q) % t;
                    if pos < t - 1 {
                        self.comm.send(right, tag(KIND_LEFT, k, i), &bytes)?;
                        self.counters.left_block_sends += 1;
                    }
                    bytes
                }
                CommMode::Staged => self
                    .comm
                    .recv(self.rank_at(me.p, owner.q), tag(KIND_LEFT, k, i))?,
            };
            let transposed: Block<S> = Block::from_bytes(self.bs, &bytes)?;
            self.lefts.insert((k, i), transposed.transposed());
        }

        self.phase[k].0 += self.comm.clock_seconds() - started;
        Ok(())
    }

    /// Trailing-matrix updates of iteration `k`.
    fn inner_phase(&mut self, k: usize, subset: InnerSubset) -> Result<()> {
        let started = self.comm.clock_seconds();
        let t = self.cfg.torus_dim;
        let reg = self.cfg.register_block();
        for i in (k + 1..self.nb).filter(|i| i % t == self.me.p) {
            for j in (k + 1..self.nb).filter(|j| j % t == self.me.q) {
                let dark = i == k + 1 || j == k + 1;
                match subset {
                    InnerSubset::Dark if !dark => continue,
                    InnerSubset::Light if dark => continue,
                    _ => {}
                }
                let left = self.lefts.get(&(k, i)).expect("left factor present");
                let top = self.tops.get(&(k, j)).expect("top factor present");
                let block = self.a.block_mut(i, j).expect("inner block owned");
                block_matmul_sub(block, left, top, reg)?;
            }
        }
        self.phase[k].1 += self.comm.clock_seconds() - started;
        Ok(())
    }

    fn cleanup(&mut self, k: usize) {
        self.tops.retain(|&(kk, _), _| kk != k);
        self.lefts.retain(|&(kk, _), _| kk != k);
    }
}

fn run_hpl_typed<S: Scalar>(comm: &dyn Communicator, cfg: &HplConfig) -> Result<HplRankOutcome> {
    cfg.validate(comm.world_size())?;
    let grid = Grid::new(cfg.torus_dim, cfg.torus_dim);
    let me = grid.coord_of(comm.rank().0);
    let nb = cfg.nblocks();

    let mut per_rep_seconds = Vec::with_capacity(cfg.repetitions);
    let mut last: Option<RankCtx<S>> = None;
    for _ in 0..cfg.repetitions.max(1) {
        let a = generate_matrix::<S>(
            cfg.n,
            cfg.block_size(),
            grid,
            Distribution::BlockCyclic,
            cfg.seed,
            me,
        )?;
        let mut ctx = RankCtx {
            comm,
            cfg,
            grid,
            me,
            nb,
            bs: cfg.block_size(),
            a,
            tops: HashMap::new(),
            lefts: HashMap::new(),
            counters: HplCounters::default(),
            phase: vec![(0.0, 0.0); nb],
        };
        let (elapsed, ()) = super::measure(comm, || ctx.factorize())?;
        per_rep_seconds.push(elapsed);
        last = Some(ctx);
    }
    let ctx = last.expect("at least one repetition");

    // Untimed: gather the factors, solve the all-ones system, verify.
    let solve = solve_reference(comm, &ctx.a, cfg)?;
    let (residual, solution_inf_error, solve_ok, factors_dense) = match solve {
        Some(s) => (
            Some(s.residual),
            Some(s.solution_inf_error),
            Some(s.solve_ok),
            cfg.collect_factors.then_some(s.factors_dense),
        ),
        None => (None, None, None, None),
    };

    Ok(HplRankOutcome {
        per_rep_seconds,
        counters: ctx.counters,
        phase_seconds: ctx.phase,
        residual,
        solution_inf_error,
        solve_ok,
        factors_dense,
    })
}

struct SolveReference {
    residual: f64,
    solution_inf_error: f64,
    solve_ok: bool,
    factors_dense: Vec<u8>,
}

/// Gather the distributed packed factors to rank 0 and solve
/// `L (U x) = b` there with the expected all-ones solution. Returns results
/// on rank 0, `None` elsewhere.
fn solve_reference<S: Scalar>(
    comm: &dyn Communicator,
    factors: &BlockMatrix<S>,
    cfg: &HplConfig,
) -> Result<Option<SolveReference>> {
    let nb = factors.nblocks();
    for (&(br, bc), block) in factors.stored() {
        comm.send(
            RankId(0),
            tag(KIND_GATHER, br, bc),
            &block.to_bytes(),
        )?;
    }
    if comm.rank().0 != 0 {
        return Ok(None);
    }
    let mut full = BlockMatrix::<S>::empty(
        factors.n,
        factors.block_size,
        factors.grid,
        factors.dist,
    )?;
    for br in 0..nb {
        for bc in 0..nb {
            let src = RankId(factors.owner_rank(br, bc));
            let bytes = comm.recv(src, tag(KIND_GATHER, br, bc))?;
            full.insert(br, bc, Block::from_bytes(factors.block_size, &bytes)?);
        }
    }
    let packed = full.to_dense()?;
    let b = rhs_all_ones_product::<S>(cfg.n, cfg.block_size(), cfg.seed);
    let x = solve_dense_packed(&packed, cfg.n, &b)?;
    let residual = residual_error(&x, &b);
    let solution_inf_error = x
        .iter()
        .map(|v| (v.to_f64() - 1.0).abs())
        .fold(0.0, f64::max);
    let mut factors_dense = Vec::with_capacity(packed.len() * S::BYTES);
    for &v in &packed {
        v.write_le(&mut factors_dense);
    }
    Ok(Some(SolveReference {
        residual,
        solution_inf_error,
        solve_ok: residual <= RESIDUAL_LIMIT,
        factors_dense,
    }))
}

/// Forward then back substitution on a dense packed `L\U` matrix,
/// accumulating in f64.
pub(crate) fn solve_dense_packed<S: Scalar>(packed: &[S], n: usize, b: &[S]) -> Result<Vec<S>> {
    let mut y = vec![0.0f64; n];
    for i in 0..n {
        let mut acc = b[i].to_f64();
        for j in 0..i {
            acc -= packed[i * n + j].to_f64() * y[j];
        }
        y[i] = acc;
    }
    let mut x = vec![0.0f64; n];
    for i in (0..n).rev() {
        let diag = packed[i * n + i].to_f64();
        if diag == 0.0 {
            return Err(MeshError::Numerical(format!("singular U diagonal at {i}")));
        }
        let mut acc = y[i];
        for j in i + 1..n {
            acc -= packed[i * n + j].to_f64() * x[j];
        }
        x[i] = acc / diag;
    }
    Ok(x.into_iter().map(S::from_f64).collect())
}

/// Acceptance bound on the normalized residual (the conventional HPL pass
/// threshold).
pub const RESIDUAL_LIMIT: f64 = 16.0;

/// Normalized maximum residual `||x - 1||_inf / (n * ||b||_inf * eps)`
/// against the known all-ones solution, with the machine epsilon of the
/// element type.
pub fn residual_error<S: Scalar>(x: &[S], b: &[S]) -> f64 {
    let n = x.len();
    let err_inf = x
        .iter()
        .map(|v| (v.to_f64() - 1.0).abs())
        .fold(0.0, f64::max);
    let b_inf = b.iter().map(|v| v.abs().to_f64()).fold(0.0, f64::max);
    err_inf / (n as f64 * b_inf * S::EPSILON)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HplMetrics {
    pub lu_seconds: f64,
    /// Fixed at `2 n^3 / 3`, independent of measured work.
    pub flop_count: f64,
    pub flops_per_s: f64,
    pub residual_norm: f64,
    pub solve_ok: bool,
    /// Slowest-rank (communication, update) seconds per iteration.
    pub iteration_phase_seconds: Vec<(f64, f64)>,
}

pub fn aggregate(cfg: &HplConfig, outcomes: &[HplRankOutcome]) -> HplMetrics {
    let per_rank: Vec<Vec<f64>> = outcomes.iter().map(|o| o.per_rep_seconds.clone()).collect();
    let slowest = super::slowest_per_repetition(&per_rank);
    let (_, best) = super::best_repetition(&slowest);
    let flop_count = 2.0 * (cfg.n as f64).powi(3) / 3.0;
    let nb = cfg.nblocks();
    let iteration_phase_seconds = (0..nb)
        .map(|k| {
            let comm = outcomes
                .iter()
                .map(|o| o.phase_seconds[k].0)
                .fold(0.0, f64::max);
            let update = outcomes
                .iter()
                .map(|o| o.phase_seconds[k].1)
                .fold(0.0, f64::max);
            (comm, update)
        })
        .collect();
    let rank0 = &outcomes[0];
    HplMetrics {
        lu_seconds: best,
        flop_count,
        flops_per_s: flop_count / best,
        residual_norm: rank0.residual.unwrap_or(f64::NAN),
        solve_ok: rank0.solve_ok.unwrap_or(false),
        iteration_phase_seconds,
    }
}
