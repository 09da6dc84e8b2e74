//! Strong and weak scaling sweeps: rerun one benchmark over a ladder of
//! rank counts and tabulate the headline metric against the smallest run.

use serde::{Deserialize, Serialize};

use super::config::{Benchmark, RunConfig};
use super::launch::launch;
use super::report::{BenchMetrics, BenchmarkReport};
use crate::error::{MeshError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// Global problem size fixed while ranks grow.
    Strong,
    /// Per-rank problem size fixed while ranks grow.
    Weak,
}

impl std::str::FromStr for SweepKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "strong" => Ok(SweepKind::Strong),
            "weak" => Ok(SweepKind::Weak),
            other => Err(format!("unknown sweep {other:?}, expected strong|weak")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub ranks_count: usize,
    pub metric_name: String,
    pub metric_value: f64,
    pub speedup_ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub kind: SweepKind,
    pub benchmark: String,
    pub rows: Vec<SweepRow>,
}

/// Rank ladder appropriate for the benchmark: squares for the grid and
/// torus benchmarks, powers of two otherwise.
fn rank_ladder(benchmark: &Benchmark, max_ranks: usize) -> Vec<usize> {
    match benchmark {
        Benchmark::Ptrans(_) | Benchmark::Hpl(_) => (1..)
            .map(|t: usize| t * t)
            .take_while(|&n| n <= max_ranks)
            .collect(),
        _ => std::iter::successors(Some(1usize), |&n| Some(n * 2))
            .take_while(|&n| n <= max_ranks)
            .collect(),
    }
}

/// Scale the benchmark config for `ranks` ranks under the sweep rule.
fn scaled_config(base: &RunConfig, kind: SweepKind, ranks: usize) -> Result<RunConfig> {
    let mut cfg = base.clone();
    cfg.ranks = ranks;
    match (&mut cfg.benchmark, kind) {
        (Benchmark::Beff(_), _) => {}
        (Benchmark::Ptrans(c), kind) => {
            let t = (ranks as f64).sqrt().round() as usize;
            c.grid_dim = t;
            if kind == SweepKind::Weak {
                c.n = base_ptrans_n(base)? * t;
            }
        }
        (Benchmark::Hpl(c), kind) => {
            let t = (ranks as f64).sqrt().round() as usize;
            c.torus_dim = t;
            if kind == SweepKind::Weak {
                c.n = base_hpl_n(base)? * t;
            }
        }
        (Benchmark::Gups(c), SweepKind::Weak) => {
            c.table_size_log += ranks.trailing_zeros();
        }
        (Benchmark::Gups(_), SweepKind::Strong) => {}
        (Benchmark::Stream(_) | Benchmark::Gemm(_), SweepKind::Weak) => {
            // Per-rank sizes are already fixed; nothing to scale.
        }
        (Benchmark::Stream(_) | Benchmark::Gemm(_), SweepKind::Strong) => {
            return Err(MeshError::Config(
                "embarrassingly parallel benchmarks only sweep weakly".into(),
            ));
        }
        (Benchmark::DelayProbe(_), _) => {
            return Err(MeshError::Config("delay probe does not sweep".into()));
        }
    }
    Ok(cfg)
}

fn base_ptrans_n(base: &RunConfig) -> Result<usize> {
    match &base.benchmark {
        Benchmark::Ptrans(c) => Ok(c.n),
        _ => Err(MeshError::Config("not a ptrans sweep".into())),
    }
}

fn base_hpl_n(base: &RunConfig) -> Result<usize> {
    match &base.benchmark {
        Benchmark::Hpl(c) => Ok(c.n),
        _ => Err(MeshError::Config("not an hpl sweep".into())),
    }
}

fn headline(report: &BenchmarkReport) -> Result<(String, f64)> {
    let metrics = report
        .metrics
        .as_ref()
        .ok_or_else(|| MeshError::Validation("sweep step produced a partial report".into()))?;
    Ok(match metrics {
        BenchMetrics::Beff(m) => (
            "effective_bandwidth_bytes_per_s".into(),
            m.effective_bandwidth_bytes_per_s,
        ),
        BenchMetrics::Ptrans(m) => ("flops_per_s".into(), m.flops_per_s),
        BenchMetrics::Hpl(m) => ("flops_per_s".into(), m.flops_per_s),
        BenchMetrics::Gups(m) => ("gups_updates_per_s".into(), m.gups_updates_per_s),
        BenchMetrics::Stream(m) => ("aggregate_bytes_per_s".into(), m.aggregate_bytes_per_s),
        BenchMetrics::Gemm(m) => ("aggregate_flops_per_s".into(), m.aggregate_flops_per_s),
        BenchMetrics::DelayProbe(m) => ("best_seconds".into(), m.best_seconds),
    })
}

pub fn run_sweep(base: &RunConfig, kind: SweepKind, max_ranks: usize) -> Result<SweepReport> {
    let ladder = rank_ladder(&base.benchmark, max_ranks);
    if ladder.is_empty() {
        return Err(MeshError::Config("max-ranks admits no rank counts".into()));
    }
    let mut rows = Vec::new();
    let mut base_value = None;
    for ranks in ladder {
        let cfg = scaled_config(base, kind, ranks)?;
        let report = launch(&cfg)?;
        let (metric_name, metric_value) = headline(&report)?;
        let baseline = *base_value.get_or_insert(metric_value);
        rows.push(SweepRow {
            ranks_count: ranks,
            metric_name,
            metric_value,
            speedup_ratio: metric_value / baseline,
        });
    }
    Ok(SweepReport {
        kind,
        benchmark: base.benchmark.name().to_string(),
        rows,
    })
}

impl SweepReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("ranks_count,metric_name,metric_value,speedup_ratio\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.ranks_count, r.metric_name, r.metric_value, r.speedup_ratio
            ));
        }
        out
    }
}
