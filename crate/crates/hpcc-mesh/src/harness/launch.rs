//! Rank spawning, per-rank benchmark dispatch and outcome collection.

use serde::{Deserialize, Serialize};

use super::config::{Benchmark, RunConfig, TransportChoice};
use super::report::{assemble_report, BenchmarkReport};
use crate::bench::beff::{run_beff, BeffRankOutcome};
use crate::bench::epbench::{run_gemm, run_stream_triad, GemmRankOutcome, StreamRankOutcome};
use crate::bench::hpl::{run_hpl, HplRankOutcome};
use crate::bench::ptrans::{run_ptrans, PtransRankOutcome};
use crate::bench::randomaccess::{run_randomaccess, RaRankOutcome};
use crate::error::{MeshError, Result};
use crate::transport::concurrent::run_concurrent;
use crate::transport::socket::{worker_join, Rendezvous};
use crate::transport::virtual_time::run_virtual_time;
use crate::transport::Communicator;

/// Everything one rank reports back to the launcher.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchOutcome {
    Beff(BeffRankOutcome),
    Ptrans(PtransRankOutcome),
    Hpl(HplRankOutcome),
    Gups(RaRankOutcome),
    Stream(StreamRankOutcome),
    Gemm(GemmRankOutcome),
    DelayProbe(DelayRankOutcome),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DelayRankOutcome {
    pub per_rep_seconds: Vec<f64>,
}

/// Execute the configured benchmark on this rank.
pub fn run_benchmark_on_rank(cfg: &RunConfig, comm: &dyn Communicator) -> Result<BenchOutcome> {
    Ok(match &cfg.benchmark {
        Benchmark::Beff(c) => BenchOutcome::Beff(run_beff(comm, c)?),
        Benchmark::Ptrans(c) => BenchOutcome::Ptrans(run_ptrans(comm, c)?),
        Benchmark::Hpl(c) => BenchOutcome::Hpl(run_hpl(comm, c)?),
        Benchmark::Gups(c) => BenchOutcome::Gups(run_randomaccess(comm, c)?),
        Benchmark::Stream(c) => BenchOutcome::Stream(run_stream_triad(comm, c)?),
        Benchmark::Gemm(c) => BenchOutcome::Gemm(run_gemm(comm, c)?),
        Benchmark::DelayProbe(c) => {
            let mut per_rep_seconds = Vec::with_capacity(c.schedule.len());
            for rep in &c.schedule {
                let delay = rep[comm.rank().0];
                // `advance` runs inside the timed region, so the elapsed
                // time already carries the injected delay on every backend.
                let (elapsed, ()) = crate::bench::measure(comm, || {
                    comm.advance(delay);
                    Ok(())
                })?;
                per_rep_seconds.push(elapsed);
            }
            BenchOutcome::DelayProbe(DelayRankOutcome { per_rep_seconds })
        }
    })
}

/// Spawn the configured world and collect one outcome (or failure string)
/// per rank.
pub fn collect_outcomes(
    cfg: &RunConfig,
) -> Result<Vec<std::result::Result<BenchOutcome, String>>> {
    cfg.validate()?;
    Ok(match cfg.transport {
        TransportChoice::Inproc => run_concurrent(cfg.ranks, |comm| {
            run_benchmark_on_rank(cfg, comm).map_err(|e| e.to_string())
        }),
        TransportChoice::Virtual => run_virtual_time(cfg.ranks, cfg.link, |comm| {
            run_benchmark_on_rank(cfg, comm).map_err(|e| e.to_string())
        }),
        TransportChoice::Tcp => launch_tcp(cfg)?,
    })
}

/// Spawn the configured world, run the benchmark and assemble the report.
pub fn launch(cfg: &RunConfig) -> Result<BenchmarkReport> {
    let outcomes = collect_outcomes(cfg)?;
    assemble_report(cfg, outcomes)
}

fn launch_tcp(cfg: &RunConfig) -> Result<Vec<std::result::Result<BenchOutcome, String>>> {
    let exe = match &cfg.worker_exe {
        Some(path) => std::path::PathBuf::from(path),
        None => std::env::current_exe()?,
    };
    let rendezvous = Rendezvous::bind()?;
    let addr = rendezvous.addr().to_string();
    let mut children = Vec::with_capacity(cfg.ranks);
    for _ in 0..cfg.ranks {
        let child = std::process::Command::new(&exe)
            .arg("worker")
            .arg("--rendezvous")
            .arg(&addr)
            .stdout(std::process::Stdio::null())
            .spawn()
            .map_err(|e| MeshError::Transport(format!("cannot spawn worker {exe:?}: {e}")))?;
        children.push(child);
    }
    let setup = serde_json::to_string(cfg)?;
    let collected = rendezvous.run(cfg.ranks, &setup);
    for mut child in children {
        // Workers exit after submitting; reap them regardless of outcome.
        if collected.is_err() {
            child.kill().ok();
        }
        child.wait().ok();
    }
    let results = collected?;
    Ok(results
        .into_iter()
        .map(|r| match r {
            Ok(json) => serde_json::from_str::<BenchOutcome>(&json).map_err(|e| e.to_string()),
            Err(msg) => Err(msg),
        })
        .collect())
}

/// Entry point of a tcp worker process: join the rendezvous, run, report.
pub fn worker_main(rendezvous: &str) -> Result<()> {
    let (comm, setup, reporter) = worker_join(rendezvous)?;
    let cfg: RunConfig = serde_json::from_str(&setup)?;
    match run_benchmark_on_rank(&cfg, &comm) {
        Ok(outcome) => reporter.submit(&serde_json::to_string(&outcome)?),
        Err(e) => reporter.submit_error(&e.to_string()),
    }
}
