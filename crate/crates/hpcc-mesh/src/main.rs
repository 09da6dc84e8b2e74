//! `hpcc-mesh` command line: run one benchmark (or a scaling sweep) on a
//! chosen transport and emit a JSON or CSV report.
//!
//! An optional config file supplies defaults as flat `key = value` lines
//! using the long flag names; explicit flags win.

use std::collections::HashMap;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use hpcc_mesh::bench::beff::{BeffConfig, IterationSchedule};
use hpcc_mesh::bench::epbench::{GemmConfig, StreamConfig};
use hpcc_mesh::bench::hpl::HplConfig;
use hpcc_mesh::bench::ptrans::PtransConfig;
use hpcc_mesh::bench::randomaccess::RaConfig;
use hpcc_mesh::bench::CommMode;
use hpcc_mesh::blockmat::DataType;
use hpcc_mesh::harness::{
    launch, run_sweep, worker_main, Benchmark, ReportFormat, RunConfig, SweepKind,
    TransportChoice,
};
use hpcc_mesh::netmodel::{ChannelParams, StagedParams};
use hpcc_mesh::transport::VirtualLink;
use hpcc_mesh::{MeshError, Result};

#[derive(Parser)]
#[command(
    name = "hpcc-mesh",
    version,
    about = "Multi-rank HPC Challenge style benchmarks over pluggable transports"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Effective bandwidth over a ring (21 message sizes)
    Beff {
        #[command(flatten)]
        common: CommonArgs,
        /// Communication path: direct|staged
        #[arg(long)]
        mode: Option<String>,
        /// Iterations per size: auto or a fixed count
        #[arg(long)]
        iterations: Option<String>,
    },
    /// Distributed matrix transpose-add C = B + A^T
    Ptrans {
        #[command(flatten)]
        common: CommonArgs,
        /// Matrix width in elements
        #[arg(long)]
        n: Option<String>,
        /// Block edge in elements
        #[arg(long)]
        block: Option<String>,
        /// Grid dimension P (the grid is PxP)
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        mode: Option<String>,
        /// Element type: float|double
        #[arg(long)]
        dtype: Option<String>,
    },
    /// Blocked LU decomposition without pivoting on a 2D torus
    Hpl {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        n: Option<String>,
        /// log2 of the block edge
        #[arg(long = "block-log")]
        block_log: Option<String>,
        /// log2 of the matmul micro-tile edge
        #[arg(long = "reg-log")]
        reg_log: Option<String>,
        /// Torus dimension T (the torus is TxT)
        #[arg(long)]
        torus: Option<String>,
        #[arg(long)]
        mode: Option<String>,
        /// Overlap communication and update phases: on|off
        #[arg(long)]
        overlap: Option<String>,
        #[arg(long)]
        dtype: Option<String>,
    },
    /// RandomAccess (GUPS) over a distributed table
    Gups {
        #[command(flatten)]
        common: CommonArgs,
        /// log2 of the global table size in words
        #[arg(long = "table-log")]
        table_log: Option<String>,
        /// log2 of the random-number lanes per rank
        #[arg(long = "rng-log")]
        rng_log: Option<String>,
        /// Shift-register slots between lanes
        #[arg(long)]
        distance: Option<String>,
        /// Updates per table word
        #[arg(long = "update-factor")]
        update_factor: Option<String>,
    },
    /// Embarrassingly parallel STREAM triad
    Stream {
        #[command(flatten)]
        common: CommonArgs,
        /// Elements per rank
        #[arg(long)]
        length: Option<String>,
        /// Triad scalar
        #[arg(long)]
        scalar: Option<String>,
    },
    /// Embarrassingly parallel GEMM
    Gemm {
        #[command(flatten)]
        common: CommonArgs,
        /// Per-rank matrix width in elements
        #[arg(long)]
        width: Option<String>,
        #[arg(long)]
        block: Option<String>,
        /// Micro-tile edge
        #[arg(long)]
        reg: Option<String>,
        #[arg(long)]
        dtype: Option<String>,
    },
    /// Internal: rank process of the tcp backend
    #[command(hide = true)]
    Worker {
        #[arg(long)]
        rendezvous: String,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// Backend: inproc|virtual|tcp
    #[arg(long)]
    transport: Option<String>,
    #[arg(long)]
    ranks: Option<String>,
    /// Timed repetitions
    #[arg(long)]
    reps: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Channel latency in nanoseconds
    #[arg(long = "link-latency")]
    link_latency: Option<String>,
    /// Channel width in bytes per beat
    #[arg(long = "link-width")]
    link_width: Option<String>,
    /// Channel beat frequency in hertz
    #[arg(long = "link-freq")]
    link_freq: Option<String>,
    /// Channels per send/receive kernel pair
    #[arg(long = "link-pairs")]
    link_pairs: Option<String>,
    /// Kernel pair replications per rank
    #[arg(long = "link-replications")]
    link_replications: Option<String>,
    /// Staged path device write bandwidth, bytes/s
    #[arg(long = "staged-write-bw")]
    staged_write_bw: Option<String>,
    /// Staged path device read bandwidth, bytes/s
    #[arg(long = "staged-read-bw")]
    staged_read_bw: Option<String>,
    /// Staged path host network bandwidth, bytes/s
    #[arg(long = "staged-net-bw")]
    staged_net_bw: Option<String>,
    /// Staged path host network latency in nanoseconds
    #[arg(long = "staged-net-latency")]
    staged_net_latency: Option<String>,
    /// Report file; stdout when absent
    #[arg(long)]
    out: Option<String>,
    /// Report format: json|csv
    #[arg(long)]
    format: Option<String>,
    /// Scaling sweep: strong|weak
    #[arg(long)]
    sweep: Option<String>,
    #[arg(long = "max-ranks")]
    max_ranks: Option<String>,
    /// Flat key = value defaults file (keys are the long flag names)
    #[arg(long)]
    config: Option<String>,
}

/// Flat key-value defaults loaded from `--config`.
struct FileConfig(HashMap<String, String>);

impl FileConfig {
    fn load(path: Option<&str>) -> Result<FileConfig> {
        let mut map = HashMap::new();
        if let Some(path) = path {
            let body = std::fs::read_to_string(path)?;
            for (lineno, line) in body.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    MeshError::Config(format!("{path}:{}: expected key = value", lineno + 1))
                })?;
                map.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(FileConfig(map))
    }

    fn get(&self, key: &str) -> Option<&String> {
        self.0.get(key)
    }
}

/// Flag beats file beats default; flag and file both hold strings.
fn resolve<T: FromStr>(flag: &Option<String>, file: &FileConfig, key: &str, default: T) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    match flag.as_ref().or_else(|| file.get(key)) {
        Some(raw) => raw
            .parse()
            .map_err(|e| MeshError::Config(format!("--{key} {raw:?}: {e}"))),
        None => Ok(default),
    }
}

fn resolve_opt<T: FromStr>(flag: &Option<String>, file: &FileConfig, key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match flag.as_ref().or_else(|| file.get(key)) {
        Some(raw) => raw
            .parse()
            .map(Some)
            .map_err(|e| MeshError::Config(format!("--{key} {raw:?}: {e}"))),
        None => Ok(None),
    }
}

struct Resolved {
    transport: TransportChoice,
    ranks: usize,
    reps: usize,
    seed: u64,
    channel: ChannelParams,
    staged: StagedParams,
    out: Option<String>,
    format: ReportFormat,
    sweep: Option<SweepKind>,
    max_ranks: usize,
}

fn resolve_common(common: &CommonArgs, file: &FileConfig) -> Result<Resolved> {
    let defaults = ChannelParams::default();
    let channel = ChannelParams {
        latency_s: resolve(
            &common.link_latency,
            file,
            "link-latency",
            defaults.latency_s * 1e9,
        )? * 1e-9,
        frequency_hz: resolve(&common.link_freq, file, "link-freq", defaults.frequency_hz)?,
        width_bytes: resolve(&common.link_width, file, "link-width", defaults.width_bytes)?,
        channels_per_pair: resolve(
            &common.link_pairs,
            file,
            "link-pairs",
            defaults.channels_per_pair,
        )?,
        replications: resolve(
            &common.link_replications,
            file,
            "link-replications",
            defaults.replications,
        )?,
    };
    let staged_defaults = StagedParams::default();
    let staged = StagedParams {
        write_bandwidth: resolve(
            &common.staged_write_bw,
            file,
            "staged-write-bw",
            staged_defaults.write_bandwidth,
        )?,
        read_bandwidth: resolve(
            &common.staged_read_bw,
            file,
            "staged-read-bw",
            staged_defaults.read_bandwidth,
        )?,
        host_net_bandwidth: resolve(
            &common.staged_net_bw,
            file,
            "staged-net-bw",
            staged_defaults.host_net_bandwidth,
        )?,
        host_net_latency_s: resolve(
            &common.staged_net_latency,
            file,
            "staged-net-latency",
            staged_defaults.host_net_latency_s * 1e9,
        )? * 1e-9,
        copy_latency_s: staged_defaults.copy_latency_s,
    };
    Ok(Resolved {
        transport: resolve(&common.transport, file, "transport", TransportChoice::Inproc)?,
        ranks: resolve(&common.ranks, file, "ranks", 1usize)?,
        reps: resolve(&common.reps, file, "reps", 2usize)?,
        seed: resolve(&common.seed, file, "seed", 42u64)?,
        channel,
        staged,
        out: common.out.clone().or_else(|| file.get("out").cloned()),
        format: resolve(&common.format, file, "format", ReportFormat::Json)?,
        sweep: resolve_opt(&common.sweep, file, "sweep")?,
        max_ranks: resolve(&common.max_ranks, file, "max-ranks", 16usize)?,
    })
}

fn link_for(mode: CommMode, r: &Resolved) -> VirtualLink {
    match mode {
        CommMode::Direct => VirtualLink::Channel(r.channel),
        CommMode::Staged => VirtualLink::Staged(r.staged),
    }
}

fn build_run_config(command: &Command) -> Result<(RunConfig, Resolved)> {
    let common = match command {
        Command::Beff { common, .. }
        | Command::Ptrans { common, .. }
        | Command::Hpl { common, .. }
        | Command::Gups { common, .. }
        | Command::Stream { common, .. }
        | Command::Gemm { common, .. } => common,
        Command::Worker { .. } => unreachable!("worker handled before config resolution"),
    };
    let file = FileConfig::load(common.config.as_deref())?;
    let r = resolve_common(common, &file)?;
    let default_grid = (r.ranks as f64).sqrt().round() as usize;

    let benchmark = match command {
        Command::Beff {
            mode, iterations, ..
        } => {
            let mode = resolve(mode, &file, "mode", CommMode::Direct)?;
            let iterations = match iterations
                .as_ref()
                .or_else(|| file.get("iterations"))
                .map(String::as_str)
            {
                None | Some("auto") => IterationSchedule::Auto,
                Some(n) => IterationSchedule::Fixed(
                    n.parse()
                        .map_err(|e| MeshError::Config(format!("--iterations {n:?}: {e}")))?,
                ),
            };
            Benchmark::Beff(BeffConfig {
                mode,
                repetitions: r.reps,
                iterations,
            })
        }
        Command::Ptrans {
            n,
            block,
            grid,
            mode,
            dtype,
            ..
        } => Benchmark::Ptrans(PtransConfig {
            n: resolve(n, &file, "n", 512usize)?,
            block_size: resolve(block, &file, "block", 64usize)?,
            grid_dim: resolve(grid, &file, "grid", default_grid)?,
            mode: resolve(mode, &file, "mode", CommMode::Direct)?,
            repetitions: r.reps,
            dtype: resolve(dtype, &file, "dtype", DataType::Float32)?,
            seed: r.seed,
            collect_result: false,
        }),
        Command::Hpl {
            n,
            block_log,
            reg_log,
            torus,
            mode,
            overlap,
            dtype,
            ..
        } => {
            let overlap = match overlap
                .as_ref()
                .or_else(|| file.get("overlap"))
                .map(String::as_str)
            {
                None | Some("on") => true,
                Some("off") => false,
                Some(other) => {
                    return Err(MeshError::Config(format!(
                        "--overlap {other:?}: expected on|off"
                    )))
                }
            };
            Benchmark::Hpl(HplConfig {
                n: resolve(n, &file, "n", 512usize)?,
                block_size_log: resolve(block_log, &file, "block-log", 6u32)?,
                register_block_log: resolve(reg_log, &file, "reg-log", 3u32)?,
                torus_dim: resolve(torus, &file, "torus", default_grid)?,
                mode: resolve(mode, &file, "mode", CommMode::Direct)?,
                overlap,
                repetitions: r.reps,
                dtype: resolve(dtype, &file, "dtype", DataType::Float32)?,
                seed: r.seed,
                collect_factors: false,
            })
        }
        Command::Gups {
            table_log,
            rng_log,
            distance,
            update_factor,
            ..
        } => {
            let defaults = RaConfig::default();
            Benchmark::Gups(RaConfig {
                table_size_log: resolve(table_log, &file, "table-log", 16u32)?,
                rng_count_log: resolve(rng_log, &file, "rng-log", 2u32)?,
                rng_distance: resolve(distance, &file, "distance", 2usize)?,
                update_factor: resolve(
                    update_factor,
                    &file,
                    "update-factor",
                    defaults.update_factor,
                )?,
                repetitions: r.reps,
                virtual_clock_hz: defaults.virtual_clock_hz,
                collect_table: false,
            })
        }
        Command::Stream {
            length, scalar, ..
        } => {
            let defaults = StreamConfig::default();
            Benchmark::Stream(StreamConfig {
                array_length: resolve(length, &file, "length", defaults.array_length)?,
                scalar: resolve(scalar, &file, "scalar", defaults.scalar)?,
                repetitions: r.reps,
                virtual_mem_bandwidth: defaults.virtual_mem_bandwidth,
            })
        }
        Command::Gemm {
            width,
            block,
            reg,
            dtype,
            ..
        } => {
            let defaults = GemmConfig::default();
            Benchmark::Gemm(GemmConfig {
                matrix_width: resolve(width, &file, "width", defaults.matrix_width)?,
                block_size: resolve(block, &file, "block", defaults.block_size)?,
                register_block: resolve(reg, &file, "reg", defaults.register_block)?,
                dtype: resolve(dtype, &file, "dtype", DataType::Float32)?,
                seed: r.seed,
                repetitions: r.reps,
                virtual_flops: defaults.virtual_flops,
            })
        }
        Command::Worker { .. } => unreachable!(),
    };

    let mode = match &benchmark {
        Benchmark::Beff(c) => c.mode,
        Benchmark::Ptrans(c) => c.mode,
        Benchmark::Hpl(c) => c.mode,
        _ => CommMode::Direct,
    };
    let mut cfg = RunConfig::new(benchmark, r.transport, r.ranks);
    cfg.link = link_for(mode, &r);
    Ok((cfg, r))
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    if let Command::Worker { rendezvous } = &cli.command {
        return worker_main(rendezvous);
    }
    let (mut cfg, resolved) = build_run_config(&cli.command)?;
    cfg.out = resolved.out.clone();
    cfg.format = resolved.format;

    if let Some(kind) = resolved.sweep {
        let sweep = run_sweep(&cfg, kind, resolved.max_ranks)?;
        let body = match resolved.format {
            ReportFormat::Json => sweep.to_json()?,
            ReportFormat::Csv => sweep.to_csv(),
        };
        return emit(&body, resolved.out.as_deref());
    }

    let report = launch(&cfg)?;
    let body = match resolved.format {
        ReportFormat::Json => report.to_json()?,
        ReportFormat::Csv => report.to_csv(),
    };
    emit(&body, resolved.out.as_deref())?;
    if report.partial {
        return Err(MeshError::Validation(format!(
            "partial run: {}",
            report.failures.join("; ")
        )));
    }
    if !report.validation_ok {
        return Err(MeshError::Validation(
            "benchmark self-check failed (see report)".into(),
        ));
    }
    Ok(())
}

fn emit(body: &str, out: Option<&str>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, body)?,
        None => println!("{body}"),
    }
    Ok(())
}

fn main() {
    if let Err(e) = real_main() {
        eprintln!("hpcc-mesh: {e}");
        std::process::exit(1);
    }
}
