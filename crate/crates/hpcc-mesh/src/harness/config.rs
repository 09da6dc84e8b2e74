//! Run configuration: benchmark selection, transport backend, link
//! parameters and output options. The full config is echoed verbatim into
//! every report.

use serde::{Deserialize, Serialize};

use crate::bench::beff::BeffConfig;
use crate::bench::epbench::{GemmConfig, StreamConfig};
use crate::bench::hpl::HplConfig;
use crate::bench::ptrans::PtransConfig;
use crate::bench::randomaccess::RaConfig;
use crate::error::{MeshError, Result};
use crate::transport::VirtualLink;

/// Benchmark plus its specific parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    Beff(BeffConfig),
    Ptrans(PtransConfig),
    Hpl(HplConfig),
    Gups(RaConfig),
    Stream(StreamConfig),
    Gemm(GemmConfig),
    /// Timing-protocol probe: rank `r` idles for `schedule[rep][r]` seconds
    /// inside the timed region of repetition `rep`.
    DelayProbe(DelayProbeConfig),
}

impl Benchmark {
    pub fn name(&self) -> &'static str {
        match self {
            Benchmark::Beff(_) => "beff",
            Benchmark::Ptrans(_) => "ptrans",
            Benchmark::Hpl(_) => "hpl",
            Benchmark::Gups(_) => "gups",
            Benchmark::Stream(_) => "stream",
            Benchmark::Gemm(_) => "gemm",
            Benchmark::DelayProbe(_) => "delay_probe",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DelayProbeConfig {
    /// `schedule[repetition][rank]`, seconds.
    pub schedule: Vec<Vec<f64>>,
}

/// Which message-passing runtime carries the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportChoice {
    /// One thread per rank in this process.
    Inproc,
    /// Deterministic discrete-event logical time.
    Virtual,
    /// One process per rank over localhost TCP.
    Tcp,
}

impl std::str::FromStr for TransportChoice {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "inproc" => Ok(TransportChoice::Inproc),
            "virtual" => Ok(TransportChoice::Virtual),
            "tcp" => Ok(TransportChoice::Tcp),
            other => Err(format!(
                "unknown transport {other:?}, expected inproc|virtual|tcp"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown format {other:?}, expected json|csv")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub benchmark: Benchmark,
    pub transport: TransportChoice,
    pub ranks: usize,
    /// Link cost model: drives the virtual-time backend and the predicted
    /// columns in reports.
    pub link: VirtualLink,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    pub format: ReportFormat,
    /// Worker executable for the tcp backend; defaults to the current
    /// executable.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worker_exe: Option<String>,
}

impl RunConfig {
    pub fn new(benchmark: Benchmark, transport: TransportChoice, ranks: usize) -> Self {
        RunConfig {
            benchmark,
            transport,
            ranks,
            link: VirtualLink::default(),
            out: None,
            format: ReportFormat::Json,
            worker_exe: None,
        }
    }

    /// Reject invalid configurations before any rank launches.
    pub fn validate(&self) -> Result<()> {
        if self.ranks == 0 {
            return Err(MeshError::Config("at least one rank is required".into()));
        }
        match &self.benchmark {
            Benchmark::Ptrans(c) => c.validate(self.ranks),
            Benchmark::Hpl(c) => c.validate(self.ranks),
            Benchmark::Gups(c) => c.validate(self.ranks),
            Benchmark::Beff(c) => {
                if c.repetitions == 0 {
                    return Err(MeshError::Config("repetitions must be at least 1".into()));
                }
                Ok(())
            }
            Benchmark::Stream(c) => {
                if c.array_length == 0 {
                    return Err(MeshError::Config("array_length must be at least 1".into()));
                }
                Ok(())
            }
            Benchmark::Gemm(c) => {
                if c.matrix_width == 0 || c.matrix_width % c.block_size != 0 {
                    return Err(MeshError::Config(
                        "matrix width must be a positive multiple of block size".into(),
                    ));
                }
                Ok(())
            }
            Benchmark::DelayProbe(c) => {
                if c.schedule.is_empty() || c.schedule.iter().any(|r| r.len() != self.ranks) {
                    return Err(MeshError::Config(
                        "delay schedule needs one entry per rank per repetition".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}
