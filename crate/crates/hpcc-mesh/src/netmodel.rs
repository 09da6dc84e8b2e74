//! Analytical performance models for the communication paths used by the
//! benchmarks.
//!
//! Two families of links are modelled: a *staged* path (device buffer copied
//! to the host, exchanged over the host network, copied back to the device)
//! and a *channel* path (point-to-point serial channels streaming fixed-width
//! beats). The same cost structures drive the virtual-time transport, so the
//! functions here serve both as report annotations and as the reference the
//! simulator is validated against.

use serde::{Deserialize, Serialize};

/// Characteristics of a point-to-point serial channel.
///
/// The defaults describe the channel IP of the reference board: 520 ns
/// latency, 156.25 MHz beat clock, 32-byte beats, two channels per
/// send/receive kernel pair and two kernel pair replications (four channels
/// total).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Latency of a channel in seconds (`c_l`).
    pub latency_s: f64,
    /// Beat frequency of a channel in hertz (`c_f`).
    pub frequency_hz: f64,
    /// Width of a channel in bytes per beat (`c_w`).
    pub width_bytes: u64,
    /// Channels ganged per send/receive kernel pair (`c_n'`).
    pub channels_per_pair: u64,
    /// Kernel pair replications per rank (`r`).
    pub replications: u64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            latency_s: 520e-9,
            frequency_hz: 156.25e6,
            width_bytes: 32,
            channels_per_pair: 2,
            replications: 2,
        }
    }
}

impl ChannelParams {
    /// Effective payload bytes moved per beat by one kernel pair.
    pub fn pair_width_bytes(&self) -> u64 {
        self.channels_per_pair * self.width_bytes
    }

    /// Steady-state bandwidth of one kernel pair in bytes/second.
    pub fn pair_bandwidth(&self) -> f64 {
        self.pair_width_bytes() as f64 * self.frequency_hz
    }
}

/// Parameters of the staged device-host-network path.
///
/// Each stage is an affine cost `latency + size / bandwidth`. The paper never
/// quantifies the three component times, so defaults here are illustrative
/// placeholders for a PCIe 3.0 x8 link and a 100 Gb/s host network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StagedParams {
    /// Device write bandwidth in bytes/second.
    pub write_bandwidth: f64,
    /// Device read bandwidth in bytes/second.
    pub read_bandwidth: f64,
    /// Host network bandwidth in bytes/second.
    pub host_net_bandwidth: f64,
    /// Host network latency in seconds.
    pub host_net_latency_s: f64,
    /// Fixed per-transfer device copy latency in seconds.
    pub copy_latency_s: f64,
}

impl Default for StagedParams {
    fn default() -> Self {
        StagedParams {
            write_bandwidth: 11.2e9,
            read_bandwidth: 11.2e9,
            host_net_bandwidth: 12.5e9,
            host_net_latency_s: 1e-6,
            copy_latency_s: 0.0,
        }
    }
}

impl StagedParams {
    /// Time to write a message of `len` bytes to the device.
    pub fn write_time(&self, len: u64) -> f64 {
        self.copy_latency_s + len as f64 / self.write_bandwidth
    }

    /// Time to read a message of `len` bytes from the device.
    pub fn read_time(&self, len: u64) -> f64 {
        self.copy_latency_s + len as f64 / self.read_bandwidth
    }

    /// Time to exchange a message of `len` bytes over the host network.
    pub fn net_time(&self, len: u64) -> f64 {
        self.host_net_latency_s + len as f64 / self.host_net_bandwidth
    }

    /// Serial end-to-end time of the read-exchange-write sequence.
    pub fn total_time(&self, len: u64) -> f64 {
        self.write_time(len) + self.net_time(len) + self.read_time(len)
    }
}

/// Expected bandwidth of the staged path for a message of `len` bytes:
/// `2L / (pcie_write_t + mpi_t + pcie_read_t)`.
///
/// The factor two counts the simultaneous exchange in both directions.
pub fn model_staged_bandwidth(len: u64, p: &StagedParams) -> f64 {
    assert!(len >= 1, "message length must be at least one byte");
    2.0 * len as f64 / p.total_time(len)
}

/// Execution time of one kernel pair sending `count` messages of `len` bytes:
/// `ceil(L / (c_n' * c_w)) * i / c_f + i * c_l`.
pub fn model_channel_time(len: u64, count: u64, p: &ChannelParams) -> f64 {
    assert!(len >= 1 && count >= 1);
    let beats = len.div_ceil(p.pair_width_bytes());
    (beats * count) as f64 / p.frequency_hz + count as f64 * p.latency_s
}

/// Bandwidth of a single send/receive kernel pair for `len`-byte messages:
/// `2L / (ceil(L / (c_n' * c_w)) / c_f + c_l)`.
///
/// Total bandwidth scales linearly with the number of kernel pairs.
pub fn model_channel_bandwidth(len: u64, p: &ChannelParams) -> f64 {
    assert!(len >= 1);
    2.0 * len as f64 / model_channel_time(len, 1, p)
}

/// Expected time to transpose one `b x b` matrix block:
/// `t_mpi + 3 * b^2 / (c_w * c_f)`.
///
/// `width_values` counts matrix elements per beat, not bytes. The three
/// sequential pipelines each touch `b^2` values at `c_w * c_f` values per
/// second; dividing by the frequency keeps the expression dimensionally a
/// time.
pub fn model_ptrans_block_time(b: u64, width_values: u64, frequency_hz: f64, t_mpi: f64) -> f64 {
    assert!(b >= 1 && width_values >= 1);
    t_mpi + 3.0 * (b * b) as f64 / width_values as f64 / frequency_hz
}

/// Global memory bandwidth required to keep the transpose network-bound:
/// `3 * r * c_w * c_f` bytes/second, three times the aggregate network
/// bandwidth.
pub fn model_ptrans_memory_bandwidth(replications: u64, p: &ChannelParams) -> f64 {
    assert!(replications >= 1);
    3.0 * replications as f64 * p.width_bytes as f64 * p.frequency_hz
}

/// Peak transpose-add rate over `num_ranks` ranks in values (additions) per
/// second: `i * r * (c_w / element_bytes) * c_f`, one addition per
/// transported value.
pub fn model_ptrans_peak_flops(
    num_ranks: u64,
    replications: u64,
    element_bytes: u64,
    p: &ChannelParams,
) -> f64 {
    assert!(num_ranks >= 1 && replications >= 1 && element_bytes >= 1);
    let values_per_beat = p.width_bytes / element_bytes;
    (num_ranks * replications * values_per_beat) as f64 * p.frequency_hz
}
