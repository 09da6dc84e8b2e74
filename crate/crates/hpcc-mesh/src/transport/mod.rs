//! Message-passing runtime with three interchangeable backends.
//!
//! * [`concurrent`]: one OS thread per rank inside the current process,
//!   messages through shared mailboxes, wall-clock timing.
//! * [`virtual_time`]: single shared discrete-event engine; every rank keeps
//!   a logical clock and message arrivals are computed from an analytical
//!   link model. Fully deterministic.
//! * [`socket`]: one OS process per rank on localhost, length-prefixed
//!   frames over TCP, wall-clock timing.
//!
//! A benchmark is written once against [`Communicator`] and runs unchanged
//! on all three; payload-level results are identical, only timings differ.

pub mod concurrent;
pub mod socket;
pub mod topology;
pub mod virtual_time;

pub(crate) mod mailbox;

use serde::{Deserialize, Serialize};

use crate::error::{MeshError, Result};
use crate::netmodel::{ChannelParams, StagedParams};

/// Identity of a rank inside a communicator, in `[0, world_size)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RankId(pub usize);

impl std::fmt::Display for RankId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Which runtime a communicator belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Concurrent,
    VirtualTime,
    Socket,
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendKind::Concurrent => write!(f, "concurrent"),
            BackendKind::VirtualTime => write!(f, "virtual_time"),
            BackendKind::Socket => write!(f, "socket"),
        }
    }
}

/// Cumulative send-side counters of one rank.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportStats {
    pub messages_sent: u64,
    pub bytes_sent: u64,
}

impl std::ops::Sub for TransportStats {
    type Output = TransportStats;
    fn sub(self, rhs: TransportStats) -> TransportStats {
        TransportStats {
            messages_sent: self.messages_sent - rhs.messages_sent,
            bytes_sent: self.bytes_sent - rhs.bytes_sent,
        }
    }
}

/// Cost model of the links driving the virtual-time backend.
///
/// `Channel` models point-to-point serial channels: a message occupies one
/// lane for `ceil(len / (c_n' * c_w)) / c_f` seconds and arrives one channel
/// latency after the last beat. `Staged` models the device-host-network
/// path: the write, exchange and read stages are serialized per message.
/// Each directed rank pair owns `lanes()` independent lanes (kernel-pair
/// replications); the two directions of a pair never contend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VirtualLink {
    Channel(ChannelParams),
    Staged(StagedParams),
}

impl VirtualLink {
    /// Independent lanes per directed rank pair.
    pub fn lanes(&self) -> usize {
        match self {
            VirtualLink::Channel(c) => (c.replications as usize).max(1),
            VirtualLink::Staged(_) => 2,
        }
    }

    /// Time the sending lane is occupied by a `len`-byte message.
    pub fn occupancy(&self, len: usize) -> f64 {
        match self {
            VirtualLink::Channel(c) => {
                (len as u64).div_ceil(c.pair_width_bytes()) as f64 / c.frequency_hz
            }
            VirtualLink::Staged(s) => s.total_time(len as u64),
        }
    }

    /// Additional flight time after the lane is released.
    pub fn flight_latency(&self) -> f64 {
        match self {
            VirtualLink::Channel(c) => c.latency_s,
            VirtualLink::Staged(_) => 0.0,
        }
    }
}

impl Default for VirtualLink {
    fn default() -> Self {
        VirtualLink::Channel(ChannelParams::default())
    }
}

/// Blocking point-to-point messaging plus the barrier collective.
///
/// Delivery is bit-exact and FIFO per `(sender, receiver, tag)`.
pub trait Communicator: Send + Sync {
    fn rank(&self) -> RankId;
    fn world_size(&self) -> usize;
    fn backend(&self) -> BackendKind;

    /// Enqueue `payload` for delivery to `to`. Blocks only until the backend
    /// accepted the message.
    fn send(&self, to: RankId, tag: u32, payload: &[u8]) -> Result<()>;

    /// Return the next payload from `from` with tag `tag`, blocking until it
    /// arrives.
    fn recv(&self, from: RankId, tag: u32) -> Result<Vec<u8>>;

    /// Concurrent send + receive without deadlock; `to == from == self`
    /// returns the rank's own payload.
    fn sendrecv(&self, to: RankId, from: RankId, tag: u32, payload: &[u8]) -> Result<Vec<u8>> {
        self.send(to, tag, payload)?;
        self.recv(from, tag)
    }

    /// No rank returns before every rank has entered.
    fn barrier(&self) -> Result<()>;

    /// Monotonic seconds on the backend's clock: wall time for the real
    /// backends, the rank's logical clock for virtual time. Benchmarks
    /// measure elapsed time by subtracting two readings.
    fn clock_seconds(&self) -> f64;

    /// The rank's logical clock; errors on non-virtual backends.
    fn virtual_clock(&self) -> Result<f64>;

    /// Model hook: advance this rank's clock by `seconds`. Virtual time adds
    /// to the logical clock, real backends sleep.
    fn advance(&self, seconds: f64);

    fn stats(&self) -> TransportStats;

    fn check_peer(&self, peer: RankId) -> Result<()> {
        if peer.0 >= self.world_size() {
            return Err(MeshError::Transport(format!(
                "rank {peer} outside world of size {}",
                self.world_size()
            )));
        }
        Ok(())
    }
}

/// Maximum frame payload on the socket backend.
pub const MAX_FRAME_BYTES: u64 = 1 << 31;

/// Tags at and above this value are reserved for the runtime itself.
pub const RESERVED_TAG_BASE: u32 = 0xFFFF_FF00;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn virtual_link_channel_occupancy_and_latency() {
        let link = VirtualLink::default();
        // One beat minimum, 6.4 ns per beat.
        assert!((link.occupancy(1) - 6.4e-9).abs() < 1e-15);
        assert!((link.occupancy(64) - 6.4e-9).abs() < 1e-15);
        assert!((link.occupancy(65) - 12.8e-9).abs() < 1e-15);
        assert_eq!(link.occupancy(0), 0.0);
        assert!((link.flight_latency() - 520e-9).abs() < 1e-15);
        assert_eq!(link.lanes(), 2);
    }

    #[test]
    fn virtual_link_staged_serializes_the_three_stages() {
        let s = StagedParams {
            write_bandwidth: 1e9,
            read_bandwidth: 2e9,
            host_net_bandwidth: 4e9,
            host_net_latency_s: 1e-6,
            copy_latency_s: 0.0,
        };
        let link = VirtualLink::Staged(s);
        let len = 1usize << 20;
        let expect = len as f64 / 1e9 + len as f64 / 4e9 + 1e-6 + len as f64 / 2e9;
        assert!((link.occupancy(len) - expect).abs() <= 1e-12 * expect);
        assert_eq!(link.flight_latency(), 0.0);
    }
}
