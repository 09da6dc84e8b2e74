//! In-process backend: one OS thread per rank, messages through shared
//! mailboxes, wall-clock timing.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Barrier};
use std::time::Instant;

use super::mailbox::Mailbox;
use super::{BackendKind, Communicator, RankId, TransportStats};
use crate::error::{MeshError, Result};

struct Router {
    world_size: usize,
    mailboxes: Vec<Mailbox>,
    barrier: Barrier,
    messages_sent: Vec<AtomicU64>,
    bytes_sent: Vec<AtomicU64>,
    epoch: Instant,
}

/// Communicator handle owned by one rank's thread.
pub struct ConcurrentComm {
    rank: usize,
    router: Arc<Router>,
}

impl ConcurrentComm {
    /// Build handles for all ranks of a `world_size` communicator.
    pub fn create_world(world_size: usize) -> Vec<ConcurrentComm> {
        assert!(world_size >= 1);
        let router = Arc::new(Router {
            world_size,
            mailboxes: (0..world_size).map(|_| Mailbox::new()).collect(),
            barrier: Barrier::new(world_size),
            messages_sent: (0..world_size).map(|_| AtomicU64::new(0)).collect(),
            bytes_sent: (0..world_size).map(|_| AtomicU64::new(0)).collect(),
            epoch: Instant::now(),
        });
        (0..world_size)
            .map(|rank| ConcurrentComm {
                rank,
                router: Arc::clone(&router),
            })
            .collect()
    }
}

impl Communicator for ConcurrentComm {
    fn rank(&self) -> RankId {
        RankId(self.rank)
    }

    fn world_size(&self) -> usize {
        self.router.world_size
    }

    fn backend(&self) -> BackendKind {
        BackendKind::Concurrent
    }

    fn send(&self, to: RankId, tag: u32, payload: &[u8]) -> Result<()> {
        self.check_peer(to)?;
        self.router.mailboxes[to.0].push(self.rank, tag, payload.to_vec());
        self.router.messages_sent[self.rank].fetch_add(1, Ordering::Relaxed);
        self.router.bytes_sent[self.rank].fetch_add(payload.len() as u64, Ordering::Relaxed);
        Ok(())
    }

    fn recv(&self, from: RankId, tag: u32) -> Result<Vec<u8>> {
        self.check_peer(from)?;
        self.router.mailboxes[self.rank].pop_blocking(from.0, tag)
    }

    fn barrier(&self) -> Result<()> {
        self.router.barrier.wait();
        Ok(())
    }

    fn clock_seconds(&self) -> f64 {
        self.router.epoch.elapsed().as_secs_f64()
    }

    fn virtual_clock(&self) -> Result<f64> {
        Err(MeshError::Unsupported(
            "virtual clock on the concurrent backend".into(),
        ))
    }

    fn advance(&self, seconds: f64) {
        if seconds > 0.0 {
            std::thread::sleep(std::time::Duration::from_secs_f64(seconds));
        }
    }

    fn stats(&self) -> TransportStats {
        TransportStats {
            messages_sent: self.router.messages_sent[self.rank].load(Ordering::Relaxed),
            bytes_sent: self.router.bytes_sent[self.rank].load(Ordering::Relaxed),
        }
    }
}

/// Run `body` once per rank on dedicated threads and collect the results in
/// rank order. Panics in a rank propagate.
pub fn run_concurrent<T, F>(world_size: usize, body: F) -> Vec<T>
where
    T: Send,
    F: Fn(&ConcurrentComm) -> T + Sync,
{
    let comms = ConcurrentComm::create_world(world_size);
    let body = &body;
    std::thread::scope(|scope| {
        let handles: Vec<_> = comms
            .iter()
            .map(|comm| scope.spawn(move || body(comm)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("rank thread panicked"))
            .collect()
    })
}
