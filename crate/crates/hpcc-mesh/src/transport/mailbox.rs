//! Per-rank inbox shared by the concurrent and socket backends: FIFO queues
//! keyed by `(sender, tag)` with blocking receive.

use std::collections::{HashMap, VecDeque};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use crate::error::{MeshError, Result};

/// How long a blocking receive waits before declaring the peer lost.
pub(crate) const RECV_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Default)]
pub(crate) struct Mailbox {
    queues: Mutex<HashMap<(usize, u32), VecDeque<Vec<u8>>>>,
    available: Condvar,
}

impl Mailbox {
    pub fn new() -> Self {
        Mailbox::default()
    }

    pub fn push(&self, from: usize, tag: u32, payload: Vec<u8>) {
        let mut queues = self.queues.lock().unwrap();
        queues.entry((from, tag)).or_default().push_back(payload);
        self.available.notify_all();
    }

    pub fn pop_blocking(&self, from: usize, tag: u32) -> Result<Vec<u8>> {
        // A short yield-spin catches messages from an actively sending peer
        // without a park/unpark round trip.
        const SPIN_YIELDS: usize = 16;
        let mut spins = 0;
        let mut queues = self.queues.lock().unwrap();
        loop {
            if let Some(payload) = queues.get_mut(&(from, tag)).and_then(VecDeque::pop_front) {
                return Ok(payload);
            }
            if spins < SPIN_YIELDS {
                spins += 1;
                drop(queues);
                std::thread::yield_now();
                queues = self.queues.lock().unwrap();
                continue;
            }
            let (guard, timeout) = self
                .available
                .wait_timeout(queues, RECV_TIMEOUT)
                .unwrap();
            queues = guard;
            if timeout.timed_out()
                && queues
                    .get(&(from, tag))
                    .map_or(true, |q| q.is_empty())
            {
                return Err(MeshError::Transport(format!(
                    "receive from rank {from} tag {tag} timed out after {RECV_TIMEOUT:?}"
                )));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fifo_per_sender_and_tag() {
        let mb = Mailbox::new();
        mb.push(1, 0, vec![1]);
        mb.push(1, 0, vec![2]);
        mb.push(2, 0, vec![3]);
        assert_eq!(mb.pop_blocking(1, 0).unwrap(), vec![1]);
        assert_eq!(mb.pop_blocking(2, 0).unwrap(), vec![3]);
        assert_eq!(mb.pop_blocking(1, 0).unwrap(), vec![2]);
    }

    #[test]
    fn tags_are_demultiplexed() {
        let mb = Mailbox::new();
        mb.push(0, 0, vec![10]);
        mb.push(0, 1, vec![11]);
        // Receive out of tag order.
        assert_eq!(mb.pop_blocking(0, 1).unwrap(), vec![11]);
        assert_eq!(mb.pop_blocking(0, 0).unwrap(), vec![10]);
    }
}
