//! Discrete-event backend with logical clocks.
//!
//! Every rank carries a logical clock that only moves through explicit
//! `advance` calls, message arrivals and barriers. A message sent at clock
//! `t` starts its transfer on the earliest free lane of the directed
//! `(sender, receiver)` pair, occupies it for [`VirtualLink::occupancy`] and
//! becomes visible to the receiver one [`VirtualLink::flight_latency`] later;
//! the receive call returns at `max(receiver clock, arrival)`. Barrier exit
//! clocks equal the maximum entry clock. Sends never block, so back-to-back
//! sends serialize on the lane, not on the sender's clock.
//!
//! All shared state is keyed per sender or computed as an order-independent
//! maximum, which makes runs deterministic even though rank bodies execute
//! on ordinary threads.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex};

use super::{BackendKind, Communicator, RankId, TransportStats, VirtualLink};
use crate::error::{MeshError, Result};

struct ArrivedMessage {
    arrival: f64,
    payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
enum RankState {
    Running,
    WaitingRecv { from: usize, tag: u32 },
    WaitingBarrier,
    Done,
}

struct EngineState {
    clocks: Vec<f64>,
    states: Vec<RankState>,
    mailboxes: Vec<HashMap<(usize, u32), VecDeque<ArrivedMessage>>>,
    /// Lane release times per directed rank pair.
    lanes: HashMap<(usize, usize), Vec<f64>>,
    barrier_round: u64,
    barrier_count: usize,
    barrier_max_clock: f64,
    messages_sent: Vec<u64>,
    bytes_sent: Vec<u64>,
    failure: Option<String>,
}

struct Engine {
    world_size: usize,
    link: VirtualLink,
    state: Mutex<EngineState>,
    /// One wake channel per rank; senders signal exactly the receiver.
    wake: Vec<Condvar>,
}

/// Bounded yield-spin before parking a blocked receive; on a ready partner
/// the message usually lands within a few yields.
const RECV_SPIN_YIELDS: usize = 32;

impl Engine {
    fn new(world_size: usize, link: VirtualLink) -> Self {
        Engine {
            world_size,
            link,
            state: Mutex::new(EngineState {
                clocks: vec![0.0; world_size],
                states: vec![RankState::Running; world_size],
                mailboxes: (0..world_size).map(|_| HashMap::new()).collect(),
                lanes: HashMap::new(),
                barrier_round: 0,
                barrier_count: 0,
                barrier_max_clock: 0.0,
                messages_sent: vec![0; world_size],
                bytes_sent: vec![0; world_size],
                failure: None,
            }),
            wake: (0..world_size).map(|_| Condvar::new()).collect(),
        }
    }

    fn wake_all(&self) {
        for cv in &self.wake {
            cv.notify_all();
        }
    }

    /// Declare failure if every rank is blocked and nothing can unblock.
    fn check_stuck(&self, s: &mut EngineState) {
        let mut barrier_waiters = 0;
        for rank in 0..self.world_size {
            match &s.states[rank] {
                RankState::Running => return,
                RankState::Done => {}
                RankState::WaitingBarrier => barrier_waiters += 1,
                RankState::WaitingRecv { from, tag } => {
                    let satisfiable = s.mailboxes[rank]
                        .get(&(*from, *tag))
                        .is_some_and(|q| !q.is_empty());
                    if satisfiable {
                        return;
                    }
                }
            }
        }
        // A full barrier would have been released by its last entrant.
        if barrier_waiters == self.world_size {
            return;
        }
        let detail: Vec<String> = s
            .states
            .iter()
            .enumerate()
            .map(|(r, st)| format!("rank {r}: {st:?}"))
            .collect();
        s.failure = Some(format!(
            "virtual-time deadlock: no rank can make progress ({})",
            detail.join(", ")
        ));
        self.wake_all();
    }
}

/// Communicator handle of one rank on the virtual-time backend.
pub struct VirtualComm {
    rank: usize,
    engine: Arc<Engine>,
}

impl VirtualComm {
    /// Build handles for all ranks of a virtual communicator driven by
    /// `link`.
    pub fn create_world(world_size: usize, link: VirtualLink) -> Vec<VirtualComm> {
        assert!(world_size >= 1);
        let engine = Arc::new(Engine::new(world_size, link));
        (0..world_size)
            .map(|rank| VirtualComm {
                rank,
                engine: Arc::clone(&engine),
            })
            .collect()
    }

    fn fail_if_poisoned(s: &EngineState) -> Result<()> {
        match &s.failure {
            Some(msg) => Err(MeshError::Transport(msg.clone())),
            None => Ok(()),
        }
    }

    /// Mark this rank finished; other ranks blocking on it become a
    /// detectable deadlock.
    fn finish(&self) {
        let mut s = self.engine.state.lock().unwrap();
        s.states[self.rank] = RankState::Done;
        self.engine.check_stuck(&mut s);
        drop(s);
        self.engine.wake_all();
    }
}

impl Communicator for VirtualComm {
    fn rank(&self) -> RankId {
        RankId(self.rank)
    }

    fn world_size(&self) -> usize {
        self.engine.world_size
    }

    fn backend(&self) -> BackendKind {
        BackendKind::VirtualTime
    }

    fn send(&self, to: RankId, tag: u32, payload: &[u8]) -> Result<()> {
        self.check_peer(to)?;
        let engine = &self.engine;
        let mut s = engine.state.lock().unwrap();
        Self::fail_if_poisoned(&s)?;
        let now = s.clocks[self.rank];
        let lanes = s
            .lanes
            .entry((self.rank, to.0))
            .or_insert_with(|| vec![0.0; engine.link.lanes()]);
        let lane = (0..lanes.len())
            .min_by(|&a, &b| lanes[a].total_cmp(&lanes[b]))
            .unwrap();
        let start = now.max(lanes[lane]);
        let release = start + engine.link.occupancy(payload.len());
        lanes[lane] = release;
        let arrival = release + engine.link.flight_latency();
        s.mailboxes[to.0]
            .entry((self.rank, tag))
            .or_default()
            .push_back(ArrivedMessage {
                arrival,
                payload: payload.to_vec(),
            });
        s.messages_sent[self.rank] += 1;
        s.bytes_sent[self.rank] += payload.len() as u64;
        drop(s);
        engine.wake[to.0].notify_all();
        Ok(())
    }

    fn recv(&self, from: RankId, tag: u32) -> Result<Vec<u8>> {
        self.check_peer(from)?;
        let engine = &self.engine;
        let mut spins = 0;
        let mut s = engine.state.lock().unwrap();
        loop {
            Self::fail_if_poisoned(&s)?;
            if let Some(msg) = s.mailboxes[self.rank]
                .get_mut(&(from.0, tag))
                .and_then(VecDeque::pop_front)
            {
                s.states[self.rank] = RankState::Running;
                s.clocks[self.rank] = s.clocks[self.rank].max(msg.arrival);
                return Ok(msg.payload);
            }
            if spins < RECV_SPIN_YIELDS {
                spins += 1;
                drop(s);
                std::thread::yield_now();
                s = engine.state.lock().unwrap();
                continue;
            }
            s.states[self.rank] = RankState::WaitingRecv { from: from.0, tag };
            engine.check_stuck(&mut s);
            if s.failure.is_some() {
                continue;
            }
            s = engine.wake[self.rank].wait(s).unwrap();
        }
    }

    fn barrier(&self) -> Result<()> {
        let engine = &self.engine;
        let mut s = engine.state.lock().unwrap();
        Self::fail_if_poisoned(&s)?;
        let round = s.barrier_round;
        s.barrier_count += 1;
        s.barrier_max_clock = s.barrier_max_clock.max(s.clocks[self.rank]);
        if s.barrier_count == engine.world_size {
            let exit_clock = s.barrier_max_clock;
            for clock in &mut s.clocks {
                *clock = exit_clock;
            }
            for st in &mut s.states {
                if *st == RankState::WaitingBarrier {
                    *st = RankState::Running;
                }
            }
            s.barrier_count = 0;
            s.barrier_max_clock = 0.0;
            s.barrier_round += 1;
            drop(s);
            engine.wake_all();
            return Ok(());
        }
        s.states[self.rank] = RankState::WaitingBarrier;
        engine.check_stuck(&mut s);
        while s.barrier_round == round {
            Self::fail_if_poisoned(&s)?;
            s = engine.wake[self.rank].wait(s).unwrap();
        }
        s.states[self.rank] = RankState::Running;
        Ok(())
    }

    fn clock_seconds(&self) -> f64 {
        self.engine.state.lock().unwrap().clocks[self.rank]
    }

    fn virtual_clock(&self) -> Result<f64> {
        Ok(self.clock_seconds())
    }

    fn advance(&self, seconds: f64) {
        let mut s = self.engine.state.lock().unwrap();
        s.clocks[self.rank] += seconds;
    }

    fn stats(&self) -> TransportStats {
        let s = self.engine.state.lock().unwrap();
        TransportStats {
            messages_sent: s.messages_sent[self.rank],
            bytes_sent: s.bytes_sent[self.rank],
        }
    }
}

/// Run `body` once per rank over a fresh virtual-time world and collect the
/// results in rank order.
pub fn run_virtual_time<T, F>(world_size: usize, link: VirtualLink, body: F) -> Vec<T>
where
    T: Send,
    F: Fn(&VirtualComm) -> T + Sync,
{
    let comms = VirtualComm::create_world(world_size, link);
    let body = &body;
    std::thread::scope(|scope| {
        let handles: Vec<_> = comms
            .iter()
            .map(|comm| {
                scope.spawn(move || {
                    let out = body(comm);
                    comm.finish();
                    out
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("rank thread panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{ChannelParams, StagedParams};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn arrival_matches_channel_model_for_64_bytes() {
        // 64 B over the default link: one beat (6.4 ns) + 520 ns latency.
        let deltas = run_virtual_time(2, VirtualLink::default(), |comm| {
            if comm.rank().0 == 0 {
                comm.send(RankId(1), 0, &[0u8; 64]).unwrap();
                0.0
            } else {
                let t0 = comm.virtual_clock().unwrap();
                comm.recv(RankId(0), 0).unwrap();
                comm.virtual_clock().unwrap() - t0
            }
        });
        assert!(close(deltas[1], 526.4e-9, 1e-15), "got {}", deltas[1]);
    }

    #[test]
    fn arrival_matches_channel_model_for_2048_bytes() {
        let deltas = run_virtual_time(2, VirtualLink::default(), |comm| {
            if comm.rank().0 == 0 {
                comm.send(RankId(1), 0, &[0u8; 2048]).unwrap();
                0.0
            } else {
                comm.recv(RankId(0), 0).unwrap();
                comm.virtual_clock().unwrap()
            }
        });
        assert!(close(deltas[1], 724.8e-9, 1e-15), "got {}", deltas[1]);
    }

    #[test]
    fn zero_byte_message_costs_latency_only() {
        let deltas = run_virtual_time(2, VirtualLink::default(), |comm| {
            if comm.rank().0 == 0 {
                comm.send(RankId(1), 0, &[]).unwrap();
                0.0
            } else {
                comm.recv(RankId(0), 0).unwrap();
                comm.virtual_clock().unwrap()
            }
        });
        assert!(close(deltas[1], 520e-9, 1e-15));
    }

    #[test]
    fn staged_path_sums_the_four_terms() {
        let params = StagedParams {
            write_bandwidth: 11.2e9,
            read_bandwidth: 11.2e9,
            host_net_bandwidth: 12.5e9,
            host_net_latency_s: 1e-6,
            copy_latency_s: 0.0,
        };
        let len = 1usize << 20;
        let expected = len as f64 / 11.2e9 + len as f64 / 12.5e9 + 1e-6 + len as f64 / 11.2e9;
        let deltas = run_virtual_time(2, VirtualLink::Staged(params), |comm| {
            if comm.rank().0 == 0 {
                comm.send(RankId(1), 0, &vec![0u8; len]).unwrap();
                0.0
            } else {
                comm.recv(RankId(0), 0).unwrap();
                comm.virtual_clock().unwrap()
            }
        });
        assert!(close(deltas[1], expected, 1e-12 * expected));
    }

    #[test]
    fn back_to_back_sends_serialize_on_the_lanes() {
        // Three equal messages on a two-lane link: the third waits for the
        // first lane to clear.
        let link = VirtualLink::Channel(ChannelParams {
            replications: 2,
            ..ChannelParams::default()
        });
        let occupancy = link.occupancy(64);
        let latency = link.flight_latency();
        let arrivals = run_virtual_time(2, link, |comm| {
            if comm.rank().0 == 0 {
                for _ in 0..3 {
                    comm.send(RankId(1), 0, &[0u8; 64]).unwrap();
                }
                Vec::new()
            } else {
                (0..3)
                    .map(|_| {
                        comm.recv(RankId(0), 0).unwrap();
                        comm.virtual_clock().unwrap()
                    })
                    .collect()
            }
        });
        let got = &arrivals[1];
        assert!(close(got[0], occupancy + latency, 1e-15));
        assert!(close(got[1], occupancy + latency, 1e-15));
        assert!(close(got[2], 2.0 * occupancy + latency, 1e-15));
    }

    #[test]
    fn barrier_exit_clock_is_max_of_entry_clocks() {
        let exits = run_virtual_time(4, VirtualLink::default(), |comm| {
            comm.advance(comm.rank().0 as f64 * 1.5);
            comm.barrier().unwrap();
            comm.virtual_clock().unwrap()
        });
        for exit in exits {
            assert!(close(exit, 4.5, 1e-12));
        }
    }

    #[test]
    fn clocks_are_monotone_through_a_benchmark_like_exchange() {
        let traces = run_virtual_time(4, VirtualLink::default(), |comm| {
            let me = comm.rank().0;
            let world = comm.world_size();
            let next = RankId((me + 1) % world);
            let prev = RankId((me + world - 1) % world);
            let mut trace = vec![comm.virtual_clock().unwrap()];
            for _ in 0..10 {
                comm.send(next, 0, &[1u8; 256]).unwrap();
                comm.recv(prev, 0).unwrap();
                trace.push(comm.virtual_clock().unwrap());
            }
            comm.barrier().unwrap();
            trace.push(comm.virtual_clock().unwrap());
            trace
        });
        for trace in traces {
            assert!(trace.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn deterministic_across_runs() {
        let run = || {
            run_virtual_time(4, VirtualLink::default(), |comm| {
                let me = comm.rank().0;
                let world = comm.world_size();
                let next = RankId((me + 1) % world);
                let prev = RankId((me + world - 1) % world);
                for i in 0..50u32 {
                    comm.send(next, i % 3, &vec![me as u8; 64 + i as usize]).unwrap();
                    comm.recv(prev, i % 3).unwrap();
                }
                comm.virtual_clock().unwrap()
            })
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn self_send_works() {
        let out = run_virtual_time(1, VirtualLink::default(), |comm| {
            comm.sendrecv(RankId(0), RankId(0), 0, b"self").unwrap()
        });
        assert_eq!(out[0], b"self");
    }

    #[test]
    fn deadlock_is_detected() {
        // Both ranks wait for a message that is never sent.
        let outs = run_virtual_time(2, VirtualLink::default(), |comm| {
            let other = RankId(1 - comm.rank().0);
            comm.recv(other, 9)
        });
        assert!(outs.iter().all(|o| o.is_err()));
    }

    #[test]
    fn virtual_clock_unsupported_on_concurrent() {
        let outs = crate::transport::concurrent::run_concurrent(1, |comm| {
            comm.virtual_clock().is_err()
        });
        assert!(outs[0]);
    }
}
