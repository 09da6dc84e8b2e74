//! Effective bandwidth benchmark over a ring.
//!
//! For each of the 21 power-of-two message sizes every rank exchanges a
//! message with both ring neighbors simultaneously, repeated enough times to
//! amortize clock resolution. A repetition is scored by the slowest rank;
//! each size keeps its best repetition and the effective bandwidth is the
//! mean of the 21 per-size maxima.

use serde::{Deserialize, Serialize};

use super::CommMode;
use crate::error::{MeshError, Result};
use crate::netmodel::{model_channel_bandwidth, model_staged_bandwidth};
use crate::transport::topology::ring_neighbors;
use crate::transport::{Communicator, VirtualLink};

/// The 21 message sizes, 2^0 .. 2^20 bytes.
pub fn message_sizes() -> Vec<u64> {
    (0..=20).map(|k| 1u64 << k).collect()
}

/// Iterations per (size, repetition) timed region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationSchedule {
    /// `max(1, 2^15 / L)`: small messages loop more to amortize clock
    /// resolution.
    Auto,
    Fixed(u64),
}

impl IterationSchedule {
    pub fn iterations(&self, len: u64) -> u64 {
        match self {
            IterationSchedule::Auto => ((1u64 << 15) / len).max(1),
            IterationSchedule::Fixed(n) => (*n).max(1),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeffConfig {
    pub mode: CommMode,
    pub repetitions: usize,
    pub iterations: IterationSchedule,
}

impl Default for BeffConfig {
    fn default() -> Self {
        BeffConfig {
            mode: CommMode::Direct,
            repetitions: 2,
            iterations: IterationSchedule::Auto,
        }
    }
}

const TAG_FORWARD: u32 = 1;
const TAG_BACKWARD: u32 = 2;

/// Buffer fill rule: every byte of an `L`-byte message is `log2(L) mod 256`.
pub fn fill_byte(len: u64) -> u8 {
    (len.trailing_zeros() % 256) as u8
}

/// Per-rank outcome: elapsed seconds per (size, repetition) plus content
/// validation counters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeffRankOutcome {
    /// `elapsed[size_index][repetition]`.
    pub elapsed: Vec<Vec<f64>>,
    pub validation_failures: u64,
}

/// Exchange messages of every size with both ring neighbors.
pub fn run_beff(comm: &dyn Communicator, cfg: &BeffConfig) -> Result<BeffRankOutcome> {
    let world = comm.world_size();
    let (prev, next) = ring_neighbors(comm.rank(), world);
    let mut elapsed = Vec::with_capacity(21);
    let mut validation_failures = 0u64;
    for len in message_sizes() {
        let iters = cfg.iterations.iterations(len);
        let pattern = vec![fill_byte(len); len as usize];
        let mut reps = Vec::with_capacity(cfg.repetitions);
        for _ in 0..cfg.repetitions.max(1) {
            let mut last_recv: Option<(Vec<u8>, Vec<u8>)> = None;
            let (seconds, ()) = super::measure(comm, || {
                for _ in 0..iters {
                    let (from_prev, from_next) = match cfg.mode {
                        CommMode::Direct => {
                            comm.send(next, TAG_FORWARD, &pattern)?;
                            comm.send(prev, TAG_BACKWARD, &pattern)?;
                            let a = comm.recv(prev, TAG_FORWARD)?;
                            let b = comm.recv(next, TAG_BACKWARD)?;
                            (a, b)
                        }
                        CommMode::Staged => {
                            // Device buffer to host staging copy, host
                            // exchange, host to device copy.
                            let host_out = pattern.clone();
                            comm.send(next, TAG_FORWARD, &host_out)?;
                            comm.send(prev, TAG_BACKWARD, &host_out)?;
                            let host_in_prev = comm.recv(prev, TAG_FORWARD)?;
                            let host_in_next = comm.recv(next, TAG_BACKWARD)?;
                            (host_in_prev.clone(), host_in_next.clone())
                        }
                    };
                    last_recv = Some((from_prev, from_next));
                }
                Ok(())
            })?;
            reps.push(seconds);
            if let Some((a, b)) = last_recv {
                let byte = fill_byte(len);
                if !(a.iter().all(|&x| x == byte) && b.iter().all(|&x| x == byte)) {
                    validation_failures += 1;
                }
            }
        }
        elapsed.push(reps);
    }
    Ok(BeffRankOutcome {
        elapsed,
        validation_failures,
    })
}

/// Mean of exactly 21 per-size best bandwidths (the derived metric).
pub fn effective_bandwidth(per_size_best: &[f64]) -> Result<f64> {
    if per_size_best.len() != 21 {
        return Err(MeshError::Config(format!(
            "effective bandwidth needs 21 per-size values, got {}",
            per_size_best.len()
        )));
    }
    Ok(per_size_best.iter().sum::<f64>() / 21.0)
}

/// One row of the result table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeffSizeRow {
    pub message_bytes: u64,
    pub iterations_count: u64,
    /// Aggregated over all ranks and both directions, best repetition.
    pub bandwidth_bytes_per_s: f64,
    /// Aggregated bandwidth divided by the ring size: the per-connection
    /// (send/receive pair) value the channel model predicts.
    pub per_pair_bytes_per_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_per_pair_bytes_per_s: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeffMetrics {
    pub rows: Vec<BeffSizeRow>,
    pub effective_bandwidth_bytes_per_s: f64,
    pub validation_ok: bool,
}

/// Combine per-rank outcomes: aggregated bandwidth
/// `world * 2 * L * iterations / t_slowest`, best repetition per size.
pub fn aggregate(
    world: usize,
    cfg: &BeffConfig,
    link: Option<&VirtualLink>,
    outcomes: &[BeffRankOutcome],
) -> Result<BeffMetrics> {
    let sizes = message_sizes();
    let mut rows = Vec::with_capacity(sizes.len());
    let mut best_per_size = Vec::with_capacity(sizes.len());
    for (si, &len) in sizes.iter().enumerate() {
        let per_rank: Vec<Vec<f64>> = outcomes.iter().map(|o| o.elapsed[si].clone()).collect();
        let slowest = super::slowest_per_repetition(&per_rank);
        let iters = cfg.iterations.iterations(len);
        let best_bw = slowest
            .iter()
            .map(|&t| (world as f64) * 2.0 * len as f64 * iters as f64 / t)
            .fold(0.0, f64::max);
        best_per_size.push(best_bw);
        let model = link.map(|l| match l {
            VirtualLink::Channel(c) => model_channel_bandwidth(len, c),
            VirtualLink::Staged(s) => model_staged_bandwidth(len, s),
        });
        rows.push(BeffSizeRow {
            message_bytes: len,
            iterations_count: iters,
            bandwidth_bytes_per_s: best_bw,
            per_pair_bytes_per_s: best_bw / world as f64,
            model_per_pair_bytes_per_s: model,
        });
    }
    Ok(BeffMetrics {
        effective_bandwidth_bytes_per_s: effective_bandwidth(&best_per_size)? / 1.0,
        validation_ok: outcomes.iter().all(|o| o.validation_failures == 0),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::ChannelParams;
    use crate::transport::virtual_time::run_virtual_time;

    #[test]
    fn effective_bandwidth_is_the_mean() {
        let flat = vec![10e9; 21];
        assert_eq!(effective_bandwidth(&flat).unwrap(), 10e9);

        let mut spiky = vec![0.0; 21];
        spiky[7] = 21e9;
        assert_eq!(effective_bandwidth(&spiky).unwrap(), 1e9);

        assert!(effective_bandwidth(&[1.0; 20]).is_err());
    }

    #[test]
    fn effective_bandwidth_of_the_channel_model_matches_hand_mean() {
        // Independent arithmetic on the bandwidth equation, then through the
        // metric.
        let values: Vec<f64> = (0..=20)
            .map(|k| {
                let len = (1u64 << k) as f64;
                2.0 * len / ((len / 64.0).ceil() * 6.4e-9 + 520e-9)
            })
            .collect();
        let hand_mean = values.iter().sum::<f64>() / 21.0;
        let got = effective_bandwidth(&values).unwrap();
        assert!((got - hand_mean).abs() <= 1e-9 * hand_mean);
        let p = ChannelParams::default();
        for (k, v) in values.iter().enumerate() {
            let m = model_channel_bandwidth(1u64 << k, &p);
            assert!((m - v).abs() <= 1e-9 * v, "size 2^{k}");
        }
    }

    #[test]
    fn iteration_schedule_amortizes_small_sizes() {
        let auto = IterationSchedule::Auto;
        assert_eq!(auto.iterations(1), 1 << 15);
        assert_eq!(auto.iterations(1 << 15), 1);
        assert_eq!(auto.iterations(1 << 20), 1);
        assert_eq!(IterationSchedule::Fixed(7).iterations(1), 7);
    }

    #[test]
    fn fill_byte_is_log2() {
        assert_eq!(fill_byte(1), 0);
        assert_eq!(fill_byte(2), 1);
        assert_eq!(fill_byte(1 << 20), 20);
    }

    #[test]
    fn metric_lies_between_min_and_max_per_size() {
        let cfg = BeffConfig {
            repetitions: 1,
            iterations: IterationSchedule::Fixed(2),
            ..BeffConfig::default()
        };
        let outs = run_virtual_time(4, VirtualLink::default(), |comm| {
            run_beff(comm, &cfg).unwrap()
        });
        let metrics = aggregate(4, &cfg, Some(&VirtualLink::default()), &outs).unwrap();
        let lo = metrics
            .rows
            .iter()
            .map(|r| r.bandwidth_bytes_per_s)
            .fold(f64::INFINITY, f64::min);
        let hi = metrics
            .rows
            .iter()
            .map(|r| r.bandwidth_bytes_per_s)
            .fold(0.0, f64::max);
        assert!(lo <= metrics.effective_bandwidth_bytes_per_s);
        assert!(metrics.effective_bandwidth_bytes_per_s <= hi);
        assert!(metrics.validation_ok);
    }

    #[test]
    fn virtual_direct_mode_reproduces_the_channel_model() {
        // Two ranks, default link: per-pair bandwidth equals the channel
        // equation for every size.
        let cfg = BeffConfig {
            repetitions: 1,
            iterations: IterationSchedule::Fixed(4),
            ..BeffConfig::default()
        };
        let outs = run_virtual_time(2, VirtualLink::default(), |comm| {
            run_beff(comm, &cfg).unwrap()
        });
        let metrics = aggregate(2, &cfg, Some(&VirtualLink::default()), &outs).unwrap();
        for row in &metrics.rows {
            let model = row.model_per_pair_bytes_per_s.unwrap();
            let rel = (row.per_pair_bytes_per_s - model).abs() / model;
            assert!(
                rel <= 0.02,
                "size {}: measured {} vs model {model}",
                row.message_bytes,
                row.per_pair_bytes_per_s
            );
        }
    }

    #[test]
    fn staged_mode_on_concurrent_backend_validates() {
        let cfg = BeffConfig {
            mode: CommMode::Staged,
            repetitions: 1,
            iterations: IterationSchedule::Fixed(1),
        };
        let outs = crate::transport::concurrent::run_concurrent(2, |comm| {
            run_beff(comm, &cfg).unwrap()
        });
        let metrics = aggregate(2, &cfg, None, &outs).unwrap();
        assert!(metrics.validation_ok);
        assert!(metrics.effective_bandwidth_bytes_per_s > 0.0);
    }

    #[test]
    fn single_rank_staged_self_loop() {
        let cfg = BeffConfig {
            mode: CommMode::Staged,
            repetitions: 1,
            iterations: IterationSchedule::Fixed(1),
        };
        let outs = crate::transport::concurrent::run_concurrent(1, |comm| {
            run_beff(comm, &cfg).unwrap()
        });
        assert_eq!(outs[0].elapsed.len(), 21);
        assert_eq!(outs[0].validation_failures, 0);
    }
}
