//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line and enforcing its runtime budget. Hardware-scale absolute
//! numbers are out of reach on a workstation, so the gate rests on exact
//! model agreement in virtual time plus oracle comparisons.

use std::time::Instant;

use hpcc_mesh::bench::beff::{BeffConfig, IterationSchedule};
use hpcc_mesh::bench::hpl::{HplConfig, RESIDUAL_LIMIT};
use hpcc_mesh::bench::ptrans::{dense_oracle, PtransConfig};
use hpcc_mesh::bench::randomaccess::{lfsr_skip, lfsr_step, RaConfig, LFSR_START};
use hpcc_mesh::bench::CommMode;
use hpcc_mesh::blockmat::{generate_matrix, Distribution, Grid};
use hpcc_mesh::harness::{
    collect_outcomes, launch, BenchMetrics, BenchOutcome, Benchmark, DelayProbeConfig, RunConfig,
    TransportChoice,
};
use hpcc_mesh::netmodel::{
    model_channel_bandwidth, model_channel_time, model_ptrans_memory_bandwidth,
    model_staged_bandwidth, ChannelParams, StagedParams,
};

struct Budget {
    name: &'static str,
    start: Instant,
    limit_s: f64,
}

impl Budget {
    fn new(name: &'static str, limit_s: f64) -> Self {
        Budget {
            name,
            start: Instant::now(),
            limit_s,
        }
    }

    fn done(self, detail: &str) {
        let elapsed = self.start.elapsed().as_secs_f64();
        println!("PASS {}: {detail} ({elapsed:.2} s)", self.name);
        assert!(
            elapsed < self.limit_s,
            "{} exceeded its {} s budget: {elapsed:.2} s",
            self.name,
            self.limit_s
        );
    }
}

fn beff_run(ranks: usize, iterations: IterationSchedule) -> hpcc_mesh::bench::beff::BeffMetrics {
    let cfg = RunConfig::new(
        Benchmark::Beff(BeffConfig {
            mode: CommMode::Direct,
            repetitions: 1,
            iterations,
        }),
        TransportChoice::Virtual,
        ranks,
    );
    let report = launch(&cfg).expect("beff run");
    assert!(report.validation_ok, "payload validation failed");
    match report.metrics.unwrap() {
        BenchMetrics::Beff(m) => m,
        other => panic!("unexpected metrics {other:?}"),
    }
}

#[test]
fn criterion_01_beff_model_agreement() {
    let budget = Budget::new("criterion 1 (b_eff model agreement)", 5.0);
    let metrics = beff_run(2, IterationSchedule::Auto);
    let params = ChannelParams::default();
    let mut worst: f64 = 0.0;
    for row in &metrics.rows {
        let model = model_channel_bandwidth(row.message_bytes, &params);
        let rel = (row.per_pair_bytes_per_s - model).abs() / model;
        worst = worst.max(rel);
        assert!(
            rel <= 0.02,
            "size {}: measured {} vs model {model}",
            row.message_bytes,
            row.per_pair_bytes_per_s
        );
    }
    // Spot values from the bandwidth equation.
    let one_byte = metrics.rows[0].per_pair_bytes_per_s;
    assert!((one_byte - 3.80e6).abs() / 3.80e6 < 0.02, "1 B: {one_byte}");
    let mib = metrics.rows[20].per_pair_bytes_per_s;
    assert!((mib - 19.9e9).abs() / 19.9e9 < 0.02, "1 MiB: {mib}");
    budget.done(&format!(
        "21 sizes within 2% of the channel model (worst {:.2e}); 1 B = {:.3} MB/s, 1 MiB = {:.2} GB/s",
        worst,
        one_byte / 1e6,
        mib / 1e9
    ));
}

#[test]
fn criterion_02_beff_scaling() {
    let budget = Budget::new("criterion 2 (b_eff scaling)", 30.0);
    // The virtual-time result is independent of the iteration count, so a
    // short fixed schedule keeps the large rings inside the budget.
    let base = beff_run(2, IterationSchedule::Fixed(2)).effective_bandwidth_bytes_per_s;
    let mut detail = format!("2 ranks = {:.3} GB/s", base / 1e9);
    for n in [4usize, 8, 16] {
        let eff = beff_run(n, IterationSchedule::Fixed(2)).effective_bandwidth_bytes_per_s;
        let expected = base * n as f64 / 2.0;
        let rel = (eff - expected).abs() / expected;
        assert!(rel <= 0.02, "{n} ranks: {eff} vs expected {expected}");
        detail.push_str(&format!(", {n} ranks = {:.1}x", eff / base));
    }
    budget.done(&detail);
}

fn ptrans_outcomes(cfg: &RunConfig) -> Vec<hpcc_mesh::bench::ptrans::PtransRankOutcome> {
    collect_outcomes(cfg)
        .expect("ptrans run")
        .into_iter()
        .map(|r| match r.expect("rank failed") {
            BenchOutcome::Ptrans(o) => o,
            other => panic!("unexpected outcome {other:?}"),
        })
        .collect()
}

fn f32_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

#[test]
fn criterion_03_ptrans_correctness() {
    let budget = Budget::new("criterion 3 (PTRANS correctness)", 10.0);
    for (n, block) in [(64usize, 16usize), (512, 64)] {
        let oracle = f32_bytes(&dense_oracle::<f32>(n, block, 42).unwrap());
        for grid_dim in [1usize, 2] {
            let cfg = RunConfig::new(
                Benchmark::Ptrans(PtransConfig {
                    n,
                    block_size: block,
                    grid_dim,
                    mode: CommMode::Direct,
                    repetitions: 1,
                    seed: 42,
                    collect_result: true,
                    ..Default::default()
                }),
                TransportChoice::Inproc,
                grid_dim * grid_dim,
            );
            let outs = ptrans_outcomes(&cfg);
            assert_eq!(
                outs[0].collected_dense.as_ref().unwrap(),
                &oracle,
                "n={n} P=Q={grid_dim} differs from the dense oracle"
            );
            let residual = outs
                .iter()
                .map(|o| o.local_max_residual)
                .fold(0.0, f64::max);
            assert_eq!(residual, 0.0, "n={n} P=Q={grid_dim}");
        }
    }
    budget.done("n in {64, 512}, P=Q in {1, 2}: bitwise equal to the dense oracle, residual 0");
}

fn hpl_factors(n: usize, torus: usize, overlap: bool) -> (Vec<u8>, f64) {
    let cfg = RunConfig::new(
        Benchmark::Hpl(HplConfig {
            n,
            block_size_log: 6,
            register_block_log: 3,
            torus_dim: torus,
            mode: CommMode::Direct,
            overlap,
            repetitions: 1,
            seed: 42,
            collect_factors: true,
            ..Default::default()
        }),
        TransportChoice::Inproc,
        torus * torus,
    );
    let outs = collect_outcomes(&cfg).expect("hpl run");
    let rank0 = match outs.into_iter().next().unwrap().expect("rank failed") {
        BenchOutcome::Hpl(o) => o,
        other => panic!("unexpected outcome {other:?}"),
    };
    (
        rank0.factors_dense.expect("factors collected"),
        rank0.residual.expect("solve ran on rank 0"),
    )
}

fn le_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

#[test]
fn criterion_04_hpl_factor_correctness() {
    let budget = Budget::new("criterion 4 (HPL factor correctness)", 60.0);
    let mut detail = String::new();
    for n in [256usize, 512, 1024] {
        let (f1, r1) = hpl_factors(n, 1, true);
        let (f2, r2) = hpl_factors(n, 2, true);
        assert!(r1 <= RESIDUAL_LIMIT, "n={n} T=1 residual {r1}");
        assert!(r2 <= RESIDUAL_LIMIT, "n={n} T=2 residual {r2}");

        // T=1 vs T=2 agreement within 1e-5 relative.
        let a1 = le_f32(&f1);
        let a2 = le_f32(&f2);
        let scale = a1.iter().map(|v| v.abs()).fold(0.0f32, f32::max) as f64;
        let mut worst: f64 = 0.0;
        for (x, y) in a1.iter().zip(a2.iter()) {
            worst = worst.max((*x as f64 - *y as f64).abs() / scale);
        }
        assert!(worst <= 1e-5, "n={n}: T=1 vs T=2 differ by {worst}");

        // Reassembled L*U reproduces A within 1e-4 relative (f64 product so
        // only factorization error is measured).
        let grid = Grid::new(1, 1);
        let dense_a = generate_matrix::<f32>(n, 64, grid, Distribution::BlockCyclic, 42, grid.coord_of(0))
            .unwrap()
            .to_dense()
            .unwrap();
        let a_scale = dense_a.iter().map(|v| v.abs()).fold(0.0f32, f32::max) as f64;
        let mut worst_lu: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0f64;
                for k in 0..=i.min(j) {
                    let l = if k == i { 1.0 } else { a1[i * n + k] as f64 };
                    acc += l * a1[k * n + j] as f64;
                }
                worst_lu = worst_lu.max((acc - dense_a[i * n + j] as f64).abs() / a_scale);
            }
        }
        assert!(worst_lu <= 1e-4, "n={n}: |L*U - A| relative {worst_lu}");
        detail.push_str(&format!(
            "n={n}: |LU-A| {worst_lu:.1e}, residual {r1:.2}; "
        ));
    }
    budget.done(&detail);
}

#[test]
fn criterion_05_hpl_overlap_safety() {
    let budget = Budget::new("criterion 5 (HPL overlap safety)", 30.0);
    let (on, _) = hpl_factors(512, 2, true);
    let (off, _) = hpl_factors(512, 2, false);
    assert_eq!(on, off, "overlap changed the factors");
    budget.done("overlap on/off factors bitwise identical for n=512, T=2");
}

#[test]
fn criterion_06_hpl_flop_accounting() {
    let budget = Budget::new("criterion 6 (HPL FLOP accounting)", 30.0);
    let cfg = RunConfig::new(
        Benchmark::Hpl(HplConfig {
            n: 1024,
            block_size_log: 6,
            torus_dim: 2,
            repetitions: 1,
            ..Default::default()
        }),
        TransportChoice::Inproc,
        4,
    );
    let report = launch(&cfg).unwrap();
    let metrics = match report.metrics.unwrap() {
        BenchMetrics::Hpl(m) => m,
        other => panic!("unexpected metrics {other:?}"),
    };
    let expected = 2.0 * 1024f64.powi(3) / 3.0;
    assert_eq!(metrics.flop_count, expected);
    assert_eq!(metrics.flops_per_s, expected / metrics.lu_seconds);
    budget.done(&format!(
        "reported FLOPs = 2n^3/3 = {:.2} for n=1024, independent of measured work",
        metrics.flop_count
    ));
}

#[test]
fn criterion_07_randomaccess_equivalence() {
    let budget = Budget::new("criterion 7 (RandomAccess)", 20.0);
    let ra = RaConfig {
        table_size_log: 16,
        rng_count_log: 2, // K = 4 lanes
        rng_distance: 2,
        update_factor: 4,
        repetitions: 1,
        collect_table: true,
        ..Default::default()
    };
    // Scalar HPCC-style reference loop.
    let mask = ra.table_size() - 1;
    let mut reference: Vec<u64> = (0..ra.table_size()).collect();
    let mut value = LFSR_START;
    for _ in 0..ra.total_updates() {
        value = lfsr_step(value);
        reference[(value & mask) as usize] ^= value;
    }

    let cfg = RunConfig::new(Benchmark::Gups(ra.clone()), TransportChoice::Inproc, 4);
    let outs = collect_outcomes(&cfg).unwrap();
    let mut merged = Vec::new();
    let mut mismatches = 0;
    for out in outs {
        match out.unwrap() {
            BenchOutcome::Gups(o) => {
                mismatches += o.mismatches;
                merged.extend(o.table.unwrap());
            }
            other => panic!("unexpected outcome {other:?}"),
        }
    }
    assert_eq!(merged, reference, "4-rank table differs from scalar run");
    let error_ratio = mismatches as f64 / ra.table_size() as f64;
    assert_eq!(error_ratio, 0.0);
    assert!(error_ratio <= 0.01);
    budget.done("4 ranks, K=4, 2^16 words, U=4*2^16: table equals the scalar reference, error ratio 0");
}

#[test]
fn criterion_08_lfsr_skip_ahead() {
    let budget = Budget::new("criterion 8 (LFSR skip-ahead)", 5.0);
    let mut value = LFSR_START;
    let mut position = 0u64;
    for target in [0u64, 1, 5, 1_000_000] {
        while position < target {
            value = lfsr_step(value);
            position += 1;
        }
        assert_eq!(lfsr_skip(target), value, "position {target}");
    }
    budget.done("skip(p) = step^p(1) for p in {0, 1, 5, 10^6}");
}

#[test]
fn criterion_09_transport_equivalence() {
    let budget = Budget::new("criterion 9 (transport equivalence)", 30.0);
    let bench = Benchmark::Ptrans(PtransConfig {
        n: 64,
        block_size: 16,
        grid_dim: 2,
        mode: CommMode::Direct,
        repetitions: 1,
        seed: 42,
        collect_result: true,
        ..Default::default()
    });
    let mut results = Vec::new();
    for transport in [
        TransportChoice::Inproc,
        TransportChoice::Virtual,
        TransportChoice::Tcp,
    ] {
        let mut cfg = RunConfig::new(bench.clone(), transport, 4);
        cfg.worker_exe = Some(env!("CARGO_BIN_EXE_hpcc-mesh").to_string());
        let outs = ptrans_outcomes(&cfg);
        results.push(outs[0].collected_dense.clone().unwrap());
    }
    assert_eq!(results[0], results[1], "concurrent vs virtual_time");
    assert_eq!(results[0], results[2], "concurrent vs socket");
    budget.done("PTRANS n=64 result matrices identical on concurrent, virtual_time and socket");
}

#[test]
fn criterion_10_timing_protocol() {
    let budget = Budget::new("criterion 10 (timing protocol)", 10.0);
    let schedule = vec![
        vec![3.0, 1.0, 1.0, 1.0],
        vec![0.5, 2.0, 0.5, 0.5],
        vec![4.0, 4.0, 4.0, 5.0],
    ];
    let cfg = RunConfig::new(
        Benchmark::DelayProbe(DelayProbeConfig {
            schedule: schedule.clone(),
        }),
        TransportChoice::Virtual,
        4,
    );
    let report = launch(&cfg).unwrap();
    let expected_max: Vec<f64> = schedule
        .iter()
        .map(|rep| rep.iter().cloned().fold(0.0, f64::max))
        .collect();
    for (rep, (&got, &want)) in report
        .per_repetition_seconds
        .iter()
        .zip(expected_max.iter())
        .enumerate()
    {
        assert!(
            (got - want).abs() < 1e-12,
            "repetition {rep}: {got} vs slowest rank {want}"
        );
    }
    match report.metrics.unwrap() {
        BenchMetrics::DelayProbe(m) => {
            assert_eq!(m.best_repetition_index, 1);
            assert!((m.best_seconds - 2.0).abs() < 1e-12);
        }
        other => panic!("unexpected metrics {other:?}"),
    }
    budget.done("repetition time = max rank time; derived metric uses the best repetition");
}

#[test]
fn criterion_11_netmodel_unit_values() {
    let budget = Budget::new("criterion 11 (netmodel unit values)", 5.0);
    let ulp = |v: f64| v.abs() * f64::EPSILON;

    let params = ChannelParams::default();
    let t = model_channel_time(2048, 1, &params);
    let t_expect = 32.0 / 156.25e6 + 520e-9;
    assert!((t - t_expect).abs() <= ulp(t_expect), "{t} vs {t_expect}");

    let mem = model_ptrans_memory_bandwidth(4, &params);
    let mem_expect = 3.0 * 4.0 * 32.0 * 156.25e6;
    assert!((mem - mem_expect).abs() <= ulp(mem_expect));

    let staged = StagedParams {
        write_bandwidth: (1u64 << 20) as f64 / 100e-6,
        read_bandwidth: (1u64 << 20) as f64 / 100e-6,
        host_net_bandwidth: (1u64 << 20) as f64 / 50e-6,
        host_net_latency_s: 0.0,
        copy_latency_s: 0.0,
    };
    let bw = model_staged_bandwidth(1 << 20, &staged);
    let bw_expect = 2.0 * (1u64 << 20) as f64 / 250e-6;
    assert!((bw - bw_expect).abs() <= ulp(bw_expect), "{bw} vs {bw_expect}");
    assert!((bw - 8.389e9).abs() / 8.389e9 < 1e-3);

    budget.done(&format!(
        "channel time 724.8 ns, memory bandwidth 60 GB/s, staged 8.389 GB/s (all within 1 ulp)"
    ));
}
