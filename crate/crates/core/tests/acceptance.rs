//! Release gate: one PASS/FAIL line per acceptance criterion.
//!
//! Full-scale criteria share one 30-seed run of the three Lloyd baselines.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pac_core::config::ExperimentConfig;
use pac_core::env::IdfSpec;
use pac_core::experiment::{noise_sweep, run_experiment, ExperimentResult, NOISE_SWEEP_SIGMA};
use pac_core::gcnn::{AggregatedMessage, FeatureVec, ShapeRow};
use pac_core::graph::{CommGraph, Normalization, ShapeOperator, Vec2};
use pac_core::netsim::{decode_message, encode_message, WireError};
use pac_core::policies::{gnn_policy_step, Architecture, PolicyKind, PolicyModel};
use pac_core::scheduler::{run_until, CallbackError, Event, Frequencies, ModuleKind, SimConfig};
use pac_core::verify::{buffer_properties, equivalence_battery, locality_battery, EQUIVALENCE_TOL};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn equivalence() -> Outcome {
    let t = Instant::now();
    let s = equivalence_battery(100, 2024, false);
    let secs = t.elapsed().as_secs_f64();
    outcome(
        s.within_tol == 100 && secs < 10.0,
        format!(
            "{}/100 within {EQUIVALENCE_TOL:e}, max relative error {:.3e}, {secs:.2} s",
            s.within_tol, s.max_error
        ),
    )
}

fn locality() -> Outcome {
    let s = locality_battery(50, 77);
    outcome(
        s.checked == 50 && s.identical == 50,
        format!("{}/{} bit-identical", s.identical, s.checked),
    )
}

fn message_size() -> Outcome {
    let arch = Architecture::default();
    let model = PolicyModel::random(&arch, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let (k, d0, d1) = (3usize, 34usize, 256usize);
    let values = k * (d0 + d1);
    // magic, version, sender, seq, timestamp, L, K, then one u32 width per layer
    let header = 4 + 1 + 4 + 4 + 8 + 1 + 1 + 4 * 2;
    let expected = header + 4 * values;
    let mut lengths = BTreeSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in [2usize, 32, 128] {
        let side = if n == 2 { 100.0 } else { 1024.0 };
        let pos: Vec<Vec2> = (0..n)
            .map(|_| Vec2::new(rng.random_range(0.0..side), rng.random_range(0.0..side)))
            .collect();
        let graph = CommGraph::build(&pos, 128.0).unwrap();
        let s = ShapeOperator::new(&graph, Normalization::Symmetric);
        let feats: Vec<FeatureVec> = (0..n)
            .map(|_| FeatureVec(DVector::from_fn(d0, |_, _| rng.random_range(-1.0..1.0))))
            .collect();
        let mut msgs: Vec<AggregatedMessage> = (0..n)
            .map(|i| AggregatedMessage::seed(&model.gnn, &feats[i], i as u32, 0))
            .collect();
        for round in 1..=3u32 {
            msgs = (0..n)
                .map(|i| {
                    let inbox: Vec<_> = graph.neighbors(i).iter().map(|&j| msgs[j].clone()).collect();
                    let row = ShapeRow::from_operator(&s, i);
                    gnn_policy_step(&model, &feats[i], &inbox, &row, i as u32, round, 5.0)
                        .unwrap()
                        .message
                })
                .collect();
            for m in &msgs {
                lengths.insert(encode_message(m, 1_000_000 * round as u64).unwrap().len());
            }
        }
    }
    outcome(
        lengths.len() == 1 && lengths.first() == Some(&expected) && values == 870,
        format!("lengths {lengths:?}, expected {header} + {values} x 4 = {expected}"),
    )
}

fn buffer_protocol() -> Outcome {
    match buffer_properties(10_000, 31) {
        Ok(n) => outcome(n == 10_000, format!("{n} sequences")),
        Err(e) => outcome(false, e),
    }
}

fn scheduler_rates() -> Outcome {
    let cfg = SimConfig {
        horizon_s: 240.0,
        robots: 32,
        seed: 0,
        frequencies: Frequencies {
            perception: 1.25,
            gnn: 10.0,
            comm: None,
            control: 20.0,
        },
        channel: Default::default(),
        noise_sigma: 0.0,
        phase_jitter_s: 0.0,
    };
    let mut noop = |_: &Event| -> Result<(), CallbackError> { Ok(()) };
    let log = run_until(&cfg, &mut noop).unwrap();
    let mut between = BTreeSet::new();
    let mut comm_ok = true;
    for robot in 0..32u32 {
        let mut count: Option<usize> = None;
        for e in log.events.iter().filter(|e| e.robot == robot) {
            match e.kind {
                ModuleKind::Perception => {
                    if let Some(c) = count {
                        between.insert(c);
                    }
                    count = Some(0);
                }
                ModuleKind::Gnn => {
                    if let Some(c) = count.as_mut() {
                        *c += 1;
                    }
                }
                _ => {}
            }
        }
        let gnn = log.count(ModuleKind::Gnn, robot);
        let comm = log.count(ModuleKind::CommRx, robot) + log.count(ModuleKind::CommTx, robot);
        comm_ok &= comm == 2 * gnn && gnn == 2400;
    }
    outcome(
        between == BTreeSet::from([8]) && comm_ok,
        format!("GNN events between perceptions {between:?}, comm = 2 x GNN on every robot: {comm_ok}"),
    )
}

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        seeds: vec![3, 4],
        policies: PolicyKind::ALL.to_vec(),
        robots: 8,
        comm_radius: 96.0,
        steps: 8,
        noise_sigma: 6.0,
        phase_jitter_s: 0.05,
        world: IdfSpec {
            side: 256.0,
            num_peaks: 4,
            ..IdfSpec::default()
        },
        architecture: Architecture {
            gnn_hidden: vec![32, 32],
            ..Architecture::default()
        },
        ..ExperimentConfig::default()
    }
}

fn determinism() -> Outcome {
    let mut cfg = small_config();
    cfg.channel.drop_probability = 0.2;
    let a = run_experiment(&cfg).unwrap().metrics_csv();
    let b = run_experiment(&cfg).unwrap().metrics_csv();
    outcome(a == b, format!("{} bytes per run, identical: {}", a.len(), a == b))
}

fn full_scale() -> (ExperimentResult, f64) {
    let cfg = ExperimentConfig {
        seeds: (0..30).collect(),
        ..ExperimentConfig::default()
    };
    let t = Instant::now();
    let res = run_experiment(&cfg).unwrap();
    (res, t.elapsed().as_secs_f64())
}

fn final_cost(res: &ExperimentResult, policy: PolicyKind, seed: u64) -> f64 {
    res.cell(policy, seed).unwrap().rows.last().unwrap().normalized_cost
}

fn lloyd_descent(res: &ExperimentResult, secs: f64) -> Outcome {
    let cfg = ExperimentConfig::default();
    let step = cfg.lloyd_gain / cfg.frequencies.control;
    let (mut ok, mut total) = (0usize, 0usize);
    for seed in 0..10 {
        let rows = &res.cell(PolicyKind::ClairvoyantLloyd, seed).unwrap().rows;
        for w in rows.windows(2) {
            total += 1;
            if w[1].cost - w[0].cost <= 1e-6 * w[0].cost {
                ok += 1;
            }
        }
    }
    let frac = ok as f64 / total as f64;
    let finals: Vec<f64> = (0..30)
        .map(|s| final_cost(res, PolicyKind::ClairvoyantLloyd, s))
        .collect();
    let worst = finals.iter().cloned().fold(f64::MIN, f64::max);
    outcome(
        step <= 0.2 && frac >= 0.99 && worst < 1.0 && secs < 600.0,
        format!(
            "gain x dt = {step}, {ok}/{total} steps non-increasing ({:.2}%), worst final {worst:.4}, 30-seed run {secs:.0} s",
            100.0 * frac
        ),
    )
}

fn baseline_ordering(res: &ExperimentResult) -> Outcome {
    let mean = |p| (0..30).map(|s| final_cost(res, p, s)).sum::<f64>() / 30.0;
    let (c, z, d) = (
        mean(PolicyKind::ClairvoyantLloyd),
        mean(PolicyKind::CentralizedLloyd),
        mean(PolicyKind::DecentralizedLloyd),
    );
    outcome(
        c <= z + 0.05 && z <= d + 0.05,
        format!("mean final clairvoyant {c:.4}, centralized {z:.4}, decentralized {d:.4}"),
    )
}

fn noise_sanity() -> Outcome {
    let base = ExperimentConfig {
        seeds: vec![1],
        policies: vec![PolicyKind::DecentralizedLloyd, PolicyKind::GnnPolicy],
        steps: 12,
        ..ExperimentConfig::default()
    };
    let noiseless = run_experiment(&base).unwrap().metrics_csv();
    // A vanishing sigma goes through the sampling path but cannot move a position.
    let tiny = ExperimentConfig {
        noise_sigma: 1e-300,
        ..base.clone()
    };
    let sampled = run_experiment(&tiny).unwrap().metrics_csv();
    let mut asym = 0;
    let mut graphs = 0;
    let mut zero_identical = false;
    for point in noise_sweep(&base, &NOISE_SWEEP_SIGMA) {
        let res = run_experiment(&point.config).unwrap();
        if point.config.noise_sigma == 0.0 {
            let mut plain = base.clone();
            plain.frequencies = point.config.frequencies;
            zero_identical = res.metrics_csv() == run_experiment(&plain).unwrap().metrics_csv();
        }
        for c in &res.cells {
            asym += c.asymmetric_graphs;
            graphs += c.graphs_built;
        }
    }
    let same = noiseless == sampled;
    outcome(
        same && zero_identical && asym == 0 && graphs > 0,
        format!(
            "sigma 0 identical to noiseless: {}, {} asymmetric of {graphs} graphs over sigma {:?}",
            same && zero_identical,
            asym,
            NOISE_SWEEP_SIGMA
        ),
    )
}

fn golden_value(layer: usize, tap: usize, i: usize) -> f64 {
    (((layer * 31 + tap * 7 + i) % 17) as f64 - 8.0) * 0.125
}

fn golden_message(sender: u32, seq: u32, taps: usize, dims: &[usize]) -> AggregatedMessage {
    AggregatedMessage {
        sender_id: sender,
        seq,
        layers: dims
            .iter()
            .enumerate()
            .map(|(l, &d)| {
                (0..taps)
                    .map(|k| DVector::from_fn(d, |i, _| golden_value(l, k, i)))
                    .collect()
            })
            .collect(),
    }
}

/// Bytes, sender, seq, timestamp, taps, layer widths.
type GoldenCase = (&'static [u8], u32, u32, u64, usize, &'static [usize]);

fn wire_format() -> Outcome {
    let cases: [GoldenCase; 2] = [
        (include_bytes!("golden/wire_small.bin"), 7, 3, 1_250_000, 2, &[3, 2]),
        (include_bytes!("golden/wire_full.bin"), 31, 600, 240_000_000, 3, &[34, 256]),
    ];
    let mut problems = Vec::new();
    for (bytes, sender, seq, ts, taps, dims) in cases {
        let m = golden_message(sender, seq, taps, dims);
        if encode_message(&m, ts).unwrap() != bytes {
            problems.push(format!("encode differs for {dims:?}"));
        }
        match decode_message(bytes) {
            Ok(d) if d.message == m && d.timestamp_us == ts => {}
            other => problems.push(format!("decode of {dims:?}: {other:?}")),
        }
        let mut bad = bytes.to_vec();
        bad[0] = b'X';
        if !matches!(decode_message(&bad), Err(WireError::BadMagic(_))) {
            problems.push("corrupt magic not reported".into());
        }
        let short = &bytes[..bytes.len() - 1];
        if decode_message(short)
            != Err(WireError::Truncated {
                expected: bytes.len(),
                actual: bytes.len() - 1,
            })
        {
            problems.push("short message not reported".into());
        }
        let mut long = bytes.to_vec();
        long.push(0);
        if !matches!(decode_message(&long), Err(WireError::Truncated { .. })) {
            problems.push("trailing byte not reported".into());
        }
        let mut version = bytes.to_vec();
        version[4] = 9;
        if decode_message(&version) != Err(WireError::UnsupportedVersion(9)) {
            problems.push("bad version not reported".into());
        }
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            "2 golden vectors round-trip; magic, length and version corruption rejected".to_string()
        } else {
            problems.join("; ")
        },
    )
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |name: &str, o: Outcome| {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        println!("{tag} {name}: {}", o.detail);
        if !o.passed {
            failed += 1;
        }
    };
    report("decentralized equals centralized", equivalence());
    report("locality", locality());
    report("message size invariance", message_size());
    report("buffer protocol", buffer_protocol());
    report("scheduler rates", scheduler_rates());
    report("determinism", determinism());
    let (res, secs) = full_scale();
    report("lloyd descent", lloyd_descent(&res, secs));
    report("baseline ordering", baseline_ordering(&res));
    report("noise sanity", noise_sanity());
    report("wire format", wire_format());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
