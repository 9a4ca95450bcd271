//! Self-checks shipped with the library: decentralized vs centralized GNN
//! agreement, locality of a local round, buffer protocol properties and
//! scheduler determinism.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::env::IdfSpec;
use crate::experiment::run_experiment;
use crate::gcnn::{
    centralized_forward, local_round, relative_max_error, run_synchronous, Activation, AggregatedMessage,
    FeatureVec, GcnnParams, ShapeRow,
};
use crate::graph::{CommGraph, Normalization, ShapeOperator, Vec2};
use crate::netsim::{buffer_swap, receive, RxBuffer, TxBuffer, WireMessage};
use crate::policies::PolicyKind;
use crate::scheduler::{run_until, CallbackError, Event, Frequencies, SimConfig};

/// Agreement threshold of the equivalence battery.
pub const EQUIVALENCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    pub equivalence_instances: usize,
    pub locality_instances: usize,
    pub buffer_sequences: usize,
    /// Corrupt the oracle's weights, which must make the equivalence check fail.
    pub perturb: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            equivalence_instances: 100,
            locality_instances: 50,
            buffer_sequences: 10_000,
            perturb: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckReport>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// A random swarm and network: `n <= 16`, `L <= 3`, `K <= 4`.
#[derive(Debug, Clone)]
pub struct Instance {
    pub params: GcnnParams,
    pub features: Vec<FeatureVec>,
    pub graph: CommGraph,
    pub shift: ShapeOperator,
}

pub fn random_instance<R: Rng + ?Sized>(rng: &mut R) -> Instance {
    let n = rng.random_range(2..=16);
    let layers = rng.random_range(1..=3);
    let taps = rng.random_range(1..=4);
    let dims: Vec<usize> = (0..=layers).map(|_| rng.random_range(1..=6)).collect();
    let activation = *[Activation::Relu, Activation::Tanh, Activation::Identity]
        .choose(rng)
        .expect("non-empty");
    let params = GcnnParams::random(&dims, taps, activation, rng.random_bool(0.5), rng).expect("valid dims");
    let side = 100.0;
    let positions: Vec<Vec2> = (0..n)
        .map(|_| Vec2::new(rng.random_range(0.0..side), rng.random_range(0.0..side)))
        .collect();
    let radius = rng.random_range(20.0..70.0);
    let graph = CommGraph::build(&positions, radius).expect("finite positions");
    let norm = *Normalization::ALL.choose(rng).expect("non-empty");
    let shift = ShapeOperator::new(&graph, norm);
    let features = (0..n)
        .map(|_| FeatureVec(DVector::from_fn(dims[0], |_, _| rng.random_range(-1.0..1.0))))
        .collect();
    Instance {
        params,
        features,
        graph,
        shift,
    }
}

fn feature_matrix(features: &[FeatureVec]) -> DMatrix<f64> {
    let d = features.first().map_or(0, FeatureVec::len);
    DMatrix::from_fn(features.len(), d, |i, j| features[i].0[j])
}

/// Copy of `params` with `H_{L,0}` shifted by one everywhere.
fn perturbed(params: &GcnnParams) -> GcnnParams {
    let mut p = params.clone();
    let last = p.layers() - 1;
    p.weight_mut(last, 0).add_scalar_mut(1.0);
    p
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceSummary {
    pub instances: usize,
    pub within_tol: usize,
    pub max_error: f64,
}

/// Runs `K * L` synchronous local rounds and compares against the dense
/// forward pass for each random instance.
pub fn equivalence_battery(instances: usize, seed: u64, perturb: bool) -> EquivalenceSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = EquivalenceSummary {
        instances,
        within_tol: 0,
        max_error: 0.0,
    };
    for _ in 0..instances {
        let inst = random_instance(&mut rng);
        let rounds = inst.params.taps() * inst.params.layers();
        let local = run_synchronous(&inst.params, &inst.features, &inst.shift, rounds).expect("shapes agree");
        let oracle_params = if perturb { perturbed(&inst.params) } else { inst.params.clone() };
        let dense = centralized_forward(&feature_matrix(&inst.features), &inst.shift.to_dense(), &oracle_params)
            .expect("shapes agree");
        let err = relative_max_error(&local, &dense);
        summary.max_error = summary.max_error.max(err);
        if err <= EQUIVALENCE_TOL {
            summary.within_tol += 1;
        }
    }
    summary
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalitySummary {
    /// Instances with at least one robot that has a non-neighbor.
    pub checked: usize,
    pub identical: usize,
}

fn bits(v: &DVector<f64>) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// For each instance, a robot hears every robot's message (as with an
/// overheard broadcast) and one non-neighbor's features and message are
/// replaced by noise; the robot's round output must not change by a bit.
pub fn locality_battery(instances: usize, seed: u64) -> LocalitySummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = LocalitySummary { checked: 0, identical: 0 };
    while summary.checked < instances {
        let inst = random_instance(&mut rng);
        let n = inst.features.len();
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && !inst.graph.has_edge(i, j))
            .collect();
        let Some(&(i, j)) = pairs.choose(&mut rng) else {
            continue;
        };
        let mut messages: Vec<AggregatedMessage> = (0..n)
            .map(|r| {
                let mut m = AggregatedMessage::zeros(&inst.params, r as u32, 1);
                for col in m.layers.iter_mut().flatten() {
                    col.apply(|v| *v = rng.random_range(-1.0..1.0));
                }
                m
            })
            .collect();
        let row = ShapeRow::from_operator(&inst.shift, i);
        let before = local_round(&inst.params, &inst.features[i], &messages, &row, i as u32, 2).expect("shapes");
        for col in messages[j].layers.iter_mut().flatten() {
            col.apply(|v| *v = rng.random_range(-1e3..1e3));
        }
        let mut features = inst.features.clone();
        features[j].0.apply(|v| *v = rng.random_range(-1e3..1e3));
        let after = local_round(&inst.params, &features[i], &messages, &row, i as u32, 2).expect("shapes");
        summary.checked += 1;
        if bits(&before.output) == bits(&after.output) && before.message == after.message {
            summary.identical += 1;
        }
    }
    summary
}

/// Reference model of one robot's buffers.
#[derive(Default)]
struct BufferModel {
    held: BTreeMap<u32, (u32, u64)>,
    stale: u64,
    malformed: u64,
}

fn test_message(sender: u32, seq: u32, stamp: u64) -> WireMessage {
    let p = GcnnParams::zeros(&[1, 1], 1, Activation::Identity).expect("valid dims");
    let mut m = AggregatedMessage::zeros(&p, sender, seq);
    m.layers[0][0][0] = stamp as f64;
    WireMessage::encode(&m, stamp).expect("encodable")
}

/// Checks one random operation sequence; returns a description of the first
/// violated property.
fn buffer_sequence<R: Rng + ?Sized>(rng: &mut R, ops: usize) -> Result<(), String> {
    let (mut tx, mut rx) = (TxBuffer::default(), RxBuffer::default());
    let mut model = BufferModel::default();
    let mut stamp = 0u64;
    let mut delivered_before: Vec<u64> = Vec::new();
    for _ in 0..ops {
        stamp += 1;
        match rng.random_range(0..10) {
            0..=5 => {
                let sender = rng.random_range(0..4);
                let seq = rng.random_range(0..8);
                let msg = test_message(sender, seq, stamp);
                match model.held.get(&sender) {
                    Some(&(held, _)) if held > seq => model.stale += 1,
                    _ => {
                        model.held.insert(sender, (seq, stamp));
                    }
                }
                receive(&mut rx, msg);
            }
            6 => {
                let mut msg = test_message(rng.random_range(0..4), 0, stamp);
                let cut = rng.random_range(0..msg.payload.len());
                msg.payload.truncate(cut);
                model.malformed += 1;
                receive(&mut rx, msg);
            }
            _ => {
                let out = buffer_swap(&mut tx, &mut rx, test_message(99, stamp as u32, stamp));
                if !rx.is_empty() {
                    return Err("receive buffer not cleared by swap".into());
                }
                if tx.current.as_ref().map(|m| m.timestamp_us) != Some(stamp) {
                    return Err("transmit buffer does not hold the newest message".into());
                }
                let got: Vec<(u32, u32, u64)> = out.iter().map(|m| (m.sender_id, m.seq, m.timestamp_us)).collect();
                let want: Vec<(u32, u32, u64)> = model.held.iter().map(|(&s, &(q, t))| (s, q, t)).collect();
                if got != want {
                    return Err(format!("swap returned {got:?}, expected latest per sender {want:?}"));
                }
                if got.iter().any(|&(_, _, t)| delivered_before.contains(&t)) {
                    return Err("a message was handed out by two swaps".into());
                }
                delivered_before.extend(got.iter().map(|&(_, _, t)| t));
                model.held.clear();
            }
        }
        if rx.stale != model.stale {
            return Err(format!("stale count {} != {}", rx.stale, model.stale));
        }
        if rx.malformed != model.malformed {
            return Err(format!("malformed count {} != {}", rx.malformed, model.malformed));
        }
    }
    Ok(())
}

/// Clear-on-swap, newest-per-sender, stale rejection and no reuse across
/// swaps, on `sequences` random operation sequences.
pub fn buffer_properties(sequences: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..sequences {
        let ops = rng.random_range(1..60);
        buffer_sequence(&mut rng, ops).map_err(|e| format!("sequence {k}: {e}"))?;
    }
    Ok(sequences)
}

/// Two identical jittered schedules, and two identical small experiments,
/// must agree byte for byte.
pub fn determinism_check(seed: u64) -> Result<(), String> {
    let sim = SimConfig {
        horizon_s: 12.0,
        robots: 5,
        seed,
        frequencies: Frequencies::default(),
        channel: Default::default(),
        noise_sigma: 0.0,
        phase_jitter_s: 0.07,
    };
    let mut noop = |_: &Event| -> Result<(), CallbackError> { Ok(()) };
    let a = run_until(&sim, &mut noop).map_err(|e| e.to_string())?.to_csv();
    let b = run_until(&sim, &mut noop).map_err(|e| e.to_string())?.to_csv();
    if a != b {
        return Err("event timelines differ".into());
    }
    let cfg = ExperimentConfig {
        seeds: vec![seed],
        policies: vec![PolicyKind::DecentralizedLloyd],
        robots: 6,
        comm_radius: 64.0,
        steps: 10,
        noise_sigma: 4.0,
        phase_jitter_s: 0.03,
        world: IdfSpec {
            side: 256.0,
            num_peaks: 3,
            ..IdfSpec::default()
        },
        ..ExperimentConfig::default()
    };
    let x = run_experiment(&cfg).map_err(|e| e.to_string())?.metrics_csv();
    let y = run_experiment(&cfg).map_err(|e| e.to_string())?.metrics_csv();
    if x != y {
        return Err("metrics differ between identical runs".into());
    }
    Ok(())
}

pub fn verify_suite(opts: &VerifyOptions) -> VerifyReport {
    let mut checks = Vec::new();

    let eq = equivalence_battery(opts.equivalence_instances, opts.seed, opts.perturb);
    checks.push(CheckReport {
        name: "decentralized equals centralized",
        passed: eq.within_tol == eq.instances,
        detail: format!(
            "{}/{} instances within {EQUIVALENCE_TOL:e}, max relative error {:e}",
            eq.within_tol, eq.instances, eq.max_error
        ),
    });

    let loc = locality_battery(opts.locality_instances, opts.seed.wrapping_add(1));
    checks.push(CheckReport {
        name: "locality",
        passed: loc.identical == loc.checked,
        detail: format!("{}/{} outputs bit-identical under non-neighbor perturbation", loc.identical, loc.checked),
    });

    let buf = buffer_properties(opts.buffer_sequences, opts.seed.wrapping_add(2));
    checks.push(CheckReport {
        name: "buffer protocol",
        passed: buf.is_ok(),
        detail: match buf {
            Ok(n) => format!("{n} random operation sequences"),
            Err(e) => e,
        },
    });

    let det = determinism_check(opts.seed);
    checks.push(CheckReport {
        name: "determinism",
        passed: det.is_ok(),
        detail: det.err().unwrap_or_else(|| "repeated schedules and metrics are byte-identical".into()),
    });

    VerifyReport { checks }
}
