//! Coverage-control experiments: one simulation per `(policy, seed)` cell,
//! driven by the module scheduler and sampled once per perception step.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::env::{
    add_position_noise, apply_control, coverage_cost, random_placement, EnvError, LocalMaps, RobotState, World,
};
use crate::gcnn::{AggregatedMessage, ShapeRow};
use crate::graph::{CommGraph, GraphError, ShapeOperator, Vec2};
use crate::model::{load_model_file, ModelError};
use crate::netsim::{Channel, Network, WireError, WireMessage};
use crate::policies::{
    build_policy_input, gnn_policy_step, knowledge, lloyd_target, lloyd_targets, policy_features, velocity_toward,
    PolicyError, PolicyKind, PolicyModel,
};
use crate::rng::{stream, Stream};
use crate::scheduler::{CallbackError, Event, EventHandler, EventLog, ModuleKind, Scheduler, SchedulerError, SimConfig, SimTime};

pub const METRICS_HEADER: &str = "algorithm,seed,step,sim_time_s,cost,normalized_cost";

/// Perception rates of the frequency sweep; the other modules keep their
/// ratio to perception.
pub const FREQUENCY_SWEEP_HZ: [f64; 4] = [1.25, 5.0 / 3.0, 2.5, 5.0];
/// Position-noise standard deviations of the noise sweep, meters.
pub const NOISE_SWEEP_SIGMA: [f64; 5] = [0.0, 5.0, 10.0, 15.0, 20.0];
/// Perception rate the noise sweep runs at.
pub const NOISE_SWEEP_HZ: f64 = 2.5;

pub const THREADS_ENV: &str = "PAC_SWARM_THREADS";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("model file: {0}")]
    Model(#[from] ModelError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("message encoding: {0}")]
    Wire(#[from] WireError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("thread pool: {0}")]
    Threads(String),
}

impl ExperimentError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_owned(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub algorithm: PolicyKind,
    pub seed: u64,
    pub step: usize,
    pub sim_time_s: f64,
    pub cost: f64,
    pub normalized_cost: f64,
}

/// Outcome of one simulation cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub policy: PolicyKind,
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub events: Option<EventLog>,
    /// Communication graphs built during the run, and how many of them had a
    /// one-directional edge.
    pub graphs_built: u64,
    pub asymmetric_graphs: u64,
    /// Received messages that failed to decode.
    pub wire_errors: u64,
    pub delivered_messages: u64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub cells: Vec<CellResult>,
}

impl ExperimentResult {
    pub fn rows(&self) -> impl Iterator<Item = &MetricsRow> {
        self.cells.iter().flat_map(|c| c.rows.iter())
    }

    pub fn metrics_csv(&self) -> String {
        metrics_csv(self.rows())
    }

    pub fn cell(&self, policy: PolicyKind, seed: u64) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.policy == policy && c.seed == seed)
    }

    /// Writes `metrics.csv` and, when recorded, one event timeline per cell.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
        fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
        let mut written = Vec::new();
        let metrics = dir.join("metrics.csv");
        fs::write(&metrics, self.metrics_csv()).map_err(|e| ExperimentError::io(&metrics, e))?;
        written.push(metrics);
        for c in &self.cells {
            if let Some(log) = &c.events {
                let p = dir.join(format!("events_{}_{}.csv", c.policy, c.seed));
                fs::write(&p, log.to_csv()).map_err(|e| ExperimentError::io(&p, e))?;
                written.push(p);
            }
        }
        Ok(written)
    }
}

pub fn metrics_csv<'a>(rows: impl IntoIterator<Item = &'a MetricsRow>) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.algorithm, r.seed, r.step, r.sim_time_s, r.cost, r.normalized_cost
        )
        .expect("writing to a String");
    }
    out
}

/// The world a seed runs in: the pinned grid if configured, else a fresh
/// Gaussian mixture.
pub fn world_for_seed(cfg: &ExperimentConfig, seed: u64) -> Result<World, ExperimentError> {
    match &cfg.idf_file {
        Some(path) => {
            let f = fs::File::open(path).map_err(|e| ExperimentError::io(path, e))?;
            Ok(World::read_idf(std::io::BufReader::new(f))?)
        }
        None => Ok(World::generate(seed, &cfg.world)?),
    }
}

/// Weights for the learned policy: the model file if given, else seeded
/// random weights.
pub fn policy_model(cfg: &ExperimentConfig) -> Result<PolicyModel, ExperimentError> {
    match &cfg.model {
        Some(path) => Ok(PolicyModel::from_tensors(&load_model_file(path)?, &cfg.architecture)?),
        None => {
            let model = PolicyModel::random(&cfg.architecture, &mut stream(cfg.weights_seed, Stream::Weights))?;
            // Round to the file's single precision so a written model reproduces this run.
            Ok(PolicyModel::from_tensors(&model.to_tensors(), &cfg.architecture)?)
        }
    }
}

fn sim_config(cfg: &ExperimentConfig, seed: u64) -> SimConfig {
    SimConfig {
        horizon_s: cfg.horizon_s(),
        robots: cfg.robots,
        seed,
        frequencies: cfg.frequencies,
        channel: cfg.channel,
        noise_sigma: cfg.noise_sigma,
        phase_jitter_s: cfg.phase_jitter_s,
    }
}

struct Simulation<'a> {
    cfg: &'a ExperimentConfig,
    policy: PolicyKind,
    world: &'a World,
    model: Option<&'a PolicyModel>,
    robots: Vec<RobotState>,
    maps: Vec<LocalMaps>,
    union: LocalMaps,
    noise_rng: ChaCha8Rng,
    network: Network,
    graph: Option<CommGraph>,
    shift: Option<ShapeOperator>,
    targets: Vec<Option<Vec2>>,
    plan_pending: Vec<bool>,
    features: Vec<DVector<f64>>,
    inbox: Vec<Vec<AggregatedMessage>>,
    outgoing: Vec<Option<AggregatedMessage>>,
    seq: Vec<u32>,
    command: Vec<Vec2>,
    control_dt: f64,
    graphs_built: u64,
    asymmetric_graphs: u64,
    wire_errors: u64,
}

impl<'a> Simulation<'a> {
    fn new(
        cfg: &'a ExperimentConfig,
        policy: PolicyKind,
        seed: u64,
        world: &'a World,
        model: Option<&'a PolicyModel>,
    ) -> Result<Self, ExperimentError> {
        let n = cfg.robots;
        let robots = random_placement(n, world, &mut stream(seed, Stream::Placement));
        let features = match model {
            Some(m) => vec![DVector::zeros(m.cnn.features()); n],
            None => Vec::new(),
        };
        if policy == PolicyKind::GnnPolicy && model.is_none() {
            return Err(PolicyError::Architecture("learned policy selected without weights".into()).into());
        }
        Ok(Self {
            cfg,
            policy,
            world,
            model,
            robots,
            maps: vec![LocalMaps::new(world); n],
            union: LocalMaps::new(world),
            noise_rng: stream(seed, Stream::PositionNoise),
            network: Network::new(n, Channel::new(cfg.channel, stream(seed, Stream::Channel))),
            graph: None,
            shift: None,
            targets: vec![None; n],
            plan_pending: vec![false; n],
            features,
            inbox: vec![Vec::new(); n],
            outgoing: vec![None; n],
            seq: vec![0; n],
            command: vec![Vec2::ZERO; n],
            control_dt: 1.0 / cfg.frequencies.control,
            graphs_built: 0,
            asymmetric_graphs: 0,
            wire_errors: 0,
        })
    }

    fn sensed(&self) -> Vec<Vec2> {
        self.robots.iter().map(|r| r.sensed_position).collect()
    }

    fn true_positions(&self) -> Vec<Vec2> {
        self.robots.iter().map(|r| r.position).collect()
    }

    fn moved(&mut self) {
        self.graph = None;
        self.shift = None;
    }

    fn ensure_graph(&mut self) -> Result<(), ExperimentError> {
        if self.graph.is_none() {
            let g = CommGraph::build(&self.sensed(), self.cfg.comm_radius)?;
            self.graphs_built += 1;
            let one_way = (0..g.len()).any(|i| g.neighbors(i).iter().any(|&j| !g.has_edge(j, i)));
            if one_way {
                self.asymmetric_graphs += 1;
            }
            self.graph = Some(g);
        }
        Ok(())
    }

    fn ensure_shift(&mut self) -> Result<(), ExperimentError> {
        self.ensure_graph()?;
        if self.shift.is_none() {
            let g = self.graph.as_ref().expect("ensured");
            self.shift = Some(ShapeOperator::new(g, self.cfg.normalization));
        }
        Ok(())
    }

    fn perception(&mut self, i: usize) -> Result<(), ExperimentError> {
        add_position_noise(&mut self.robots[i..=i], self.cfg.noise_sigma, &mut self.noise_rng);
        self.moved();
        // The footprint is physical: it is wherever the robot actually is.
        let p = self.robots[i].position;
        self.maps[i].sense(p, self.world);
        self.union.sense(p, self.world);
        if self.policy.is_lloyd() {
            self.plan_pending[i] = true;
            return Ok(());
        }
        self.ensure_graph()?;
        let g = self.graph.as_ref().expect("ensured");
        let me = self.robots[i].sensed_position;
        let offsets: Vec<Vec2> = g
            .neighbors(i)
            .iter()
            .map(|&j| self.robots[j].sensed_position - me)
            .collect();
        let input = build_policy_input(me, &self.maps[i], self.world, &offsets, self.cfg.comm_radius);
        let model = self.model.expect("checked at construction");
        self.features[i] = model.cnn_forward(&input)?;
        Ok(())
    }

    fn comm_rx(&mut self, i: usize, now_us: u64) -> Result<(), ExperimentError> {
        let outgoing = match self.outgoing[i].take() {
            Some(m) => Some(WireMessage::encode(&m, now_us)?),
            None => None,
        };
        let received = self.network.swap(i, outgoing, now_us);
        let mut inbox = Vec::with_capacity(received.len());
        for w in received {
            match w.decode() {
                Ok(m) => inbox.push(m),
                Err(e) => {
                    log::debug!("robot {i} dropped a message from {}: {e}", w.sender_id);
                    self.wire_errors += 1;
                }
            }
        }
        self.inbox[i] = inbox;
        Ok(())
    }

    fn gnn(&mut self, i: usize) -> Result<(), ExperimentError> {
        self.ensure_shift()?;
        let model = self.model.expect("checked at construction");
        let s_row = ShapeRow::from_operator(self.shift.as_ref().expect("ensured"), i);
        let f = policy_features(&self.features[i], self.robots[i].sensed_position, self.world.side());
        let step = gnn_policy_step(model, &f, &self.inbox[i], &s_row, i as u32, self.seq[i], self.cfg.v_max)?;
        self.command[i] = step.velocity;
        self.outgoing[i] = Some(step.message);
        self.seq[i] = self.seq[i].wrapping_add(1);
        Ok(())
    }

    fn comm_tx(&mut self, i: usize, now_us: u64) -> Result<(), ExperimentError> {
        self.ensure_graph()?;
        self.network.transmit(self.graph.as_ref().expect("ensured"), i, now_us);
        Ok(())
    }

    /// Refreshes the centroid target of every robot that sensed since its
    /// last plan, from this instant's shared sensed positions.
    fn plan(&mut self) -> Result<(), ExperimentError> {
        self.ensure_graph()?;
        let sensed = self.sensed();
        let g = self.graph.as_ref().expect("ensured");
        let union = self.union.observed();
        match self.policy {
            PolicyKind::ClairvoyantLloyd | PolicyKind::CentralizedLloyd => {
                let all = lloyd_targets(self.policy, &sensed, g, self.world, &self.maps, union)?;
                for (i, t) in all.into_iter().enumerate() {
                    if self.plan_pending[i] {
                        self.targets[i] = t;
                    }
                }
            }
            _ => {
                for i in 0..sensed.len() {
                    if self.plan_pending[i] {
                        let k = knowledge(self.policy, i, &sensed, g, self.world, &self.maps, union)?;
                        self.targets[i] = lloyd_target(&k, i as u32, self.world);
                    }
                }
            }
        }
        self.plan_pending.fill(false);
        Ok(())
    }

    fn control(&mut self, i: usize) -> Result<(), ExperimentError> {
        let u = if self.policy.is_lloyd() {
            if self.plan_pending[i] {
                self.plan()?;
            }
            velocity_toward(self.targets[i], self.robots[i].sensed_position, self.cfg.lloyd_gain, self.cfg.v_max)
        } else {
            self.command[i]
        };
        apply_control(&mut self.robots[i], u, self.control_dt, self.cfg.v_max, self.world);
        self.moved();
        Ok(())
    }

    fn dispatch(&mut self, e: &Event) -> Result<(), ExperimentError> {
        let i = e.robot as usize;
        let learned = self.policy == PolicyKind::GnnPolicy;
        match e.kind {
            ModuleKind::Perception => self.perception(i),
            ModuleKind::CommRx if learned => self.comm_rx(i, e.time.as_micros()),
            ModuleKind::Gnn if learned => self.gnn(i),
            ModuleKind::CommTx if learned => self.comm_tx(i, e.time.as_micros()),
            ModuleKind::Control => self.control(i),
            _ => Ok(()),
        }
    }
}

impl EventHandler for Simulation<'_> {
    fn handle(&mut self, event: &Event) -> Result<(), CallbackError> {
        self.dispatch(event).map_err(Into::into)
    }
}

/// Runs one cell to its horizon.
pub fn run_cell(
    cfg: &ExperimentConfig,
    policy: PolicyKind,
    seed: u64,
    world: &World,
    model: Option<&PolicyModel>,
) -> Result<CellResult, ExperimentError> {
    let mut sim = Simulation::new(cfg, policy, seed, world, model)?;
    let mut sched = Scheduler::new(&sim_config(cfg, seed))?;
    let mut log = cfg.event_log.then(EventLog::default);

    let mut rows = Vec::with_capacity(cfg.steps + 1);
    let cost0 = coverage_cost(&sim.true_positions(), world);
    let row = |step: usize, t: SimTime, cost: f64| MetricsRow {
        algorithm: policy,
        seed,
        step,
        sim_time_s: t.as_secs(),
        cost,
        normalized_cost: if cost0 > 0.0 { cost / cost0 } else { 0.0 },
    };
    rows.push(row(0, SimTime::ZERO, cost0));
    for step in 1..=cfg.steps {
        let t = SimTime::from_secs(step as f64 / cfg.frequencies.perception);
        sched.run_until(t, &mut sim, log.as_mut())?;
        rows.push(row(step, t, coverage_cost(&sim.true_positions(), world)));
    }
    Ok(CellResult {
        policy,
        seed,
        rows,
        events: log,
        graphs_built: sim.graphs_built,
        asymmetric_graphs: sim.asymmetric_graphs,
        wire_errors: sim.wire_errors,
        delivered_messages: sim.network.delivered(),
    })
}

/// Thread cap from `PAC_SWARM_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Runs every `(policy, seed)` cell. Cells are independent and may run in
/// parallel; results come back in config order (policy-major).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, ExperimentError> {
    for w in cfg.validate()? {
        log::warn!("{w}");
    }
    let model = if cfg.policies.contains(&PolicyKind::GnnPolicy) {
        Some(policy_model(cfg)?)
    } else {
        None
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads_from_env() {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| ExperimentError::Threads(e.to_string()))?;
    pool.install(|| {
        let worlds: Vec<Arc<World>> = cfg
            .seeds
            .par_iter()
            .map(|&s| world_for_seed(cfg, s).map(Arc::new))
            .collect::<Result<_, _>>()?;
        let jobs: Vec<(PolicyKind, usize)> = cfg
            .policies
            .iter()
            .flat_map(|&p| (0..cfg.seeds.len()).map(move |k| (p, k)))
            .collect();
        let cells = jobs
            .par_iter()
            .map(|&(p, k)| {
                let seed = cfg.seeds[k];
                log::info!("running {p} seed {seed}");
                run_cell(cfg, p, seed, &worlds[k], model.as_ref())
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ExperimentResult { cells })
    })
}

/// Named variant of a base config, e.g. one point of a sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub label: String,
    pub config: ExperimentConfig,
}

/// Perception-rate sweep; every other module keeps its ratio to perception.
pub fn frequency_sweep(base: &ExperimentConfig, hz: &[f64]) -> Vec<SweepPoint> {
    hz.iter()
        .map(|&f| {
            let mut config = base.clone();
            config.frequencies = base.frequencies.rescaled(f);
            config.output_dir = base.output_dir.join(format!("freq_{f:.2}hz"));
            SweepPoint {
                label: format!("{f:.2} Hz"),
                config,
            }
        })
        .collect()
}

/// Position-noise sweep at the fixed sweep perception rate.
pub fn noise_sweep(base: &ExperimentConfig, sigmas: &[f64]) -> Vec<SweepPoint> {
    sigmas
        .iter()
        .map(|&s| {
            let mut config = base.clone();
            config.frequencies = base.frequencies.rescaled(NOISE_SWEEP_HZ);
            config.noise_sigma = s;
            config.output_dir = base.output_dir.join(format!("noise_{s}m"));
            SweepPoint {
                label: format!("sigma {s} m"),
                config,
            }
        })
        .collect()
}
