//! Deterministic discrete-event timeline running the perception, communication,
//! GNN and control modules of every robot at their own rates.
//!
//! Time is kept in integer nanoseconds. A clock with period `T` and phase `φ`
//! fires at `round((φ + n·T) · 1e9)`, so clocks whose periods differ by a power
//! of two land on exactly the same instants. Events at the same instant run in
//! module order (perception, comm_rx, gnn, comm_tx, control), then by robot.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netsim::ChannelConfig;
use crate::rng::{stream, Stream};

/// Simulation instant in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_secs(s: f64) -> Self {
        SimTime((s * 1e9).round().max(0.0) as u64)
    }

    pub fn as_secs(self) -> f64 {
        self.0 as f64 / 1e9
    }

    pub fn as_micros(self) -> u64 {
        self.0 / 1_000
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:09}", self.0 / 1_000_000_000, self.0 % 1_000_000_000)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleKind {
    Perception = 0,
    CommRx = 1,
    Gnn = 2,
    CommTx = 3,
    Control = 4,
}

impl ModuleKind {
    pub const ALL: [ModuleKind; 5] = [
        Self::Perception,
        Self::CommRx,
        Self::Gnn,
        Self::CommTx,
        Self::Control,
    ];

    pub fn priority(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Perception => "perception",
            Self::CommRx => "comm_rx",
            Self::Gnn => "gnn",
            Self::CommTx => "comm_tx",
            Self::Control => "control",
        }
    }
}

impl fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Field order gives the pop order: time, then module priority, then robot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Event {
    pub time: SimTime,
    pub kind: ModuleKind,
    pub robot: u32,
}

#[derive(Debug, Clone)]
pub struct ModuleClock {
    pub kind: ModuleKind,
    pub period_s: f64,
    pub phase_s: f64,
    fired: u64,
}

impl ModuleClock {
    pub fn new(kind: ModuleKind, period_s: f64, phase_s: f64) -> Result<Self, SchedulerError> {
        if !(period_s > 0.0 && period_s.is_finite()) {
            return Err(SchedulerError::InvalidConfig(format!(
                "{kind} period must be positive, got {period_s}"
            )));
        }
        if !(phase_s >= 0.0 && phase_s.is_finite()) {
            return Err(SchedulerError::InvalidConfig(format!(
                "{kind} phase must be non-negative, got {phase_s}"
            )));
        }
        Ok(Self {
            kind,
            period_s,
            phase_s,
            fired: 0,
        })
    }

    /// Instant of the `n`-th firing (zero-based).
    pub fn fire_time(&self, n: u64) -> SimTime {
        SimTime::from_secs(self.phase_s + n as f64 * self.period_s)
    }

    pub fn next_fire(&self) -> SimTime {
        self.fire_time(self.fired)
    }

    pub fn fired(&self) -> u64 {
        self.fired
    }

    fn advance(&mut self) {
        self.fired += 1;
    }
}

#[derive(Debug, Default, Clone)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Event>>,
}

impl EventQueue {
    pub fn push(&mut self, e: Event) {
        self.heap.push(Reverse(e));
    }

    /// Smallest `(time, priority, robot)`; `None` marks the end of the simulation.
    pub fn next_event(&mut self) -> Option<Event> {
        self.heap.pop().map(|Reverse(e)| e)
    }

    pub fn peek(&self) -> Option<&Event> {
        self.heap.peek().map(|Reverse(e)| e)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// Module rates in Hz. `comm` defaults to twice the GNN rate; each communication
/// firing either receives or transmits, so comm_rx and comm_tx each run at
/// half the communication rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Frequencies {
    pub perception: f64,
    pub gnn: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comm: Option<f64>,
    pub control: f64,
}

impl Default for Frequencies {
    fn default() -> Self {
        Self {
            perception: 2.5,
            gnn: 10.0,
            comm: None,
            control: 20.0,
        }
    }
}

impl Frequencies {
    pub fn comm_hz(&self) -> f64 {
        self.comm.unwrap_or(2.0 * self.gnn)
    }

    pub fn period(&self, kind: ModuleKind) -> f64 {
        match kind {
            ModuleKind::Perception => 1.0 / self.perception,
            ModuleKind::Gnn => 1.0 / self.gnn,
            ModuleKind::CommRx | ModuleKind::CommTx => 2.0 / self.comm_hz(),
            ModuleKind::Control => 1.0 / self.control,
        }
    }

    /// Same ratios to perception, perception moved to `hz`.
    pub fn rescaled(&self, hz: f64) -> Self {
        let r = hz / self.perception;
        Self {
            perception: hz,
            gnn: self.gnn * r,
            comm: self.comm.map(|c| c * r),
            control: self.control * r,
        }
    }

    pub fn validate(&self) -> Result<Vec<String>, SchedulerError> {
        for (name, v) in [
            ("perception", self.perception),
            ("gnn", self.gnn),
            ("comm", self.comm_hz()),
            ("control", self.control),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SchedulerError::InvalidConfig(format!(
                    "{name} frequency must be positive, got {v}"
                )));
            }
        }
        let mut warnings = Vec::new();
        if self.gnn < self.perception {
            warnings.push(format!(
                "gnn frequency {} Hz is below perception frequency {} Hz",
                self.gnn, self.perception
            ));
        }
        Ok(warnings)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub horizon_s: f64,
    pub robots: usize,
    pub seed: u64,
    #[serde(default)]
    pub frequencies: Frequencies,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub noise_sigma: f64,
    /// Per-robot clock offsets are drawn uniformly from `[0, phase_jitter_s)`.
    #[serde(default)]
    pub phase_jitter_s: f64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<Vec<String>, SchedulerError> {
        if !(self.horizon_s >= 0.0 && self.horizon_s.is_finite()) {
            return Err(SchedulerError::InvalidConfig(format!(
                "horizon must be non-negative, got {}",
                self.horizon_s
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(SchedulerError::InvalidConfig(format!(
                "noise sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        if !(self.phase_jitter_s >= 0.0 && self.phase_jitter_s.is_finite()) {
            return Err(SchedulerError::InvalidConfig("phase jitter must be non-negative".into()));
        }
        self.frequencies.validate()
    }
}

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("invalid schedule: {0}")]
    InvalidConfig(String),
    #[error("{} callback for robot {} at t={} failed: {source}", .event.kind, .event.robot, .event.time)]
    Callback {
        event: Event,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

pub type CallbackError = Box<dyn std::error::Error + Send + Sync>;

/// Receives every event in timeline order.
pub trait EventHandler {
    fn handle(&mut self, event: &Event) -> Result<(), CallbackError>;
}

impl<F> EventHandler for F
where
    F: FnMut(&Event) -> Result<(), CallbackError>,
{
    fn handle(&mut self, event: &Event) -> Result<(), CallbackError> {
        self(event)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventLog {
    pub events: Vec<Event>,
}

impl EventLog {
    pub fn count(&self, kind: ModuleKind, robot: u32) -> usize {
        self.events
            .iter()
            .filter(|e| e.kind == kind && e.robot == robot)
            .count()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time_s,kind,robot")?;
        for e in &self.events {
            writeln!(w, "{},{},{}", e.time, e.kind, e.robot)?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii csv")
    }
}

/// Resumable event loop over all robots' module clocks.
#[derive(Debug, Clone)]
pub struct Scheduler {
    clocks: Vec<ModuleClock>,
    queue: EventQueue,
    now: SimTime,
}

impl Scheduler {
    pub fn new(config: &SimConfig) -> Result<Self, SchedulerError> {
        for w in config.validate()? {
            log::warn!("{w}");
        }
        let mut jitter_rng = stream(config.seed, Stream::PhaseJitter);
        let mut clocks = Vec::with_capacity(config.robots * ModuleKind::ALL.len());
        for _ in 0..config.robots {
            let phase = if config.phase_jitter_s > 0.0 {
                jitter_rng.random_range(0.0..config.phase_jitter_s)
            } else {
                0.0
            };
            for kind in ModuleKind::ALL {
                clocks.push(ModuleClock::new(kind, config.frequencies.period(kind), phase)?);
            }
        }
        let mut queue = EventQueue::default();
        for (idx, c) in clocks.iter().enumerate() {
            queue.push(Event {
                time: c.next_fire(),
                kind: c.kind,
                robot: (idx / ModuleKind::ALL.len()) as u32,
            });
        }
        Ok(Self {
            clocks,
            queue,
            now: SimTime::ZERO,
        })
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn clock(&self, robot: u32, kind: ModuleKind) -> &ModuleClock {
        &self.clocks[robot as usize * ModuleKind::ALL.len() + kind as usize]
    }

    pub fn peek(&self) -> Option<&Event> {
        self.queue.peek()
    }

    /// Fires every pending event with `time < until` and returns how many fired.
    pub fn run_until<H: EventHandler + ?Sized>(
        &mut self,
        until: SimTime,
        handler: &mut H,
        mut log: Option<&mut EventLog>,
    ) -> Result<usize, SchedulerError> {
        let mut fired = 0;
        while self.queue.peek().is_some_and(|e| e.time < until) {
            let event = self.queue.next_event().expect("peeked");
            self.now = event.time;
            handler
                .handle(&event)
                .map_err(|source| SchedulerError::Callback { event, source })?;
            if let Some(log) = log.as_deref_mut() {
                log.events.push(event);
            }
            let clock = &mut self.clocks[event.robot as usize * ModuleKind::ALL.len() + event.kind as usize];
            clock.advance();
            self.queue.push(Event {
                time: clock.next_fire(),
                ..event
            });
            fired += 1;
        }
        Ok(fired)
    }
}

/// Runs a whole configuration to its horizon and returns the event log.
pub fn run_until<H: EventHandler + ?Sized>(config: &SimConfig, handler: &mut H) -> Result<EventLog, SchedulerError> {
    let mut sched = Scheduler::new(config)?;
    let mut log = EventLog::default();
    sched.run_until(SimTime::from_secs(config.horizon_s), handler, Some(&mut log))?;
    Ok(log)
}
