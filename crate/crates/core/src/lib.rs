//! Simulator for robot swarms running a perception-action-communication
//! loop, with decentralized graph neural network inference over an
//! asynchronous, lossy broadcast network and Lloyd coverage baselines.

pub mod config;
pub mod env;
pub mod experiment;
pub mod gcnn;
pub mod graph;
pub mod model;
pub mod netsim;
pub mod policies;
pub mod rng;
pub mod scheduler;
pub mod verify;

pub use config::{ConfigError, ExperimentConfig};
pub use env::{IdfSpec, World};
pub use experiment::{run_experiment, ExperimentError, ExperimentResult, MetricsRow};
pub use gcnn::{AggregatedMessage, FeatureVec, GcnnParams};
pub use graph::{CommGraph, Normalization, ShapeOperator, Vec2};
pub use model::{ModelError, Tensor, TensorMap};
pub use policies::{Architecture, PolicyKind, PolicyModel};
pub use scheduler::{Frequencies, SimTime};
pub use verify::{verify_suite, VerifyOptions, VerifyReport};
