//! Action computation: Lloyd baselines and the learned CNN, GNN, MLP policy.

mod input;
mod lloyd;
mod nn;
mod pipeline;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gcnn::GcnnError;
use crate::model::ModelError;

pub use input::{build_policy_input, neighbor_cell, PolicyInput, INPUT_CHANNELS, INPUT_SIZE};
pub use lloyd::{knowledge, lloyd_action, lloyd_target, lloyd_targets, velocity_toward, DensityView, Knowledge};
pub use nn::{CnnParams, Conv2d, Linear, MlpParams};
pub use pipeline::{gnn_policy_step, policy_features, Architecture, PolicyModel, PolicyStep};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("the learned policy has no Lloyd knowledge view")]
    NotLloyd,
    #[error("policy input has {actual} values, expected {expected}")]
    InputShape { expected: usize, actual: usize },
    #[error("invalid policy architecture: {0}")]
    Architecture(String),
    #[error(transparent)]
    Gcnn(#[from] GcnnError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    ClairvoyantLloyd,
    CentralizedLloyd,
    DecentralizedLloyd,
    GnnPolicy,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        Self::ClairvoyantLloyd,
        Self::CentralizedLloyd,
        Self::DecentralizedLloyd,
        Self::GnnPolicy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::ClairvoyantLloyd => "clairvoyant_lloyd",
            Self::CentralizedLloyd => "centralized_lloyd",
            Self::DecentralizedLloyd => "decentralized_lloyd",
            Self::GnnPolicy => "gnn_policy",
        }
    }

    pub fn is_lloyd(self) -> bool {
        self != Self::GnnPolicy
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown policy {s:?}"))
    }
}
