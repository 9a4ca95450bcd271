//! Aggregated graph-convolutional network: per-robot inference from
//! neighbor messages, and the dense whole-swarm forward pass it must agree with.
//!
//! A layer `l` evaluates the graph filter `sum_{k=0..K} S^k X_{l-1} H_lk`.
//! Robot `i` never sees `S^k`; it only sees the columns `(y_j)_{(k-1)l}` that
//! its neighbors broadcast, and forms its own columns as
//! `(y_i)_{kl} = sum_j [S]_ij (y_j)_{(k-1)l}`. Messages carry columns
//! `0..K-1` for every layer; column `K` is only needed locally.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::ShapeOperator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GcnnError {
    #[error("network needs at least one layer and one filter tap")]
    EmptyArchitecture,
    #[error("{what}: expected {expected:?}, got {actual:?}")]
    Shape {
        what: String,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("message from robot {sender} does not match the network architecture")]
    Protocol { sender: u32 },
    #[error("inbox holds two messages from robot {0}")]
    DuplicateSender(u32),
}

/// Filter taps `H_lk` (k = 0..=K), optional biases and the point-wise nonlinearity.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnnParams {
    dims: Vec<usize>,
    taps: usize,
    weights: Vec<Vec<DMatrix<f64>>>,
    biases: Vec<Option<DVector<f64>>>,
    activation: Activation,
}

impl GcnnParams {
    /// `weights[l][k]` must be `dims[l] x dims[l+1]` for `k in 0..=taps`.
    pub fn new(
        dims: Vec<usize>,
        taps: usize,
        weights: Vec<Vec<DMatrix<f64>>>,
        biases: Vec<Option<DVector<f64>>>,
        activation: Activation,
    ) -> Result<Self, GcnnError> {
        if dims.len() < 2 || taps == 0 || dims.contains(&0) {
            return Err(GcnnError::EmptyArchitecture);
        }
        let layers = dims.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(GcnnError::Shape {
                what: "layer count".into(),
                expected: (layers, layers),
                actual: (weights.len(), biases.len()),
            });
        }
        for (l, taps_l) in weights.iter().enumerate() {
            if taps_l.len() != taps + 1 {
                return Err(GcnnError::Shape {
                    what: format!("tap count of layer {}", l + 1),
                    expected: (taps + 1, 1),
                    actual: (taps_l.len(), 1),
                });
            }
            for (k, h) in taps_l.iter().enumerate() {
                if h.shape() != (dims[l], dims[l + 1]) {
                    return Err(GcnnError::Shape {
                        what: format!("H[{}][{k}]", l + 1),
                        expected: (dims[l], dims[l + 1]),
                        actual: h.shape(),
                    });
                }
                if h.iter().any(|v| !v.is_finite()) {
                    return Err(GcnnError::NonFinite(format!("H[{}][{k}]", l + 1)));
                }
            }
            if let Some(b) = &biases[l] {
                if b.len() != dims[l + 1] {
                    return Err(GcnnError::Shape {
                        what: format!("bias of layer {}", l + 1),
                        expected: (dims[l + 1], 1),
                        actual: (b.len(), 1),
                    });
                }
                if b.iter().any(|v| !v.is_finite()) {
                    return Err(GcnnError::NonFinite(format!("bias of layer {}", l + 1)));
                }
            }
        }
        Ok(Self {
            dims,
            taps,
            weights,
            biases,
            activation,
        })
    }

    /// Uniform Glorot-style initialization scaled down by the tap count.
    pub fn random<R: Rng + ?Sized>(
        dims: &[usize],
        taps: usize,
        activation: Activation,
        with_bias: bool,
        rng: &mut R,
    ) -> Result<Self, GcnnError> {
        if dims.len() < 2 {
            return Err(GcnnError::EmptyArchitecture);
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..dims.len() - 1 {
            let (din, dout) = (dims[l], dims[l + 1]);
            let a = (6.0 / ((din + dout) as f64 * (taps + 1) as f64)).sqrt();
            weights.push(
                (0..=taps)
                    .map(|_| DMatrix::from_fn(din, dout, |_, _| rng.random_range(-a..a)))
                    .collect(),
            );
            biases.push(
                with_bias.then(|| DVector::from_fn(dout, |_, _| rng.random_range(-0.1..0.1))),
            );
        }
        Self::new(dims.to_vec(), taps, weights, biases, activation)
    }

    pub fn zeros(dims: &[usize], taps: usize, activation: Activation) -> Result<Self, GcnnError> {
        let weights = dims
            .windows(2)
            .map(|w| vec![DMatrix::zeros(w[0], w[1]); taps + 1])
            .collect();
        let biases = vec![None; dims.len().saturating_sub(1)];
        Self::new(dims.to_vec(), taps, weights, biases, activation)
    }

    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// Number of filter taps `K` (hops of diffusion per layer).
    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.dims[self.dims.len() - 1]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// `H_lk` for zero-based layer `layer`.
    pub fn weight(&self, layer: usize, k: usize) -> &DMatrix<f64> {
        &self.weights[layer][k]
    }

    pub fn weight_mut(&mut self, layer: usize, k: usize) -> &mut DMatrix<f64> {
        &mut self.weights[layer][k]
    }

    pub fn bias(&self, layer: usize) -> Option<&DVector<f64>> {
        self.biases[layer].as_ref()
    }

    /// Scalars carried by one aggregated message: `K * sum_{l=1..L} d_{l-1}`.
    pub fn message_value_count(&self) -> usize {
        self.taps * self.dims[..self.layers()].iter().sum::<usize>()
    }
}

pub fn message_value_count(params: &GcnnParams) -> usize {
    params.message_value_count()
}

/// Input features `(x_i)_0` of one robot.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVec(pub DVector<f64>);

impl FeatureVec {
    pub fn from_slice(values: &[f64]) -> Self {
        Self(DVector::from_column_slice(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-robot message: for each layer, the first `K` filter columns.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedMessage {
    pub sender_id: u32,
    pub seq: u32,
    /// `layers[l][k]` is `(y_i)_{k,l+1}`, of length `d_l`.
    pub layers: Vec<Vec<DVector<f64>>>,
}

impl AggregatedMessage {
    /// All-zero message shaped for `params`.
    pub fn zeros(params: &GcnnParams, sender_id: u32, seq: u32) -> Self {
        let layers = params.dims[..params.layers()]
            .iter()
            .map(|&d| vec![DVector::zeros(d); params.taps])
            .collect();
        Self {
            sender_id,
            seq,
            layers,
        }
    }

    /// Message announcing only the input features; every other column is zero.
    ///
    /// Neighbors that receive it can form their first diffusion column in the
    /// very first round, which is what makes `K * L` rounds sufficient.
    pub fn seed(params: &GcnnParams, features: &FeatureVec, sender_id: u32, seq: u32) -> Self {
        let mut m = Self::zeros(params, sender_id, seq);
        if features.len() == params.input_dim() {
            m.layers[0][0].copy_from(&features.0);
        }
        m
    }

    pub fn taps(&self) -> usize {
        self.layers.first().map_or(0, Vec::len)
    }

    /// Layer input widths `d_0..d_{L-1}` as carried by the message.
    pub fn layer_dims(&self) -> Vec<usize> {
        self.layers
            .iter()
            .map(|cols| cols.first().map_or(0, DVector::len))
            .collect()
    }

    pub fn value_count(&self) -> usize {
        self.layers.iter().flatten().map(DVector::len).sum()
    }

    pub fn matches(&self, params: &GcnnParams) -> bool {
        self.layers.len() == params.layers()
            && self.layers.iter().zip(&params.dims).all(|(cols, &d)| {
                cols.len() == params.taps && cols.iter().all(|c| c.len() == d)
            })
    }
}

/// Row `i` of the shift operator as seen by robot `i`: `(neighbor, [S]_ij)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ShapeRow(Vec<(u32, f64)>);

impl ShapeRow {
    pub fn new(mut entries: Vec<(u32, f64)>) -> Self {
        entries.sort_by_key(|&(j, _)| j);
        entries.dedup_by_key(|&mut (j, _)| j);
        Self(entries)
    }

    pub fn from_operator(s: &ShapeOperator, i: usize) -> Self {
        Self(s.row(i).iter().map(|&(j, w)| (j as u32, w)).collect())
    }

    pub fn weight(&self, j: u32) -> f64 {
        self.0
            .binary_search_by_key(&j, |&(id, _)| id)
            .map_or(0.0, |pos| self.0[pos].1)
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutput {
    /// `(x_i)_L`.
    pub output: DVector<f64>,
    /// `Y_i` to broadcast next.
    pub message: AggregatedMessage,
}

/// One aggregation-and-inference pass for a single robot.
///
/// Inbox messages are folded in ascending sender order so the result does not
/// depend on arrival order. Senders without an entry in `s_row` contribute
/// nothing.
pub fn local_round(
    params: &GcnnParams,
    features: &FeatureVec,
    inbox: &[AggregatedMessage],
    s_row: &ShapeRow,
    sender_id: u32,
    seq: u32,
) -> Result<RoundOutput, GcnnError> {
    if features.len() != params.input_dim() {
        return Err(GcnnError::Shape {
            what: "input features".into(),
            expected: (params.input_dim(), 1),
            actual: (features.len(), 1),
        });
    }
    let mut ordered: Vec<&AggregatedMessage> = inbox.iter().collect();
    ordered.sort_by_key(|m| m.sender_id);
    for pair in ordered.windows(2) {
        if pair[0].sender_id == pair[1].sender_id {
            return Err(GcnnError::DuplicateSender(pair[0].sender_id));
        }
    }
    if let Some(bad) = ordered.iter().find(|m| !m.matches(params)) {
        return Err(GcnnError::Protocol {
            sender: bad.sender_id,
        });
    }
    let weighted: Vec<(f64, &AggregatedMessage)> = ordered
        .into_iter()
        .map(|m| (s_row.weight(m.sender_id), m))
        .filter(|&(w, _)| w != 0.0)
        .collect();

    let taps = params.taps;
    let mut x = features.0.clone();
    let mut layers = Vec::with_capacity(params.layers());
    for l in 0..params.layers() {
        let d_in = params.dims[l];
        let mut cols: Vec<DVector<f64>> = Vec::with_capacity(taps + 1);
        cols.push(x);
        let mut z = params.weights[l][0].tr_mul(&cols[0]);
        for k in 1..=taps {
            let mut y = DVector::zeros(d_in);
            for &(w, m) in &weighted {
                y.axpy(w, &m.layers[l][k - 1], 1.0);
            }
            z += params.weights[l][k].tr_mul(&y);
            cols.push(y);
        }
        if let Some(b) = &params.biases[l] {
            z += b;
        }
        z.apply(|v| *v = params.activation.apply(*v));
        cols.truncate(taps);
        layers.push(cols);
        x = z;
    }
    Ok(RoundOutput {
        output: x,
        message: AggregatedMessage {
            sender_id,
            seq,
            layers,
        },
    })
}

/// Whole-swarm forward pass `X_l = sigma(sum_k S^k X_{l-1} H_lk + 1 b_l^T)`
/// using explicit dense powers of `S`.
pub fn centralized_forward(
    features: &DMatrix<f64>,
    shift: &DMatrix<f64>,
    params: &GcnnParams,
) -> Result<DMatrix<f64>, GcnnError> {
    let n = features.nrows();
    if shift.shape() != (n, n) {
        return Err(GcnnError::Shape {
            what: "shift operator".into(),
            expected: (n, n),
            actual: shift.shape(),
        });
    }
    if features.ncols() != params.input_dim() {
        return Err(GcnnError::Shape {
            what: "feature matrix".into(),
            expected: (n, params.input_dim()),
            actual: features.shape(),
        });
    }
    let mut powers = vec![DMatrix::<f64>::identity(n, n)];
    for k in 1..=params.taps {
        let next = &powers[k - 1] * shift;
        powers.push(next);
    }
    let mut x = features.clone();
    for l in 0..params.layers() {
        let mut z = DMatrix::zeros(n, params.dims[l + 1]);
        for (k, sk) in powers.iter().enumerate() {
            z += sk * &x * &params.weights[l][k];
        }
        if let Some(b) = &params.biases[l] {
            for mut row in z.row_iter_mut() {
                row += b.transpose();
            }
        }
        z.apply(|v| *v = params.activation.apply(*v));
        x = z;
    }
    Ok(x)
}

/// Runs `rounds` lock-step local rounds on a static graph.
///
/// Before the first round every robot broadcasts [`AggregatedMessage::seed`];
/// in each round every robot consumes its neighbors' previous messages. After
/// `K * L` rounds the outputs equal [`centralized_forward`].
pub fn run_synchronous(
    params: &GcnnParams,
    features: &[FeatureVec],
    shift: &ShapeOperator,
    rounds: usize,
) -> Result<Vec<DVector<f64>>, GcnnError> {
    let n = features.len();
    if shift.dim() != n {
        return Err(GcnnError::Shape {
            what: "shift operator".into(),
            expected: (n, n),
            actual: (shift.dim(), shift.dim()),
        });
    }
    let rows: Vec<ShapeRow> = (0..n).map(|i| ShapeRow::from_operator(shift, i)).collect();
    let mut messages: Vec<AggregatedMessage> = features
        .iter()
        .enumerate()
        .map(|(i, x)| AggregatedMessage::seed(params, x, i as u32, 0))
        .collect();
    let mut outputs = vec![DVector::zeros(params.output_dim()); n];
    for round in 1..=rounds {
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let inbox: Vec<AggregatedMessage> = shift
                .row(i)
                .iter()
                .map(|&(j, _)| messages[j].clone())
                .collect();
            let out = local_round(params, &features[i], &inbox, &rows[i], i as u32, round as u32)?;
            outputs[i] = out.output;
            next.push(out.message);
        }
        messages = next;
    }
    Ok(outputs)
}

/// Max-abs difference scaled by the reference magnitude (floored at 1).
pub fn relative_max_error(actual: &[DVector<f64>], reference: &DMatrix<f64>) -> f64 {
    let scale = reference.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut worst = 0.0f64;
    for (i, row) in actual.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            worst = worst.max((v - reference[(i, j)]).abs());
        }
    }
    worst / scale
}
