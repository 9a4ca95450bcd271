//! Learned policy: local-map CNN, aggregated GNN and an MLP readout.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::input::{PolicyInput, INPUT_CHANNELS, INPUT_SIZE};
use super::nn::{CnnParams, Conv2d, Linear, MlpParams};
use super::PolicyError;
use crate::gcnn::{local_round, Activation, AggregatedMessage, FeatureVec, GcnnParams, ShapeRow};
use crate::graph::Vec2;
use crate::model::{require, ModelError, Tensor, TensorMap};

/// Layer widths of the pipeline. The GNN input width is
/// `cnn_features + 2` (the CNN output plus the normalized position).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Architecture {
    pub cnn_channels: usize,
    pub cnn_features: usize,
    /// `d_1..d_L`.
    pub gnn_hidden: Vec<usize>,
    /// `K`.
    pub gnn_taps: usize,
    pub gnn_bias: bool,
    pub gnn_activation: Activation,
    pub mlp_hidden: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            cnn_channels: 32,
            cnn_features: 32,
            gnn_hidden: vec![256, 256],
            gnn_taps: 3,
            gnn_bias: true,
            gnn_activation: Activation::Relu,
            mlp_hidden: 32,
        }
    }
}

impl Architecture {
    pub fn gnn_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.cnn_features + 2];
        dims.extend_from_slice(&self.gnn_hidden);
        dims
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let widths = [self.cnn_channels, self.cnn_features, self.gnn_taps, self.mlp_hidden];
        if self.gnn_hidden.is_empty() || widths.contains(&0) || self.gnn_hidden.contains(&0) {
            return Err(PolicyError::Architecture(
                "every width, the tap count and the layer count must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// All weights of the learned policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    pub cnn: CnnParams,
    pub gnn: GcnnParams,
    pub mlp: MlpParams,
}

impl PolicyModel {
    pub fn random<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Result<Self, PolicyError> {
        arch.validate()?;
        let cnn = CnnParams::random(INPUT_CHANNELS, arch.cnn_channels, arch.cnn_features, rng);
        let gnn = GcnnParams::random(&arch.gnn_dims(), arch.gnn_taps, arch.gnn_activation, arch.gnn_bias, rng)?;
        let mlp = MlpParams::random(gnn.output_dim(), arch.mlp_hidden, rng);
        Ok(Self { cnn, gnn, mlp })
    }

    pub fn zeros(arch: &Architecture) -> Result<Self, PolicyError> {
        arch.validate()?;
        let cnn = CnnParams::zeros(INPUT_CHANNELS, arch.cnn_channels, arch.cnn_features);
        let dims = arch.gnn_dims();
        let weights = dims
            .windows(2)
            .map(|w| vec![DMatrix::zeros(w[0], w[1]); arch.gnn_taps + 1])
            .collect();
        let biases = dims[1..]
            .iter()
            .map(|&d| arch.gnn_bias.then(|| DVector::zeros(d)))
            .collect();
        let gnn = GcnnParams::new(dims, arch.gnn_taps, weights, biases, arch.gnn_activation)?;
        let mlp = MlpParams::zeros(gnn.output_dim(), arch.mlp_hidden);
        Ok(Self { cnn, gnn, mlp })
    }

    pub fn to_tensors(&self) -> TensorMap {
        let mut map = TensorMap::new();
        let mut put = |name: String, shape: Vec<usize>, data: Vec<f64>| {
            map.insert(name, Tensor::from_f64(shape, data));
        };
        for (i, conv) in self.cnn.convs.iter().enumerate() {
            put(
                format!("cnn.conv{}.W", i + 1),
                vec![conv.out_ch, conv.in_ch, 3, 3],
                conv.weight.clone(),
            );
            put(format!("cnn.conv{}.b", i + 1), vec![conv.out_ch], conv.bias.clone());
        }
        let mut linear = |prefix: &str, l: &Linear| {
            put(format!("{prefix}.W"), vec![l.d_in(), l.d_out()], row_major(&l.weight));
            put(format!("{prefix}.b"), vec![l.d_out()], l.bias.iter().copied().collect());
        };
        linear("cnn.out", &self.cnn.out);
        linear("mlp.h", &self.mlp.hidden);
        linear("mlp.out", &self.mlp.out);
        for l in 0..self.gnn.layers() {
            for k in 0..=self.gnn.taps() {
                let h = self.gnn.weight(l, k);
                map.insert(
                    format!("gnn.l{}.k{k}.H", l + 1),
                    Tensor::from_f64(vec![h.nrows(), h.ncols()], row_major(h)),
                );
            }
            if let Some(b) = self.gnn.bias(l) {
                map.insert(
                    format!("gnn.l{}.b", l + 1),
                    Tensor::from_f64(vec![b.len()], b.iter().copied()),
                );
            }
        }
        map
    }

    /// Builds a model from named tensors; every tensor the architecture
    /// implies must be present with the implied shape.
    pub fn from_tensors(map: &TensorMap, arch: &Architecture) -> Result<Self, PolicyError> {
        arch.validate()?;
        let (c, f) = (arch.cnn_channels, arch.cnn_features);
        let mut convs = Vec::with_capacity(3);
        for (i, in_ch) in [INPUT_CHANNELS, c, c].into_iter().enumerate() {
            let w = require(map, &format!("cnn.conv{}.W", i + 1), &[c, in_ch, 3, 3])?;
            let b = require(map, &format!("cnn.conv{}.b", i + 1), &[c])?;
            convs.push(Conv2d {
                in_ch,
                out_ch: c,
                weight: widen(&w.data),
                bias: widen(&b.data),
            });
        }
        let cnn = CnnParams {
            convs,
            out: linear_from(map, "cnn.out", c, f)?,
        };

        let dims = arch.gnn_dims();
        let taps = arch.gnn_taps;
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (din, dout) = (dims[l], dims[l + 1]);
            let mut taps_l = Vec::with_capacity(taps + 1);
            for k in 0..=taps {
                let h = require(map, &format!("gnn.l{}.k{k}.H", l + 1), &[din, dout])?;
                taps_l.push(DMatrix::from_row_slice(din, dout, &widen(&h.data)));
            }
            weights.push(taps_l);
            biases.push(if arch.gnn_bias {
                let b = require(map, &format!("gnn.l{}.b", l + 1), &[dout])?;
                Some(DVector::from_vec(widen(&b.data)))
            } else {
                None
            });
        }
        let gnn = GcnnParams::new(dims.clone(), taps, weights, biases, arch.gnn_activation)?;
        let d_l = *dims.last().expect("validated non-empty");
        let mlp = MlpParams {
            hidden: linear_from(map, "mlp.h", d_l, arch.mlp_hidden)?,
            out: linear_from(map, "mlp.out", arch.mlp_hidden, 2)?,
        };
        Ok(Self { cnn, gnn, mlp })
    }

    pub fn cnn_forward(&self, input: &PolicyInput) -> Result<DVector<f64>, PolicyError> {
        self.cnn.forward(&input.data, INPUT_SIZE)
    }
}

fn widen(data: &[f32]) -> Vec<f64> {
    data.iter().map(|&v| f64::from(v)).collect()
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows())
        .flat_map(|r| (0..m.ncols()).map(move |c| (r, c)))
        .map(|(r, c)| m[(r, c)])
        .collect()
}

fn linear_from(map: &TensorMap, prefix: &str, d_in: usize, d_out: usize) -> Result<Linear, ModelError> {
    let w = require(map, &format!("{prefix}.W"), &[d_in, d_out])?;
    let b = require(map, &format!("{prefix}.b"), &[d_out])?;
    Ok(Linear {
        weight: DMatrix::from_row_slice(d_in, d_out, &widen(&w.data)),
        bias: DVector::from_vec(widen(&b.data)),
    })
}

/// Feature vector `[cnn ∥ p / side]`.
pub fn policy_features(cnn_out: &DVector<f64>, position: Vec2, side: f64) -> FeatureVec {
    let mut v = Vec::with_capacity(cnn_out.len() + 2);
    v.extend(cnn_out.iter().copied());
    v.push(position.x / side);
    v.push(position.y / side);
    FeatureVec(DVector::from_vec(v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyStep {
    pub velocity: Vec2,
    pub message: AggregatedMessage,
}

/// One GNN tick for one robot: aggregate the inbox, run the readout and
/// clamp the speed.
pub fn gnn_policy_step(
    model: &PolicyModel,
    features: &FeatureVec,
    inbox: &[AggregatedMessage],
    s_row: &ShapeRow,
    sender_id: u32,
    seq: u32,
    v_max: f64,
) -> Result<PolicyStep, PolicyError> {
    let round = local_round(&model.gnn, features, inbox, s_row, sender_id, seq)?;
    let out = model.mlp.forward(&round.output);
    Ok(PolicyStep {
        velocity: Vec2::new(out[0], out[1]).clamp_norm(v_max),
        message: round.message,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> Architecture {
        Architecture {
            cnn_channels: 4,
            cnn_features: 3,
            gnn_hidden: vec![6, 5],
            gnn_taps: 2,
            gnn_bias: true,
            gnn_activation: Activation::Tanh,
            mlp_hidden: 4,
        }
    }

    #[test]
    fn default_architecture_message_size() {
        let arch = Architecture::default();
        assert_eq!(arch.gnn_dims(), vec![34, 256, 256]);
        let m = PolicyModel::zeros(&arch).unwrap();
        assert_eq!(m.gnn.message_value_count(), 870);
        assert_eq!(m.cnn_forward(&PolicyInput::zeros()).unwrap().len(), 32);
    }

    #[test]
    fn zero_weights_give_zero_velocity_and_zero_higher_columns() {
        let arch = Architecture::default();
        let m = PolicyModel::zeros(&arch).unwrap();
        let f = policy_features(&DVector::zeros(32), Vec2::new(100.0, 300.0), 1024.0);
        let alone = gnn_policy_step(&m, &f, &[], &ShapeRow::default(), 0, 1, 5.0).unwrap();
        assert_eq!(alone.velocity, Vec2::ZERO);
        for cols in &alone.message.layers {
            assert!(cols[1..].iter().all(|c| c.iter().all(|&v| v == 0.0)));
        }
        // A neighbor's input still diffuses into the first layer's columns,
        // but nothing survives the zero filters.
        let neighbor = AggregatedMessage::seed(&m.gnn, &f, 1, 0);
        let step = gnn_policy_step(&m, &f, &[neighbor], &ShapeRow::new(vec![(1, 0.5)]), 0, 1, 5.0).unwrap();
        assert_eq!(step.velocity, Vec2::ZERO);
        assert!(step.message.layers[0][1].iter().any(|&v| v != 0.0));
        assert!(step.message.layers[1].iter().all(|c| c.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn tensors_round_trip_exactly_at_f32() {
        let arch = small();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = PolicyModel::random(&arch, &mut rng).unwrap();
        let t = m.to_tensors();
        assert!(t.contains_key("gnn.l2.k2.H") && t.contains_key("mlp.out.b"));
        let back = PolicyModel::from_tensors(&t, &arch).unwrap();
        assert_eq!(back.to_tensors(), t);
    }

    #[test]
    fn missing_or_misshapen_tensor_is_named() {
        let arch = small();
        let m = PolicyModel::zeros(&arch).unwrap();
        let mut t = m.to_tensors();
        t.remove("gnn.l1.k0.H");
        assert!(matches!(
            PolicyModel::from_tensors(&t, &arch),
            Err(PolicyError::Model(ModelError::MissingTensor(n))) if n == "gnn.l1.k0.H"
        ));
        let mut t = m.to_tensors();
        t.insert("mlp.h.W".into(), Tensor::new(vec![2, 2], vec![0.0; 4]));
        assert!(matches!(
            PolicyModel::from_tensors(&t, &arch),
            Err(PolicyError::Model(ModelError::ShapeMismatch { .. }))
        ));
    }

    #[test]
    fn inbox_order_does_not_change_the_step() {
        let arch = small();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = PolicyModel::random(&arch, &mut rng).unwrap();
        let f = |s: f64| policy_features(&DVector::from_element(3, s), Vec2::new(s, 2.0 * s), 10.0);
        let inbox: Vec<AggregatedMessage> = (1..5)
            .map(|j| {
                let r = local_round(&m.gnn, &f(j as f64), &[], &ShapeRow::default(), j, 0).unwrap();
                r.message
            })
            .collect();
        let row = ShapeRow::new((1..5).map(|j| (j, 0.1 * j as f64)).collect());
        let a = gnn_policy_step(&m, &f(0.5), &inbox, &row, 0, 1, 5.0).unwrap();
        let mut rev = inbox.clone();
        rev.reverse();
        rev.swap(0, 2);
        let b = gnn_policy_step(&m, &f(0.5), &rev, &row, 0, 1, 5.0).unwrap();
        assert_eq!(a, b);
    }
}
