//! Small dense building blocks for the learned policy: a strided 3x3
//! convolution stack for the local maps and a two-layer readout.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::PolicyError;

/// 3x3 convolution, stride 2, zero padding 1, ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    /// `[out][in][ky][kx]`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub const KERNEL: usize = 3;

    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            weight: vec![0.0; out_ch * in_ch * 9],
            bias: vec![0.0; out_ch],
        }
    }

    pub fn random<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        // He-uniform; keeps activations from dying out across three ReLU layers.
        let a = (6.0 / (in_ch * 9) as f64).sqrt();
        Self {
            in_ch,
            out_ch,
            weight: (0..out_ch * in_ch * 9).map(|_| rng.random_range(-a..a)).collect(),
            bias: vec![0.0; out_ch],
        }
    }

    pub fn out_size(size: usize) -> usize {
        (size + 2 - Self::KERNEL) / 2 + 1
    }

    /// `input` is `[in_ch][size][size]`; returns `[out_ch][s'][s']` and `s'`.
    pub fn forward(&self, input: &[f64], size: usize) -> (Vec<f64>, usize) {
        debug_assert_eq!(input.len(), self.in_ch * size * size);
        let os = Self::out_size(size);
        let mut out = vec![0.0; self.out_ch * os * os];
        for o in 0..self.out_ch {
            let plane = &mut out[o * os * os..(o + 1) * os * os];
            plane.fill(self.bias[o]);
            for c in 0..self.in_ch {
                let w = &self.weight[(o * self.in_ch + c) * 9..(o * self.in_ch + c + 1) * 9];
                let src = &input[c * size * size..(c + 1) * size * size];
                for oy in 0..os {
                    for ky in 0..3 {
                        let iy = (2 * oy + ky) as isize - 1;
                        if iy < 0 || iy >= size as isize {
                            continue;
                        }
                        let row = &src[iy as usize * size..(iy as usize + 1) * size];
                        for ox in 0..os {
                            let mut acc = 0.0;
                            for kx in 0..3 {
                                let ix = (2 * ox + kx) as isize - 1;
                                if ix >= 0 && ix < size as isize {
                                    acc += w[ky * 3 + kx] * row[ix as usize];
                                }
                            }
                            plane[oy * os + ox] += acc;
                        }
                    }
                }
            }
            for v in plane.iter_mut() {
                *v = v.max(0.0);
            }
        }
        (out, os)
    }
}

/// Affine map `y = W^T x + b` with `W` stored `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Linear {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            weight: DMatrix::zeros(d_in, d_out),
            bias: DVector::zeros(d_out),
        }
    }

    pub fn random<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let a = (6.0 / (d_in + d_out) as f64).sqrt();
        Self {
            weight: DMatrix::from_fn(d_in, d_out, |_, _| rng.random_range(-a..a)),
            bias: DVector::zeros(d_out),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        self.weight.tr_mul(x) + &self.bias
    }
}

/// Local-map encoder: three strided convolutions, global average pooling and
/// a linear projection.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnParams {
    pub convs: Vec<Conv2d>,
    pub out: Linear,
}

impl CnnParams {
    pub fn zeros(in_ch: usize, channels: usize, features: usize) -> Self {
        Self {
            convs: vec![
                Conv2d::zeros(in_ch, channels),
                Conv2d::zeros(channels, channels),
                Conv2d::zeros(channels, channels),
            ],
            out: Linear::zeros(channels, features),
        }
    }

    pub fn random<R: Rng + ?Sized>(in_ch: usize, channels: usize, features: usize, rng: &mut R) -> Self {
        Self {
            convs: vec![
                Conv2d::random(in_ch, channels, rng),
                Conv2d::random(channels, channels, rng),
                Conv2d::random(channels, channels, rng),
            ],
            out: Linear::random(channels, features, rng),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.convs[0].in_ch
    }

    pub fn features(&self) -> usize {
        self.out.d_out()
    }

    /// `input` is `[in_ch][size][size]`.
    pub fn forward(&self, input: &[f64], size: usize) -> Result<DVector<f64>, PolicyError> {
        let expect = self.in_channels() * size * size;
        if input.len() != expect {
            return Err(PolicyError::InputShape {
                expected: expect,
                actual: input.len(),
            });
        }
        let mut buf = input.to_vec();
        let mut s = size;
        for conv in &self.convs {
            let (next, ns) = conv.forward(&buf, s);
            buf = next;
            s = ns;
        }
        let ch = self.convs.last().map_or(self.in_channels(), |c| c.out_ch);
        let area = (s * s) as f64;
        let pooled = DVector::from_fn(ch, |c, _| buf[c * s * s..(c + 1) * s * s].iter().sum::<f64>() / area);
        Ok(self.out.forward(&pooled))
    }
}

/// Readout from the graph embedding to a planar velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub hidden: Linear,
    pub out: Linear,
}

impl MlpParams {
    pub fn zeros(d_in: usize, hidden: usize) -> Self {
        Self {
            hidden: Linear::zeros(d_in, hidden),
            out: Linear::zeros(hidden, 2),
        }
    }

    pub fn random<R: Rng + ?Sized>(d_in: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            hidden: Linear::random(d_in, hidden, rng),
            out: Linear::random(hidden, 2, rng),
        }
    }

    pub fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        let h = self.hidden.forward(x).map(|v| v.max(0.0));
        self.out.forward(&h)
    }
}
