// SPDX-License-Identifier: MIT OR Apache-2.0

//! Two-layer stand-in encoder with seeded weights.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::ablation::AblationMask;
use crate::error::{Error, Result};
use crate::store::{ActivationTensor, Geometry};

/// GELU, tanh approximation. Negative for negative inputs.
pub fn gelu(x: f64) -> f64 {
    const K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    0.5 * x * (1.0 + (K * (x + 0.044_715 * x * x * x)).tanh())
}

/// `h1 = gelu(W1 x + b1)`, `h2 = gelu(W2 h1 + b2)`, both of width `hidden`.
#[derive(Clone, Debug)]
pub struct ToyEncoder {
    input_dim: usize,
    hidden: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl ToyEncoder {
    /// Gaussian weights scaled by `1/sqrt(fan_in)` and biases centred on
    /// `-bias_shift`, which sets how sparsely units fire.
    pub fn seeded(input_dim: usize, hidden: usize, bias_shift: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = |n: usize, scale: f64, shift: f64| -> Vec<f64> {
            (0..n)
                .map(|_| shift + scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let w1 = normal(hidden * input_dim, 1.0 / (input_dim as f64).sqrt(), 0.0);
        let b1 = normal(hidden, 0.1, -bias_shift);
        let w2 = normal(hidden * hidden, 1.0 / (hidden as f64).sqrt(), 0.0);
        let b2 = normal(hidden, 0.1, -bias_shift * 0.5);
        ToyEncoder {
            input_dim,
            hidden,
            w1,
            b1,
            w2,
            b2,
        }
    }

    /// Random encoder whose first layer additionally holds `tuned_units`
    /// units aligned with the given prototype directions, cycled in order.
    /// A tuned unit fires once the input's projection on its direction
    /// exceeds `threshold` times the prototype norm; `jitter` perturbs the
    /// direction.
    #[allow(clippy::too_many_arguments)]
    pub fn tuned(
        input_dim: usize,
        hidden: usize,
        bias_shift: f64,
        seed: u64,
        prototypes: &[Vec<f64>],
        tuned_units: usize,
        threshold: f64,
        jitter: f64,
    ) -> Result<Self> {
        if prototypes.is_empty() || tuned_units > hidden {
            return Err(Error::Config(format!(
                "{tuned_units} tuned units over {} prototypes for width {hidden}",
                prototypes.len()
            )));
        }
        if let Some(p) = prototypes.iter().find(|p| p.len() != input_dim) {
            return Err(Error::Shape(format!("prototype of dim {} for encoder dim {input_dim}", p.len())));
        }
        let mut enc = Self::seeded(input_dim, hidden, bias_shift, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let units = index::sample(&mut rng, hidden, tuned_units).into_vec();
        let scale = jitter / (input_dim as f64).sqrt();
        for (k, j) in units.into_iter().enumerate() {
            let proto = &prototypes[k % prototypes.len()];
            let norm = proto.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut w: Vec<f64> = proto
                .iter()
                .map(|v| v / norm.max(1e-12) + scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let wn = w.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            w.iter_mut().for_each(|v| *v /= wn);
            enc.w1[j * input_dim..(j + 1) * input_dim].copy_from_slice(&w);
            enc.b1[j] = -threshold * norm;
        }
        Ok(enc)
    }

    pub fn geometry(&self) -> Geometry {
        Geometry::new(2, self.hidden)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Hidden activations of both layers. Masked units output exactly 0 and
    /// the zero propagates into the next layer.
    pub fn forward(&self, x: &[f64], mask: Option<&AblationMask>) -> [Vec<f64>; 2] {
        let n = self.hidden;
        let mut h1: Vec<f64> = (0..n)
            .map(|j| {
                let row = &self.w1[j * self.input_dim..(j + 1) * self.input_dim];
                gelu(row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b1[j])
            })
            .collect();
        if let Some(m) = mask {
            m.layer_columns(0).for_each(|j| h1[j] = 0.0);
        }
        let mut h2: Vec<f64> = (0..n)
            .map(|j| {
                let row = &self.w2[j * n..(j + 1) * n];
                gelu(row.iter().zip(&h1).map(|(w, v)| w * v).sum::<f64>() + self.b2[j])
            })
            .collect();
        if let Some(m) = mask {
            m.layer_columns(1).for_each(|j| h2[j] = 0.0);
        }
        [h1, h2]
    }

    /// Runs every input and returns one tensor per layer.
    pub fn encode(&self, inputs: &[Vec<f64>], mask: Option<&AblationMask>) -> Result<Vec<ActivationTensor>> {
        if let Some(m) = mask {
            if m.geometry != self.geometry() {
                return Err(Error::Geometry(format!(
                    "mask {} vs encoder {}",
                    m.geometry,
                    self.geometry()
                )));
            }
        }
        let n = self.hidden;
        let mut layers = [Vec::with_capacity(inputs.len() * n), Vec::with_capacity(inputs.len() * n)];
        for x in inputs {
            if x.len() != self.input_dim {
                return Err(Error::Shape(format!("input of dim {} for encoder dim {}", x.len(), self.input_dim)));
            }
            let hs = self.forward(x, mask);
            for (dst, h) in layers.iter_mut().zip(hs) {
                dst.extend(h.iter().map(|&v| v as f32));
            }
        }
        let [l0, l1] = layers;
        Ok(vec![
            ActivationTensor::new(0, inputs.len(), n, l0)?,
            ActivationTensor::new(1, inputs.len(), n, l1)?,
        ])
    }
}
