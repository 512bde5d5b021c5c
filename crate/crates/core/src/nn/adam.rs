//! ADAM with bias correction.

use super::mlp::{Dense, Gradients, Mlp};
use crate::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Moment accumulators for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Vec<Dense>,
    pub second: Vec<Dense>,
    pub step_count: u64,
}

/// Whether an optimizer step was committed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// Gradients contained NaN or infinity; parameters and moments untouched.
    SkippedNonFinite,
}

impl AdamState {
    pub fn new(net: &Mlp) -> Self {
        let zeros = Gradients::zeros_like(net).layers;
        Self {
            first: zeros.clone(),
            second: zeros,
            step_count: 0,
        }
    }

    /// One descent step on `net` with learning rate `lr`.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients, lr: f64) -> Result<StepOutcome> {
        if grads.layers.len() != net.layers().len()
            || grads
                .layers
                .iter()
                .zip(net.layers())
                .any(|(g, p)| g.weights.len() != p.weights.len() || g.bias.len() != p.bias.len())
        {
            return Err(Error::SpecMismatch("gradient shape does not match network".into()));
        }
        if !grads.is_finite() {
            return Ok(StepOutcome::SkippedNonFinite);
        }
        self.step_count += 1;
        let t = self.step_count as f64;
        let c1 = 1.0 - BETA1.powf(t);
        let c2 = 1.0 - BETA2.powf(t);
        let layers = net.layers_mut();
        for (li, layer) in layers.iter_mut().enumerate() {
            let g = &grads.layers[li];
            let m = &mut self.first[li];
            let v = &mut self.second[li];
            update(&mut layer.weights, &g.weights, &mut m.weights, &mut v.weights, lr, c1, c2);
            update(&mut layer.bias, &g.bias, &mut m.bias, &mut v.bias, lr, c1, c2);
        }
        Ok(StepOutcome::Applied)
    }

    /// Moments flattened in layer order (weights then bias), for checkpoints.
    pub fn flat_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let flat = |ls: &[Dense]| {
            ls.iter()
                .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
                .collect::<Vec<_>>()
        };
        (flat(&self.first), flat(&self.second))
    }

    pub fn set_flat_moments(&mut self, first: &[f64], second: &[f64]) -> Result<()> {
        fn fill(ls: &mut [Dense], src: &[f64]) -> Result<()> {
            let n: usize = ls.iter().map(|l| l.weights.len() + l.bias.len()).sum();
            if n != src.len() {
                return Err(Error::Dimension {
                    what: "adam moments",
                    expected: n,
                    got: src.len(),
                });
            }
            let mut off = 0;
            for l in ls {
                let nw = l.weights.len();
                l.weights.copy_from_slice(&src[off..off + nw]);
                off += nw;
                let nb = l.bias.len();
                l.bias.copy_from_slice(&src[off..off + nb]);
                off += nb;
            }
            Ok(())
        }
        fill(&mut self.first, first)?;
        fill(&mut self.second, second)
    }
}

fn update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, c1: f64, c2: f64) {
    for i in 0..p.len() {
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
}
