//! Minimal dense networks: forward/backward passes, ADAM and Polyak averaging.

mod adam;
mod matrix;
mod mlp;

pub use adam::{AdamState, StepOutcome, BETA1, BETA2, EPSILON};
pub use matrix::Matrix;
pub use mlp::{
    soft_update, ActionInject, Activation, Dense, ForwardCache, Gradients, InputGradients, Mlp,
    MlpSpec, FINAL_LAYER_INIT,
};

/// Logistic function, computed without overflow for large `|z|`.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}
