use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{logistic, softplus, Tape, Tensor, Var};

/// Inputs to the logit are clamped to `[LOGIT_CLAMP, 1 - LOGIT_CLAMP]`.
pub const LOGIT_CLAMP: f64 = 1e-7;

pub const DEFAULT_LEAKY_ALPHA: f64 = 0.1;

/// Invertible elementwise nonlinearity applied after the triangular affine map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    /// `u` for `u ≥ 0`, `alpha·u` otherwise.
    LeakyLinear { alpha: f64 },
    Logistic,
    Identity,
}

impl Default for Activation {
    fn default() -> Self {
        Activation::LeakyLinear {
            alpha: DEFAULT_LEAKY_ALPHA,
        }
    }
}

impl Activation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Activation::LeakyLinear { alpha } if !(alpha > 0.0 && alpha.is_finite()) => Err(
                Error::Config(format!("leaky slope must be positive, got {alpha}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn apply(&self, u: f64) -> f64 {
        match *self {
            Activation::LeakyLinear { alpha } => {
                if u >= 0.0 {
                    u
                } else {
                    alpha * u
                }
            }
            Activation::Logistic => logistic(u),
            Activation::Identity => u,
        }
    }

    /// `ln |act'(u)|`.
    pub fn log_deriv(&self, u: f64) -> f64 {
        match *self {
            Activation::LeakyLinear { alpha } => {
                if u >= 0.0 {
                    0.0
                } else {
                    alpha.ln()
                }
            }
            Activation::Logistic => -softplus(u) - softplus(-u),
            Activation::Identity => 0.0,
        }
    }

    pub fn inverse(&self, z: f64) -> Result<f64> {
        match *self {
            Activation::LeakyLinear { alpha } => Ok(if z >= 0.0 { z } else { z / alpha }),
            Activation::Logistic => {
                if !(z > 0.0 && z < 1.0) {
                    return Err(Error::domain(
                        "logit",
                        format!("{z} is outside the logistic range (0, 1)"),
                    ));
                }
                let z = z.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
                Ok(z.ln() - (-z).ln_1p())
            }
            Activation::Identity => Ok(z),
        }
    }

    /// Applies the activation to `u[N, K]` and returns `(z, Σ_i ln|act'(u_i)|)`
    /// with the second term of shape `[N, 1]`.
    pub fn forward_tape(&self, tape: &mut Tape, u: Var) -> Result<(Var, Var)> {
        match *self {
            Activation::Logistic => {
                let z = tape.logistic(u)?;
                let ld = tape.log_logistic_deriv(u)?;
                let ld = tape.row_sum(ld)?;
                Ok((z, ld))
            }
            Activation::LeakyLinear { alpha } => {
                let z = tape.leaky_relu(u, alpha)?;
                let (rows, cols) = tape.value(u).dims2();
                let ln_alpha = alpha.ln();
                let data = tape
                    .value(u)
                    .data()
                    .chunks_exact(cols)
                    .map(|row| row.iter().filter(|&&v| v < 0.0).count() as f64 * ln_alpha)
                    .collect();
                let ld = tape.constant(Tensor::new(vec![rows, 1], data)?);
                Ok((z, ld))
            }
            Activation::Identity => {
                let rows = tape.value(u).rows();
                let ld = tape.constant(Tensor::zeros(&[rows, 1]));
                Ok((u, ld))
            }
        }
    }
}
