use crate::error::{Error, Result};
use crate::numeric::{RngState, Tape, Tensor, Var};

/// `½ ln(2π)`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal base distribution on ℝ^K.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StandardNormal {
    pub dim: usize,
}

impl StandardNormal {
    pub fn new(dim: usize) -> Self {
        StandardNormal { dim }
    }

    pub fn log_prob(&self, z: &[f64]) -> Result<f64> {
        gaussian_log_prob(z)
    }

    /// Row-wise log density of `z[N, K]`, shape `[N, 1]`.
    pub fn log_prob_tape(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let k = tape.value(z).cols();
        if k != self.dim {
            return Err(Error::dim(
                "gaussian_log_prob",
                format!("expected {} columns, got {k}", self.dim),
            ));
        }
        let sq = tape.mul(z, z)?;
        let s = tape.row_sum(sq)?;
        let s = tape.scale(s, -0.5)?;
        tape.add_const(s, -(k as f64) * HALF_LN_2PI)
    }

    pub fn sample(&self, rng: &mut RngState) -> Vec<f64> {
        (0..self.dim).map(|_| rng.standard_normal()).collect()
    }

    pub fn sample_tensor(&self, rng: &mut RngState, rows: usize) -> Tensor {
        let data = (0..rows * self.dim).map(|_| rng.standard_normal()).collect();
        Tensor::new(vec![rows, self.dim], data).expect("normal draws are finite")
    }
}

/// `Σ_i [-½ z_i² - ½ ln 2π]`.
pub fn gaussian_log_prob(z: &[f64]) -> Result<f64> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("gaussian_log_prob"));
    }
    Ok(z.iter().map(|v| -0.5 * v * v - HALF_LN_2PI).sum())
}
