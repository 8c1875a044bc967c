//! Affine coupling: the first `split` coordinates pass through unchanged and
//! parameterise a scale and shift for the rest.

use crate::error::{Error, Result};
use crate::nn::{Init, Mlp};
use crate::numeric::{ParamId, ParamStore, RngState, Tape, Tensor, Var};

/// Log-scales are squashed into `[-SCALE_CLAMP, SCALE_CLAMP]` via `c·tanh(s/c)`.
pub const SCALE_CLAMP: f64 = 5.0;

pub const DEFAULT_NET_WIDTH: usize = 32;

#[derive(Debug, Clone)]
pub struct Coupling {
    pub dim: usize,
    pub split: usize,
    pub scale_net: Mlp,
    pub shift_net: Mlp,
}

impl Coupling {
    /// Both nets are `split → width → width → dim - split` with tanh hidden
    /// units; their output layers start at zero so the layer starts as the
    /// identity.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        split: usize,
        width: usize,
        rng: &mut RngState,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config(format!(
                "coupling needs at least two dimensions, got {dim}"
            )));
        }
        if split == 0 || split >= dim {
            return Err(Error::Config(format!(
                "coupling split {split} must lie in 1..{dim}"
            )));
        }
        let sizes = [split, width, width, dim - split];
        let scale_net = Mlp::new(store, &format!("{name}.scale"), &sizes, Init::Zeros, rng)?;
        let shift_net = Mlp::new(store, &format!("{name}.shift"), &sizes, Init::Zeros, rng)?;
        Ok(Coupling {
            dim,
            split,
            scale_net,
            shift_net,
        })
    }

    pub fn parameters(&self) -> Vec<ParamId> {
        self.scale_net
            .layers
            .iter()
            .chain(&self.shift_net.layers)
            .flat_map(|d| [d.weight, d.bias])
            .collect()
    }

    /// Clamped log-scale and shift for a batch of conditioning rows.
    fn scale_shift(&self, tape: &mut Tape, x1: Var) -> Result<(Var, Var)> {
        let raw = self.scale_net.forward(tape, x1)?;
        let s = tape.scale(raw, 1.0 / SCALE_CLAMP)?;
        let s = tape.tanh(s)?;
        let s = tape.scale(s, SCALE_CLAMP)?;
        let t = self.shift_net.forward(tape, x1)?;
        Ok((s, t))
    }

    fn check(&self, op: &'static str, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::dim(
                op,
                format!("input of length {} for K = {}", v.len(), self.dim),
            ));
        }
        Ok(())
    }

    fn plain_scale_shift(&self, store: &ParamStore, x1: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new(store);
        let x1 = tape.constant(Tensor::row(x1.to_vec())?);
        let (s, t) = self.scale_shift(&mut tape, x1)?;
        Ok((tape.value(s).data().to_vec(), tape.value(t).data().to_vec()))
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check("coupling_forward", x)?;
        let (x1, x2) = x.split_at(self.split);
        let (s, t) = self.plain_scale_shift(store, x1)?;
        let mut z = x1.to_vec();
        z.extend(x2.iter().zip(s.iter().zip(&t)).map(|(v, (s, t))| v * s.exp() + t));
        let logdet: f64 = s.iter().sum();
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("coupling_forward"));
        }
        Ok((z, logdet))
    }

    pub fn inverse(&self, store: &ParamStore, z: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check("coupling_inverse", z)?;
        let (z1, z2) = z.split_at(self.split);
        let (s, t) = self.plain_scale_shift(store, z1)?;
        let mut x = z1.to_vec();
        x.extend(z2.iter().zip(s.iter().zip(&t)).map(|(v, (s, t))| (v - t) * (-s).exp()));
        let logdet = -s.iter().sum::<f64>();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("coupling_inverse"));
        }
        Ok((x, logdet))
    }

    pub fn forward_tape(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
        let x1 = tape.slice_cols(x, 0, self.split)?;
        let x2 = tape.slice_cols(x, self.split, self.dim)?;
        let (s, t) = self.scale_shift(tape, x1)?;
        let e = tape.exp(s)?;
        let y2 = tape.mul(x2, e)?;
        let y2 = tape.add(y2, t)?;
        let z = tape.concat_cols(x1, y2)?;
        let logdet = tape.row_sum(s)?;
        Ok((z, logdet))
    }
}
