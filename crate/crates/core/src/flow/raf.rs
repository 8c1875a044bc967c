//! The recurrent autoregressive flow cell: a GRU whose hidden state is read
//! as a lower-triangular affine map followed by an invertible activation.

use crate::error::{Error, Result};
use crate::flow::triangular::{packed_affine, packed_affine_inverse, packed_log_diag};
use crate::flow::Activation;
use crate::nn::{gru_update, Gru};
use crate::numeric::{tri_affine_width, ParamId, ParamStore, RngState, Tape, Var};

#[derive(Debug, Clone)]
pub struct RafCell {
    /// Dimension `K` of the transformed variable.
    pub dim: usize,
    /// Hidden width `H`.
    pub hidden: usize,
    /// Width of the vector the GRU consumes at each observation.
    pub cond_dim: usize,
    pub activation: Activation,
    pub gru: Gru,
}

impl RafCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        hidden: usize,
        cond_dim: usize,
        activation: Activation,
        rng: &mut RngState,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("RAF cell needs a positive data dimension".into()));
        }
        if hidden < tri_affine_width(dim) {
            return Err(Error::Config(format!(
                "hidden size {hidden} is below K(K+1)/2 + K = {} for K = {dim}",
                tri_affine_width(dim)
            )));
        }
        activation.validate()?;
        let gru = Gru::new(store, &format!("{name}.gru"), cond_dim, hidden, rng)?;
        Ok(RafCell {
            dim,
            hidden,
            cond_dim,
            activation,
            gru,
        })
    }

    pub fn parameters(&self) -> Vec<ParamId> {
        self.gru.params.all().to_vec()
    }

    /// Advances the hidden state with one conditioning vector.
    pub fn update(&self, store: &ParamStore, h: &[f64], cond: &[f64]) -> Result<Vec<f64>> {
        gru_update(store, &self.gru, h, cond)
    }

    pub fn update_tape(&self, tape: &mut Tape, h: Var, cond: Var) -> Result<Var> {
        self.gru.step(tape, h, cond)
    }

    fn check(&self, op: &'static str, v: &[f64], h: &[f64]) -> Result<()> {
        if v.len() != self.dim || h.len() != self.hidden {
            return Err(Error::dim(
                op,
                format!(
                    "input of length {} and hidden of length {} for K = {}, H = {}",
                    v.len(),
                    h.len(),
                    self.dim,
                    self.hidden
                ),
            ));
        }
        Ok(())
    }

    /// `z = act(W x + b)` with `logdet = Σ ln|act'(u_i)| + Σ ln W_ii`.
    pub fn forward(&self, x: &[f64], h: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check("raf_forward", x, h)?;
        let u = packed_affine(h, x);
        let z: Vec<f64> = u.iter().map(|&v| self.activation.apply(v)).collect();
        let logdet = u.iter().map(|&v| self.activation.log_deriv(v)).sum::<f64>()
            + packed_log_diag(h, self.dim);
        if z.iter().chain(&u).any(|v| !v.is_finite()) || !logdet.is_finite() {
            return Err(Error::numeric("raf_forward"));
        }
        Ok((z, logdet))
    }

    pub fn inverse(&self, z: &[f64], h: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check("raf_inverse", z, h)?;
        let u = z
            .iter()
            .map(|&v| self.activation.inverse(v))
            .collect::<Result<Vec<f64>>>()?;
        let x = packed_affine_inverse(h, &u);
        let logdet = -(u.iter().map(|&v| self.activation.log_deriv(v)).sum::<f64>()
            + packed_log_diag(h, self.dim));
        if x.iter().any(|v| !v.is_finite()) || !logdet.is_finite() {
            return Err(Error::numeric("raf_inverse"));
        }
        Ok((x, logdet))
    }

    /// Batched forward: `x[N, K]`, `h[N, H]` or `[1, H]` → `(z[N, K], logdet[N, 1])`.
    pub fn forward_tape(&self, tape: &mut Tape, x: Var, h: Var) -> Result<(Var, Var)> {
        let u = tape.tri_affine(h, x, self.dim)?;
        let (z, ld_act) = self.activation.forward_tape(tape, u)?;
        let mut ld_diag = tape.tri_log_diag(h, self.dim)?;
        let rows = tape.value(x).rows();
        if tape.value(h).rows() != rows {
            ld_diag = tape.repeat_rows(ld_diag, rows)?;
        }
        let logdet = tape.add(ld_act, ld_diag)?;
        Ok((z, logdet))
    }
}
