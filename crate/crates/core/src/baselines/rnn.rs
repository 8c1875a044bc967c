use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{Standardizer, HALF_LN_2PI};
use crate::nn::{gru_update, Dense, Gru, Init};
use crate::numeric::{ParamStore, RngState, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnGaussianSpec {
    pub dim: usize,
    pub hidden: usize,
    pub standardizer: Standardizer,
}

/// `log N(x; μ, τ I)` with `τ = exp(log_tau)`.
pub fn isotropic_gaussian_log_prob(x: &[f64], mu: &[f64], log_tau: f64) -> Result<f64> {
    if x.len() != mu.len() {
        return Err(Error::dim("gaussian", format!("{} vs {}", x.len(), mu.len())));
    }
    let tau = log_tau.exp();
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::numeric("rnn_step_log_prob (tau)"));
    }
    let k = x.len() as f64;
    let sq: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
    let lp = -k * HALF_LN_2PI - 0.5 * k * log_tau - 0.5 * sq / tau;
    if !lp.is_finite() {
        return Err(Error::numeric("rnn_step_log_prob"));
    }
    Ok(lp)
}

/// GRU over observations with a linear head emitting `(μ[K], log τ)` for the
/// next observation.
#[derive(Debug, Clone)]
pub struct RnnGaussian {
    pub spec: RnnGaussianSpec,
    pub gru: Gru,
    pub head: Dense,
    pub store: ParamStore,
}

impl RnnGaussian {
    pub fn build(spec: RnnGaussianSpec, rng: &mut RngState) -> Result<Self> {
        if spec.dim == 0 || spec.standardizer.dim() != spec.dim {
            return Err(Error::Config("invalid RNN-Gaussian dimensions".into()));
        }
        let mut store = ParamStore::new();
        let gru = Gru::new(&mut store, "rnn.gru", spec.dim, spec.hidden, rng)?;
        let head = Dense::new(&mut store, "rnn.head", spec.hidden, spec.dim + 1, Init::Uniform, rng)?;
        Ok(RnnGaussian {
            spec,
            gru,
            head,
            store,
        })
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn zero_state(&self) -> Vec<f64> {
        vec![0.0; self.spec.hidden]
    }

    fn check(&self, op: &'static str, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::dim(op, format!("length {} for K = {}", x.len(), self.dim())));
        }
        Ok(())
    }

    pub fn observe(&self, h: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check("rnn_observe", x)?;
        gru_update(&self.store, &self.gru, h, &self.spec.standardizer.apply(x))
    }

    /// Predicted `(μ, log τ)` in standardised units.
    pub fn predict(&self, h: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut tape = Tape::new(&self.store);
        let hv = tape.constant(Tensor::row(h.to_vec())?);
        let out = self.head.forward(&mut tape, hv)?;
        let out = tape.value(out).data();
        Ok((out[..self.dim()].to_vec(), out[self.dim()]))
    }

    /// `log p(x | h)` in data units.
    pub fn log_prob(&self, h: &[f64], x: &[f64]) -> Result<f64> {
        self.check("rnn_step_log_prob", x)?;
        let (mu, log_tau) = self.predict(h)?;
        let xs = self.spec.standardizer.apply(x);
        Ok(isotropic_gaussian_log_prob(&xs, &mu, log_tau)? + self.spec.standardizer.log_det())
    }

    /// Scores `x_next` against the prediction from `h`, then advances the
    /// state with it.
    pub fn step_log_prob(&self, x_next: &[f64], h: &[f64]) -> Result<(f64, Vec<f64>)> {
        let lp = self.log_prob(h, x_next)?;
        Ok((lp, self.observe(h, x_next)?))
    }

    /// Same protocol as the flow graphs: observe `x_0`, then score each
    /// subsequent step before observing it.
    pub fn episode_log_prob(&self, episode: &[Vec<f64>]) -> Result<Vec<f64>> {
        if episode.len() < 2 {
            return Err(Error::Contract(format!(
                "an episode needs at least two steps, got {}",
                episode.len()
            )));
        }
        let mut h = self.observe(&self.zero_state(), &episode[0])?;
        let mut out = Vec::with_capacity(episode.len() - 1);
        for x in &episode[1..] {
            let (lp, next) = self.step_log_prob(x, &h)?;
            out.push(lp);
            h = next;
        }
        Ok(out)
    }

    pub fn sample(&self, h: &[f64], rng: &mut RngState) -> Result<Vec<f64>> {
        let (mu, log_tau) = self.predict(h)?;
        let sd = (0.5 * log_tau).exp();
        let z: Vec<f64> = mu.iter().map(|m| m + sd * rng.standard_normal()).collect();
        Ok(self.spec.standardizer.invert(&z))
    }

    pub fn tape_zero_state(&self, tape: &mut Tape, rows: usize) -> Var {
        tape.constant(Tensor::zeros(&[rows, self.spec.hidden]))
    }

    pub fn tape_observe_data(&self, tape: &mut Tape, h: Var, x: &Tensor) -> Result<Var> {
        let c = tape.constant(self.spec.standardizer.apply_rows(x)?);
        self.gru.step(tape, h, c)
    }

    /// Row-wise log density of `x[N, K]` given `h[N, H]`, shape `[N, 1]`.
    pub fn tape_log_prob(&self, tape: &mut Tape, h: Var, x: &Tensor) -> Result<Var> {
        let k = self.dim();
        let xs = tape.constant(self.spec.standardizer.apply_rows(x)?);
        let out = self.head.forward(tape, h)?;
        let mu = tape.slice_cols(out, 0, k)?;
        let log_tau = tape.slice_cols(out, k, k + 1)?;
        let r = tape.sub(xs, mu)?;
        let r2 = tape.mul(r, r)?;
        let sq = tape.row_sum(r2)?;
        let neg = tape.scale(log_tau, -1.0)?;
        let inv_tau = tape.exp(neg)?;
        let quad = tape.mul(sq, inv_tau)?;
        let quad = tape.scale(quad, -0.5)?;
        let norm = tape.scale(log_tau, -0.5 * k as f64)?;
        let lp = tape.add(quad, norm)?;
        tape.add_const(
            lp,
            -(k as f64) * HALF_LN_2PI + self.spec.standardizer.log_det(),
        )
    }
}
