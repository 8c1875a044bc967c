use crate::error::{Error, Result};
use crate::model::SequenceModel;
use crate::numeric::{Tape, Tensor, Var};

/// Cells of `P` below this mass contribute nothing; `Q` is clamped to it.
pub const KL_FLOOR: f64 = 1e-12;

const NORMALIZATION_TOL: f64 = 1e-9;

/// Pooled negative mean conditional log density over every scored step.
pub fn nll_loss(model: &dyn SequenceModel, episodes: &[Vec<Vec<f64>>]) -> Result<f64> {
    if episodes.is_empty() {
        return Err(Error::Contract("no episodes to score".into()));
    }
    let mut values = Vec::new();
    for ep in episodes {
        values.extend(model.episode_log_prob(ep)?);
    }
    Ok(-crate::training::sorted_sum(&mut values) / values.len() as f64)
}

fn check_distribution(name: &str, d: &[f64]) -> Result<()> {
    let total: f64 = d.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL || d.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Contract(format!(
            "{name} is not a probability vector (sums to {total})"
        )));
    }
    Ok(())
}

/// `Σ P (ln P - ln max(Q, floor))` over cells with `P ≥ floor`.
pub fn kl_discrete(p: &Tensor, q: &Tensor) -> Result<f64> {
    if p.shape() != q.shape() {
        return Err(Error::dim(
            "kl_discrete",
            format!("{:?} vs {:?}", p.shape(), q.shape()),
        ));
    }
    check_distribution("P", p.data())?;
    check_distribution("Q", q.data())?;
    Ok(p
        .data()
        .iter()
        .zip(q.data())
        .filter(|(pv, _)| **pv >= KL_FLOOR)
        .map(|(pv, qv)| pv * (pv.ln() - qv.max(KL_FLOOR).ln()))
        .sum())
}

/// KL from a fixed `p` to a distribution given by its log masses
/// `log_q` (`[N, 1]` or `[N]` on the tape, already normalised).
pub fn kl_discrete_tape(tape: &mut Tape, p: &[f64], log_q: Var) -> Result<Var> {
    if tape.value(log_q).len() != p.len() {
        return Err(Error::dim(
            "kl_discrete",
            format!("{} cells vs {:?}", p.len(), tape.shape(log_q)),
        ));
    }
    check_distribution("P", p)?;
    let entropy: f64 = p
        .iter()
        .filter(|v| **v >= KL_FLOOR)
        .map(|v| v * v.ln())
        .sum();
    let weights: Vec<f64> = p
        .iter()
        .map(|v| if *v >= KL_FLOOR { *v } else { 0.0 })
        .collect();
    let shape = tape.shape(log_q).to_vec();
    let w = tape.constant(Tensor::new(shape, weights)?);
    let clamped = tape.max_const(log_q, KL_FLOOR.ln())?;
    let cross = tape.mul(w, clamped)?;
    let cross = tape.sum(cross)?;
    let neg = tape.scale(cross, -1.0)?;
    tape.add_const(neg, entropy)
}

/// Mean over the batch of each field's summed absolute cell error.
pub fn l1_loss(fields: &[Vec<f64>], recon: &[Vec<f64>]) -> Result<f64> {
    if fields.len() != recon.len()
        || fields.is_empty()
        || fields.iter().zip(recon).any(|(a, b)| a.len() != b.len())
    {
        return Err(Error::dim(
            "l1_loss",
            format!("{} fields vs {} reconstructions", fields.len(), recon.len()),
        ));
    }
    let total: f64 = fields
        .iter()
        .zip(recon)
        .map(|(f, r)| f.iter().zip(r).map(|(a, b)| (a - b).abs()).sum::<f64>())
        .sum();
    Ok(total / fields.len() as f64)
}

/// Tape version of [`l1_loss`] for `[N, cells]` batches.
pub fn l1_loss_tape(tape: &mut Tape, fields: Var, recon: Var) -> Result<Var> {
    if tape.shape(fields) != tape.shape(recon) {
        return Err(Error::dim(
            "l1_loss",
            format!("{:?} vs {:?}", tape.shape(fields), tape.shape(recon)),
        ));
    }
    let n = tape.value(fields).rows() as f64;
    let d = tape.sub(recon, fields)?;
    let a = tape.abs(d)?;
    let s = tape.sum(a)?;
    tape.scale(s, 1.0 / n)
}

/// `l1 + α·kl`.
pub fn composite_loss(l1: f64, kl: f64, alpha: f64) -> Result<f64> {
    if !(alpha >= 0.0) {
        return Err(Error::Config(format!("KL weight must be non-negative, got {alpha}")));
    }
    Ok(l1 + alpha * kl)
}

pub fn composite_loss_tape(tape: &mut Tape, l1: Var, kl: Var, alpha: f64) -> Result<Var> {
    if !(alpha >= 0.0) {
        return Err(Error::Config(format!("KL weight must be non-negative, got {alpha}")));
    }
    let w = tape.scale(kl, alpha)?;
    tape.add(l1, w)
}
