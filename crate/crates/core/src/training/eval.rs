use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FieldModel, SequenceModel};

/// Sum in ascending order, so the result does not depend on how the values
/// were produced or merged.
pub fn sorted_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = sorted_sum(&mut values.to_vec()) / n;
    let mut dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    (mean, (sorted_sum(&mut dev) / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Mean over episodes of each episode's average step log density.
    pub mean: f64,
    /// Population standard deviation of the per-episode averages.
    pub std: f64,
    /// Mean over every scored step of every episode.
    pub pooled_mean: f64,
    pub per_episode: Vec<f64>,
    pub steps: usize,
}

pub fn evaluate_avg_log_density(
    model: &dyn SequenceModel,
    episodes: &[Vec<Vec<f64>>],
) -> Result<EvalSummary> {
    if episodes.is_empty() {
        return Err(Error::Contract("no episodes".into()));
    }
    let mut per_episode = Vec::with_capacity(episodes.len());
    let mut all = Vec::new();
    for ep in episodes {
        let mut lp = model.episode_log_prob(ep)?;
        all.extend_from_slice(&lp);
        let n = lp.len() as f64;
        per_episode.push(sorted_sum(&mut lp) / n);
    }
    let (mean, std) = mean_std(&per_episode);
    let steps = all.len();
    Ok(EvalSummary {
        mean,
        std,
        pooled_mean: sorted_sum(&mut all) / steps as f64,
        per_episode,
        steps,
    })
}

/// Fraction of post-burn-in samples whose coordinate `coord` has the same
/// sign as that coordinate's mean over those samples.
pub fn mode_purity(samples: &[Vec<f64>], burn_in: usize, coord: usize) -> Result<f64> {
    let kept = samples.get(burn_in..).unwrap_or(&[]);
    if kept.is_empty() {
        return Err(Error::Contract("no samples after burn-in".into()));
    }
    let mut vals: Vec<f64> = kept
        .iter()
        .map(|s| {
            s.get(coord)
                .copied()
                .ok_or_else(|| Error::dim("mode_purity", format!("no coordinate {coord}")))
        })
        .collect::<Result<_>>()?;
    let n = vals.len() as f64;
    let side = sorted_sum(&mut vals).signum();
    Ok(vals.iter().filter(|v| v.signum() == side).count() as f64 / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldEval {
    /// Mean KL at each prediction step across episodes.
    pub per_step: Vec<f64>,
    /// Mean over steps of `per_step`.
    pub mean: f64,
    pub per_episode: Vec<f64>,
}

pub fn evaluate_field_kl(model: &FieldModel, episodes: &[Vec<Vec<f64>>]) -> Result<FieldEval> {
    if episodes.is_empty() {
        return Err(Error::Contract("no episodes".into()));
    }
    let kls = episodes
        .iter()
        .map(|e| model.episode_kl(e))
        .collect::<Result<Vec<_>>>()?;
    let steps = kls.iter().map(Vec::len).max().unwrap_or(0);
    let per_step: Vec<f64> = (0..steps)
        .map(|t| {
            let mut v: Vec<f64> = kls.iter().filter_map(|k| k.get(t).copied()).collect();
            let n = v.len() as f64;
            sorted_sum(&mut v) / n
        })
        .collect();
    let per_episode: Vec<f64> = kls
        .iter()
        .map(|k| sorted_sum(&mut k.clone()) / k.len() as f64)
        .collect();
    let mean = sorted_sum(&mut per_step.clone()) / per_step.len() as f64;
    Ok(FieldEval {
        per_step,
        mean,
        per_episode,
    })
}
