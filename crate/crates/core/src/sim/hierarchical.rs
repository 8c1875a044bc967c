//! Two-level process: an episode-wide mode `y ~ Bernoulli(p)` with
//! `μ = 2y - 1`, then i.i.d. points
//!
//! ```text
//! x1 ~ N(μ, 4)
//! x0 ~ N(0.25 μ x1², 1)
//! ```
//!
//! Samples are stored as `[x0, x1]`.

use crate::error::{Error, Result};
use crate::numeric::RngState;
use crate::sim::{Episode, Labels, Process};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HierarchicalParams {
    pub p: f64,
    /// Standard deviation of `x1` (variance 4).
    pub x1_std: f64,
    pub curvature: f64,
    pub x0_std: f64,
}

impl Default for HierarchicalParams {
    fn default() -> Self {
        HierarchicalParams {
            p: 0.5,
            x1_std: 2.0,
            curvature: 0.25,
            x0_std: 1.0,
        }
    }
}

/// One point given the mode. `x1` may be fixed instead of drawn.
pub fn sample_hierarchical_point(
    rng: &mut RngState,
    params: &HierarchicalParams,
    y: u8,
    x1: Option<f64>,
) -> [f64; 2] {
    let mu = 2.0 * f64::from(y) - 1.0;
    let x1 = x1.unwrap_or_else(|| rng.normal(mu, params.x1_std));
    let x0 = rng.normal(params.curvature * mu * x1 * x1, params.x0_std);
    [x0, x1]
}

pub fn sample_hierarchical_episode(
    rng: &mut RngState,
    params: &HierarchicalParams,
    n: usize,
) -> Result<Episode> {
    if n == 0 {
        return Err(Error::Config("an episode needs at least one sample".into()));
    }
    let y = u8::from(rng.bernoulli(params.p)?);
    let samples = (0..n)
        .map(|_| sample_hierarchical_point(rng, params, y, None).to_vec())
        .collect();
    let mut ep = Episode::new(Process::Hierarchical, samples);
    ep.labels = Labels {
        y: Some(y),
        ..Labels::default()
    };
    Ok(ep)
}
