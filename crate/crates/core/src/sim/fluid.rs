//! Closed-box temperature field with diffusion and buoyant vertical exchange.
//!
//! The scheme acts on the mass `m = exp(T)` of each cell. A step is two
//! explicit sub-steps, each a symmetric mixing with non-negative weights:
//!
//! 1. diffusion `m += κ dt ∇²m` on the 5-point stencil with zero-flux walls;
//! 2. for each vertical interface between a cell and the one below it, a
//!    two-cell exchange of fraction `s = β dt max(0, T_below - T_above)`.
//!    Only warmer-below interfaces mix, so warm mass moves up and cool
//!    mass moves down, at a rate proportional to the temperature contrast.
//!
//! Both sub-steps are doubly stochastic under the stability bounds
//! `κ dt ≤ 1/4` and `β dt (T_max - T_min) ≤ 1/2`, so `Σ exp(T)` is conserved,
//! temperatures stay inside their initial range and a uniform field is a
//! fixed point. Row 0 is the top of the box.

use crate::error::{Error, Result};
use crate::numeric::{RngState, Tensor};
use crate::sim::{Episode, Labels, Process};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluidParams {
    pub grid: usize,
    pub kappa: f64,
    pub beta: f64,
    pub dt: f64,
    /// Peak temperature of the warm bump (the cool bump is its negative).
    pub amplitude: f64,
    /// Gaussian radius of the bumps, in cells.
    pub radius: f64,
    /// Standard deviation of each bump's horizontal offset, in cells.
    pub offset_std: f64,
    /// Fields per episode, including the initial one.
    pub steps: usize,
}

impl Default for FluidParams {
    fn default() -> Self {
        FluidParams {
            grid: 16,
            kappa: 0.15,
            beta: 0.08,
            dt: 1.0,
            amplitude: 1.0,
            radius: 2.0,
            offset_std: 2.0,
            steps: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluidField {
    pub grid: usize,
    /// Row-major temperatures, row 0 at the top.
    pub temps: Vec<f64>,
    pub time: usize,
}

impl FluidField {
    pub fn new(grid: usize, temps: Vec<f64>) -> Result<Self> {
        if grid == 0 || temps.len() != grid * grid {
            return Err(Error::dim(
                "fluid_field",
                format!("{} temperatures for a {grid}x{grid} grid", temps.len()),
            ));
        }
        if temps.iter().any(|t| !t.is_finite()) {
            return Err(Error::numeric("fluid_field"));
        }
        Ok(FluidField {
            grid,
            temps,
            time: 0,
        })
    }

    pub fn uniform(grid: usize, t: f64) -> Self {
        FluidField {
            grid,
            temps: vec![t; grid * grid],
            time: 0,
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.temps[row * self.grid + col]
    }

    /// `Σ exp(T)`.
    pub fn total_mass(&self) -> f64 {
        self.temps.iter().map(|t| t.exp()).sum()
    }
}

/// Initial field: a warm bump centred at row `3G/4` and a cool bump at row
/// `G/4`, each shifted horizontally by an independent `N(0, offset_std²)`.
pub fn initial_field(rng: &mut RngState, params: &FluidParams) -> Result<FluidField> {
    let g = params.grid;
    let mid = (g as f64 - 1.0) / 2.0;
    let warm_col = mid + rng.normal(0.0, params.offset_std);
    let cool_col = mid + rng.normal(0.0, params.offset_std);
    let bumps = [
        (0.75 * g as f64, warm_col, params.amplitude),
        (0.25 * g as f64, cool_col, -params.amplitude),
    ];
    let r2 = 2.0 * params.radius * params.radius;
    let mut temps = vec![0.0; g * g];
    for row in 0..g {
        for col in 0..g {
            temps[row * g + col] = bumps
                .iter()
                .map(|&(cr, cc, a)| {
                    let d2 = (row as f64 - cr).powi(2) + (col as f64 - cc).powi(2);
                    a * (-d2 / r2).exp()
                })
                .sum();
        }
    }
    FluidField::new(g, temps)
}

pub fn fluid_step(field: &FluidField, params: &FluidParams) -> Result<FluidField> {
    let g = field.grid;
    if g != params.grid {
        return Err(Error::dim("fluid_step", format!("grid {g} vs configured {}", params.grid)));
    }
    let diff = params.kappa * params.dt;
    if !(0.0..=0.25).contains(&diff) {
        return Err(Error::Config(format!(
            "diffusion number κ·dt = {diff} outside the stable range [0, 0.25]"
        )));
    }
    let (lo, hi) = field
        .temps
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &t| (l.min(t), h.max(t)));
    let buoy = params.beta * params.dt;
    if buoy < 0.0 || buoy * (hi - lo) > 0.5 {
        return Err(Error::Config(format!(
            "exchange number β·dt·ΔT = {} outside the stable range [0, 0.5]",
            buoy * (hi - lo)
        )));
    }

    let m: Vec<f64> = field.temps.iter().map(|t| t.exp()).collect();
    let mut md = m.clone();
    for r in 0..g {
        for c in 0..g {
            let i = r * g + c;
            let mut lap = 0.0;
            if r > 0 {
                lap += m[i - g] - m[i];
            }
            if r + 1 < g {
                lap += m[i + g] - m[i];
            }
            if c > 0 {
                lap += m[i - 1] - m[i];
            }
            if c + 1 < g {
                lap += m[i + 1] - m[i];
            }
            md[i] = m[i] + diff * lap;
        }
    }

    // Temperatures are updated through relative mass changes so that
    // untouched cells keep their exact value.
    let relog = |mass: &[f64]| -> Vec<f64> {
        field
            .temps
            .iter()
            .zip(mass.iter().zip(&m))
            .map(|(t, (new, old))| t + ((new - old) / old).ln_1p())
            .collect()
    };
    let td = relog(&md);
    let mut mx = md.clone();
    for r in 0..g.saturating_sub(1) {
        for c in 0..g {
            let (up, down) = (r * g + c, (r + 1) * g + c);
            let s = buoy * (td[down] - td[up]).max(0.0);
            let flow = s * (md[down] - md[up]);
            mx[up] += flow;
            mx[down] -= flow;
        }
    }

    let temps = relog(&mx);
    if temps.iter().any(|t| !t.is_finite()) {
        return Err(Error::numeric("fluid_step"));
    }
    Ok(FluidField {
        grid: g,
        temps,
        time: field.time + 1,
    })
}

/// Cell probabilities `exp(T) / Σ exp(T)` as a `[G, G]` tensor.
pub fn field_to_distribution(field: &FluidField) -> Result<Tensor> {
    let g = field.grid;
    let hi = field.temps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = field.temps.iter().map(|t| (t - hi).exp()).collect();
    let total: f64 = w.iter().sum();
    Tensor::new(vec![g, g], w.iter().map(|v| v / total).collect())
}

/// Normalises every field of an episode by the mass of its first field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeNormalizer {
    pub total: f64,
}

impl EpisodeNormalizer {
    pub const MAX_DRIFT: f64 = 1e-6;

    pub fn new(first: &FluidField) -> Self {
        EpisodeNormalizer {
            total: first.total_mass(),
        }
    }

    /// Probabilities under the fixed constant; fails if they no longer sum
    /// to one within [`Self::MAX_DRIFT`].
    pub fn distribution(&self, field: &FluidField) -> Result<Tensor> {
        let p: Vec<f64> = field.temps.iter().map(|t| t.exp() / self.total).collect();
        let drift = (p.iter().sum::<f64>() - 1.0).abs();
        if drift >= Self::MAX_DRIFT {
            return Err(Error::Contract(format!(
                "field mass drifted by {drift:e} from the episode's initial total"
            )));
        }
        Tensor::new(vec![field.grid, field.grid], p)
    }
}

/// `params.steps` fields starting from a random initial field; samples are
/// flattened temperature grids.
pub fn simulate_fluid_episode(rng: &mut RngState, params: &FluidParams) -> Result<Episode> {
    if params.steps == 0 {
        return Err(Error::Config("an episode needs at least one step".into()));
    }
    let mut field = initial_field(rng, params)?;
    let norm = EpisodeNormalizer::new(&field);
    let mut samples = Vec::with_capacity(params.steps);
    for t in 0..params.steps {
        if t > 0 {
            field = fluid_step(&field, params)?;
            norm.distribution(&field)?;
        }
        samples.push(field.temps.clone());
    }
    let mut ep = Episode::new(Process::Fluid, samples);
    ep.labels = Labels {
        grid: Some(params.grid),
        ..Labels::default()
    };
    Ok(ep)
}
