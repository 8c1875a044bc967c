//! Trainable models behind a common interface, and the serializable
//! description used to rebuild them from a checkpoint.

use serde::{Deserialize, Serialize};

use crate::baselines::{AutoencoderSpec, DenseAutoencoder, RnnGaussian, RnnGaussianSpec};
use crate::error::{Error, Result};
use crate::flow::{Conditioning, FlowGraph, GraphSpec, GraphState, TapeState};
use crate::numeric::{ParamStore, RngState, Tape, Tensor, Var};
use crate::sim::{field_to_distribution, FluidField};
use crate::training::losses::{kl_discrete, kl_discrete_tape};

/// A model of `p(x_{t+1} | x_{0..=t})`.
pub trait SequenceModel {
    fn dim(&self) -> usize;

    /// `log p(x_{t+1} | x_{0..=t})` for `t = 0..T-1` from a fresh state.
    fn episode_log_prob(&self, episode: &[Vec<f64>]) -> Result<Vec<f64>>;

    /// Generates `steps` values from a fresh state, feeding each draw back
    /// as an observation.
    fn sample_episode(&self, rng: &mut RngState, steps: usize) -> Result<Vec<Vec<f64>>>;

    /// `log p(x | context)` at each point after observing every context
    /// sample from a fresh state.
    fn conditional_log_prob(&self, context: &[Vec<f64>], points: &[Vec<f64>]) -> Result<Vec<f64>>;
}

fn sample_step_error(e: Error, t: usize) -> Error {
    match e {
        Error::Numeric { op } => Error::numeric(format!("{op} at generated step {t}")),
        Error::Domain { op, detail } => {
            Error::numeric(format!("{op} at generated step {t}: {detail}"))
        }
        other => other,
    }
}

impl SequenceModel for FlowGraph {
    fn dim(&self) -> usize {
        FlowGraph::dim(self)
    }

    fn episode_log_prob(&self, episode: &[Vec<f64>]) -> Result<Vec<f64>> {
        FlowGraph::episode_log_prob(self, episode)
    }

    fn sample_episode(&self, rng: &mut RngState, steps: usize) -> Result<Vec<Vec<f64>>> {
        let mut state = self.zero_state();
        let mut out = Vec::with_capacity(steps);
        for t in 0..steps {
            let x = self.sample(&state, rng).map_err(|e| sample_step_error(e, t))?;
            self.observe(&mut state, &x).map_err(|e| sample_step_error(e, t))?;
            out.push(x);
        }
        Ok(out)
    }

    fn conditional_log_prob(&self, context: &[Vec<f64>], points: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut state = self.zero_state();
        for x in context {
            self.observe(&mut state, x)?;
        }
        self.log_prob_points(&state, &Tensor::from_rows(points)?)
    }
}

impl SequenceModel for RnnGaussian {
    fn dim(&self) -> usize {
        RnnGaussian::dim(self)
    }

    fn episode_log_prob(&self, episode: &[Vec<f64>]) -> Result<Vec<f64>> {
        RnnGaussian::episode_log_prob(self, episode)
    }

    fn sample_episode(&self, rng: &mut RngState, steps: usize) -> Result<Vec<Vec<f64>>> {
        let mut h = self.zero_state();
        let mut out = Vec::with_capacity(steps);
        for t in 0..steps {
            let x = self.sample(&h, rng).map_err(|e| sample_step_error(e, t))?;
            h = self.observe(&h, &x).map_err(|e| sample_step_error(e, t))?;
            out.push(x);
        }
        Ok(out)
    }

    fn conditional_log_prob(&self, context: &[Vec<f64>], points: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut h = self.zero_state();
        for x in context {
            h = self.observe(&h, x)?;
        }
        points.iter().map(|x| self.log_prob(&h, x)).collect()
    }
}

/// Autoencoder plus a 2-D flow over the plane `[-extent, extent]²`,
/// conditioned on the latent code of each observed field. The flow's density
/// at the grid-cell centres, renormalised over the cells, is the predicted
/// distribution of the next field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldModelSpec {
    pub autoencoder: AutoencoderSpec,
    pub flow: GraphSpec,
    pub extent: f64,
}

#[derive(Debug, Clone)]
pub struct FieldModel {
    pub spec: FieldModelSpec,
    pub autoencoder: DenseAutoencoder,
    /// The flow's store also holds the autoencoder parameters.
    pub flow: FlowGraph,
}

impl FieldModel {
    pub fn build(spec: FieldModelSpec, rng: &mut RngState) -> Result<Self> {
        if spec.flow.dim != 2 {
            return Err(Error::Config("the field flow must be two-dimensional".into()));
        }
        if spec.flow.conditioning != (Conditioning::External { dim: spec.autoencoder.latent }) {
            return Err(Error::Config(
                "the field flow must be conditioned on the autoencoder latent".into(),
            ));
        }
        if !(spec.extent > 0.0) {
            return Err(Error::Config("plane extent must be positive".into()));
        }
        let mut flow = FlowGraph::build(spec.flow.clone(), rng)?;
        let autoencoder = DenseAutoencoder::new(&mut flow.store, spec.autoencoder.clone(), rng)?;
        Ok(FieldModel {
            spec,
            autoencoder,
            flow,
        })
    }

    pub fn grid(&self) -> usize {
        self.spec.autoencoder.grid
    }

    pub fn store(&self) -> &ParamStore {
        &self.flow.store
    }

    /// Cell centres as `[G², 2]` plane coordinates; row 0 of the grid is at
    /// the top (`y = extent`).
    pub fn cell_centers(&self) -> Tensor {
        let g = self.grid();
        let e = self.spec.extent;
        let h = 2.0 * e / g as f64;
        let mut data = Vec::with_capacity(2 * g * g);
        for r in 0..g {
            for c in 0..g {
                data.push(-e + (c as f64 + 0.5) * h);
                data.push(e - (r as f64 + 0.5) * h);
            }
        }
        Tensor::new(vec![g * g, 2], data).expect("finite centres")
    }

    fn field(&self, temps: &[f64]) -> Result<Tensor> {
        let g = self.grid();
        if temps.len() != g * g {
            return Err(Error::dim(
                "field_model",
                format!("{} values for a {g}x{g} grid", temps.len()),
            ));
        }
        Tensor::new(vec![g, g], temps.to_vec())
    }

    /// Normalised log cell masses under the current state.
    pub fn log_q(&self, state: &GraphState) -> Result<Vec<f64>> {
        let lp = self.flow.log_prob_points(state, &self.cell_centers())?;
        let m = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + lp.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        Ok(lp.iter().map(|v| v - lse).collect())
    }

    /// KL from each true next-field distribution to the prediction made after
    /// observing fields `0..=t`, for `t = 0..T-1`.
    pub fn episode_kl(&self, fields: &[Vec<f64>]) -> Result<Vec<f64>> {
        if fields.len() < 2 {
            return Err(Error::Contract("a field episode needs at least two steps".into()));
        }
        let g = self.grid();
        let mut state = self.flow.zero_state();
        let mut out = Vec::with_capacity(fields.len() - 1);
        for t in 0..fields.len() - 1 {
            let z = self.autoencoder.encode(self.store(), &self.field(&fields[t])?)?;
            self.flow.observe_context(&mut state, &z)?;
            let q: Vec<f64> = self.log_q(&state)?.iter().map(|v| v.exp()).collect();
            let q = Tensor::new(vec![g, g], q)?;
            let p = field_to_distribution(&FluidField::new(g, fields[t + 1].clone())?)?;
            out.push(kl_discrete(&p, &q)?);
        }
        Ok(out)
    }

    /// Per-episode training terms on a tape: `(mean KL over steps, L1 over
    /// all fields)`.
    pub fn tape_episode_terms(&self, tape: &mut Tape, fields: &[Vec<f64>]) -> Result<(Var, Var)> {
        if fields.len() < 2 {
            return Err(Error::Contract("a field episode needs at least two steps".into()));
        }
        let g = self.grid();
        let rows: Vec<Vec<f64>> = fields.to_vec();
        let x = tape.constant(Tensor::from_rows(&rows)?);
        let latent = self.autoencoder.encode_tape(tape, x)?;
        let recon = self.autoencoder.decode_tape(tape, latent)?;
        let l1 = crate::training::losses::l1_loss_tape(tape, x, recon)?;
        let centers = self.cell_centers();
        let mut state: TapeState = self.flow.tape_zero_state(tape, 1);
        let mut kl_total: Option<Var> = None;
        for t in 0..fields.len() - 1 {
            let z = tape.slice_rows(latent, t, t + 1)?;
            state = self.flow.tape_observe(tape, &state, z)?;
            let lp = self.flow.tape_log_prob(tape, &state, &centers)?;
            let lse = tape.log_sum_exp(lp)?;
            let neg = tape.scale(lse, -1.0)?;
            let log_q = tape.add_row(lp, neg)?;
            let p = field_to_distribution(&FluidField::new(g, fields[t + 1].clone())?)?;
            let kl = kl_discrete_tape(tape, p.data(), log_q)?;
            kl_total = Some(match kl_total {
                Some(acc) => tape.add(acc, kl)?,
                None => kl,
            });
        }
        let kl = tape.scale(kl_total.expect("at least one step"), 1.0 / (fields.len() - 1) as f64)?;
        Ok((kl, l1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Flow { graph: GraphSpec },
    RnnGaussian { rnn: RnnGaussianSpec },
    Field { field: FieldModelSpec },
}

#[derive(Debug, Clone)]
pub enum Model {
    Flow(FlowGraph),
    RnnGaussian(RnnGaussian),
    Field(FieldModel),
}

impl Model {
    /// Fresh parameters drawn from `rng`.
    pub fn build(spec: &ModelSpec, rng: &mut RngState) -> Result<Self> {
        Ok(match spec {
            ModelSpec::Flow { graph } => Model::Flow(FlowGraph::build(graph.clone(), rng)?),
            ModelSpec::RnnGaussian { rnn } => Model::RnnGaussian(RnnGaussian::build(rnn.clone(), rng)?),
            ModelSpec::Field { field } => Model::Field(FieldModel::build(field.clone(), rng)?),
        })
    }

    /// Rebuilds the architecture and installs the given named parameters.
    /// The names must match the architecture exactly.
    pub fn from_parts(spec: &ModelSpec, params: Vec<(String, Tensor)>) -> Result<Self> {
        let mut model = Model::build(spec, &mut RngState::new(0, 0))?;
        let store = model.store_mut();
        if params.len() != store.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} arrays, the architecture needs {}",
                params.len(),
                store.len()
            )));
        }
        for (name, value) in params {
            let id = store
                .id_of(&name)
                .ok_or_else(|| Error::Format(format!("unexpected array {name:?}")))?;
            store
                .set_value(id, value)
                .map_err(|e| Error::Format(format!("array {name:?}: {e}")))?;
        }
        Ok(model)
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            Model::Flow(g) => ModelSpec::Flow {
                graph: g.spec.clone(),
            },
            Model::RnnGaussian(r) => ModelSpec::RnnGaussian {
                rnn: r.spec.clone(),
            },
            Model::Field(f) => ModelSpec::Field {
                field: f.spec.clone(),
            },
        }
    }

    pub fn store(&self) -> &ParamStore {
        match self {
            Model::Flow(g) => &g.store,
            Model::RnnGaussian(r) => &r.store,
            Model::Field(f) => &f.flow.store,
        }
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        match self {
            Model::Flow(g) => &mut g.store,
            Model::RnnGaussian(r) => &mut r.store,
            Model::Field(f) => &mut f.flow.store,
        }
    }

    pub fn as_sequence(&self) -> Option<&dyn SequenceModel> {
        match self {
            Model::Flow(g) => Some(g),
            Model::RnnGaussian(r) => Some(r),
            Model::Field(_) => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Model::Flow(g) => {
                if g.layers.iter().any(|l| matches!(l, crate::flow::Layer::Raf(_))) {
                    "raf"
                } else {
                    "flow"
                }
            }
            Model::RnnGaussian(_) => "rnn_gaussian",
            Model::Field(_) => "field_raf",
        }
    }
}
