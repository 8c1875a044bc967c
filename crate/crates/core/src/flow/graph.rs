//! Composition of flow layers into a conditional density over ℝ^K.
//!
//! Layers are listed in the data → latent direction. A fixed affine
//! standardisation precedes them and a standard normal sits at the end, so
//!
//! ```text
//! log p(x | state) = log N(z) + logdet(standardise) + Σ_layers logdet
//! ```
//!
//! Hidden vectors live in a separate [`GraphState`], which keeps the graph
//! itself immutable during evaluation and lets several episodes be scored
//! against one set of parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{
    Activation, Coupling, FlowLayer, Layer, Permutation, RafCell, StandardNormal,
    DEFAULT_NET_WIDTH,
};
use crate::numeric::{ParamId, ParamStore, RngState, Tape, Tensor, Var};

/// Per-coordinate `(x - shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Mean and population standard deviation of the rows; degenerate
    /// coordinates keep unit scale.
    pub fn fit<'a>(dim: usize, rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for row in rows {
            if row.len() != dim {
                return Err(Error::dim(
                    "standardizer_fit",
                    format!("row of length {} for K = {dim}", row.len()),
                ));
            }
            n += 1;
            for (i, v) in row.iter().enumerate() {
                sum[i] += v;
                sq[i] += v * v;
            }
        }
        if n == 0 {
            return Err(Error::Contract("cannot fit a standardizer to no data".into()));
        }
        let nf = n as f64;
        let shift: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let scale = sq
            .iter()
            .zip(&shift)
            .map(|(q, m)| {
                let sd = (q / nf - m * m).max(0.0).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { shift, scale })
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    /// `-Σ ln scale`.
    pub fn log_det(&self) -> f64 {
        -self.scale.iter().map(|s| s.ln()).sum::<f64>()
    }

    pub fn apply_rows(&self, x: &Tensor) -> Result<Tensor> {
        let (rows, cols) = x.dims2();
        if cols != self.dim() {
            return Err(Error::dim(
                "standardize",
                format!("{cols} columns for K = {}", self.dim()),
            ));
        }
        let data = x
            .data()
            .chunks_exact(cols)
            .flat_map(|r| self.apply(r))
            .collect();
        Tensor::new(vec![rows, cols], data)
    }
}

/// What the recurrent cells consume when the graph observes a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Conditioning {
    /// The standardised observation itself.
    Observation,
    /// An external vector of the given width (for example a latent code).
    External { dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PermutationKind {
    Reversal,
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Raf {
        dim: usize,
        hidden: usize,
        cond_dim: usize,
        activation: Activation,
    },
    Coupling {
        dim: usize,
        split: usize,
        width: usize,
    },
    Permutation {
        perm: Vec<usize>,
    },
}

/// Serializable architecture of a [`FlowGraph`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub dim: usize,
    pub conditioning: Conditioning,
    pub layers: Vec<LayerSpec>,
    pub standardizer: Standardizer,
}

impl GraphSpec {
    pub fn cond_dim(&self) -> usize {
        match self.conditioning {
            Conditioning::Observation => self.dim,
            Conditioning::External { dim } => dim,
        }
    }

    /// `n` RAF cells with a permutation between consecutive cells. Every
    /// cell uses `activation` except the one nearest the base, which is the
    /// identity.
    pub fn raf_stack(
        dim: usize,
        n: usize,
        hidden: usize,
        activation: Activation,
        permutation: PermutationKind,
        conditioning: Conditioning,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("a RAF stack needs at least one layer".into()));
        }
        let cond_dim = match conditioning {
            Conditioning::Observation => dim,
            Conditioning::External { dim } => dim,
        };
        let mut perm_rng = match permutation {
            PermutationKind::Random { seed } => Some(RngState::new(seed, 0)),
            PermutationKind::Reversal => None,
        };
        let mut layers = Vec::with_capacity(2 * n - 1);
        for i in 0..n {
            if i > 0 {
                let p = match perm_rng.as_mut() {
                    Some(rng) => Permutation::random(dim, rng)?,
                    None => Permutation::reversal(dim)?,
                };
                layers.push(LayerSpec::Permutation {
                    perm: p.indices().to_vec(),
                });
            }
            layers.push(LayerSpec::Raf {
                dim,
                hidden,
                cond_dim,
                activation: if i + 1 == n {
                    Activation::Identity
                } else {
                    activation
                },
            });
        }
        Ok(GraphSpec {
            dim,
            conditioning,
            layers,
            standardizer: Standardizer::identity(dim),
        })
    }

    /// `n` affine couplings on the leading `⌊K/2⌋` coordinates, with a
    /// reversal between consecutive couplings.
    pub fn coupling_stack(dim: usize, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("a coupling stack needs at least one layer".into()));
        }
        let mut layers = Vec::with_capacity(2 * n - 1);
        for i in 0..n {
            if i > 0 {
                layers.push(LayerSpec::Permutation {
                    perm: (0..dim).rev().collect(),
                });
            }
            layers.push(LayerSpec::Coupling {
                dim,
                split: (dim / 2).max(1),
                width: DEFAULT_NET_WIDTH,
            });
        }
        Ok(GraphSpec {
            dim,
            conditioning: Conditioning::Observation,
            layers,
            standardizer: Standardizer::identity(dim),
        })
    }
}

/// Per-layer hidden vectors (`None` for stateless layers).
#[derive(Debug, Clone, PartialEq)]
pub struct GraphState {
    pub hidden: Vec<Option<Vec<f64>>>,
}

impl GraphState {
    pub fn reset(&mut self) {
        for h in self.hidden.iter_mut().flatten() {
            h.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Batched hidden vectors on a tape.
pub type TapeState = Vec<Option<Var>>;

#[derive(Debug, Clone)]
pub struct FlowGraph {
    pub spec: GraphSpec,
    pub layers: Vec<Layer>,
    pub base: StandardNormal,
    pub store: ParamStore,
}

impl FlowGraph {
    /// Instantiates fresh parameters for `spec`.
    pub fn build(spec: GraphSpec, rng: &mut RngState) -> Result<Self> {
        let mut store = ParamStore::new();
        let layers = Self::build_layers(&spec, &mut store, rng)?;
        Ok(FlowGraph {
            base: StandardNormal::new(spec.dim),
            spec,
            layers,
            store,
        })
    }

    /// Layers whose parameters live in an existing store (used when several
    /// networks share one optimiser).
    pub fn build_layers(
        spec: &GraphSpec,
        store: &mut ParamStore,
        rng: &mut RngState,
    ) -> Result<Vec<Layer>> {
        if spec.dim == 0 {
            return Err(Error::Config("flow dimension must be positive".into()));
        }
        if spec.standardizer.dim() != spec.dim
            || spec.standardizer.scale.iter().any(|s| !(*s > 0.0 && s.is_finite()))
        {
            return Err(Error::Config("standardizer does not match the flow".into()));
        }
        let cond_dim = spec.cond_dim();
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, ls) in spec.layers.iter().enumerate() {
            let layer = match ls {
                LayerSpec::Raf {
                    dim,
                    hidden,
                    cond_dim: c,
                    activation,
                } => {
                    if *c != cond_dim {
                        return Err(Error::Config(format!(
                            "layer {i} conditions on {c} values, the graph supplies {cond_dim}"
                        )));
                    }
                    Layer::Raf(RafCell::new(
                        store,
                        &format!("layer{i}.raf"),
                        *dim,
                        *hidden,
                        *c,
                        *activation,
                        rng,
                    )?)
                }
                LayerSpec::Coupling { dim, split, width } => Layer::Coupling(Coupling::new(
                    store,
                    &format!("layer{i}.coupling"),
                    *dim,
                    *split,
                    *width,
                    rng,
                )?),
                LayerSpec::Permutation { perm } => {
                    Layer::Permutation(Permutation::new(perm.clone())?)
                }
            };
            if layer.dim() != spec.dim {
                return Err(Error::Config(format!(
                    "layer {i} has dimension {}, the graph has {}",
                    layer.dim(),
                    spec.dim
                )));
            }
            layers.push(layer);
        }
        Ok(layers)
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.spec.standardizer
    }

    pub fn set_standardizer(&mut self, s: Standardizer) -> Result<()> {
        if s.dim() != self.dim() {
            return Err(Error::dim("set_standardizer", format!("K = {}", s.dim())));
        }
        self.spec.standardizer = s;
        Ok(())
    }

    pub fn parameters(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| l.parameters()).collect()
    }

    pub fn zero_state(&self) -> GraphState {
        GraphState {
            hidden: self
                .layers
                .iter()
                .map(|l| match l.hidden_dim() {
                    0 => None,
                    h => Some(vec![0.0; h]),
                })
                .collect(),
        }
    }

    fn check_state(&self, state: &GraphState) -> Result<()> {
        if state.hidden.len() != self.layers.len() {
            return Err(Error::Contract(format!(
                "state has {} layers, graph has {}",
                state.hidden.len(),
                self.layers.len()
            )));
        }
        Ok(())
    }

    /// Advances every recurrent layer with the observation `x` (raw data
    /// units).
    pub fn observe(&self, state: &mut GraphState, x: &[f64]) -> Result<()> {
        if self.spec.conditioning != Conditioning::Observation {
            return Err(Error::Contract(
                "this graph is conditioned on an external context".into(),
            ));
        }
        if x.len() != self.dim() {
            return Err(Error::dim("observe", format!("length {} for K = {}", x.len(), self.dim())));
        }
        let c = self.spec.standardizer.apply(x);
        self.observe_context(state, &c)
    }

    /// Advances every recurrent layer with an explicit conditioning vector.
    pub fn observe_context(&self, state: &mut GraphState, cond: &[f64]) -> Result<()> {
        self.check_state(state)?;
        for (layer, h) in self.layers.iter().zip(state.hidden.iter_mut()) {
            if let (Layer::Raf(cell), Some(h)) = (layer, h.as_mut()) {
                *h = cell.update(&self.store, h, cond)?;
            }
        }
        Ok(())
    }

    /// Maps `x` to the base space, returning `(z, logdet)` where the logdet
    /// includes the standardisation.
    pub fn forward(&self, state: &GraphState, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_state(state)?;
        if x.len() != self.dim() {
            return Err(Error::dim("graph_forward", format!("length {} for K = {}", x.len(), self.dim())));
        }
        let mut v = self.spec.standardizer.apply(x);
        let mut logdet = self.spec.standardizer.log_det();
        for (layer, h) in self.layers.iter().zip(&state.hidden) {
            let (next, ld) = layer.forward(&self.store, &v, h.as_deref().unwrap_or(&[]))?;
            v = next;
            logdet += ld;
        }
        Ok((v, logdet))
    }

    pub fn inverse(&self, state: &GraphState, z: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_state(state)?;
        if z.len() != self.dim() {
            return Err(Error::dim("graph_inverse", format!("length {} for K = {}", z.len(), self.dim())));
        }
        let mut v = z.to_vec();
        let mut logdet = -self.spec.standardizer.log_det();
        for (layer, h) in self.layers.iter().zip(&state.hidden).rev() {
            let (prev, ld) = layer.inverse(&self.store, &v, h.as_deref().unwrap_or(&[]))?;
            v = prev;
            logdet += ld;
        }
        Ok((self.spec.standardizer.invert(&v), logdet))
    }

    /// `log p(x | state)`.
    pub fn log_prob(&self, state: &GraphState, x: &[f64]) -> Result<f64> {
        let (z, logdet) = self.forward(state, x)?;
        let lp = self.base.log_prob(&z)? + logdet;
        if !lp.is_finite() {
            return Err(Error::numeric("graph_log_prob"));
        }
        Ok(lp)
    }

    /// Draws the next value given the current state without advancing it.
    pub fn sample(&self, state: &GraphState, rng: &mut RngState) -> Result<Vec<f64>> {
        let z = self.base.sample(rng);
        let (x, _) = self.inverse(state, &z).map_err(|e| match e {
            Error::Domain { op, .. } => Error::numeric(format!("graph_sample ({op})")),
            other => other,
        })?;
        Ok(x)
    }

    /// Conditional log densities `log p(x_{t+1} | x_{0..=t})` for
    /// `t = 0..T-1`, starting from a zero state.
    pub fn episode_log_prob(&self, episode: &[Vec<f64>]) -> Result<Vec<f64>> {
        if episode.len() < 2 {
            return Err(Error::Contract(format!(
                "an episode needs at least two steps, got {}",
                episode.len()
            )));
        }
        let mut state = self.zero_state();
        self.observe(&mut state, &episode[0])?;
        let mut out = Vec::with_capacity(episode.len() - 1);
        for x in &episode[1..] {
            out.push(self.log_prob(&state, x)?);
            self.observe(&mut state, x)?;
        }
        Ok(out)
    }

    /// Log densities of many points under one state, evaluated as a batch.
    pub fn log_prob_points(&self, state: &GraphState, points: &Tensor) -> Result<Vec<f64>> {
        self.check_state(state)?;
        let mut tape = Tape::new(&self.store);
        let hidden: TapeState = state
            .hidden
            .iter()
            .map(|h| {
                h.as_ref()
                    .map(|h| Tensor::row(h.clone()).map(|t| tape.constant(t)))
                    .transpose()
            })
            .collect::<Result<_>>()?;
        let lp = self.tape_log_prob(&mut tape, &hidden, points)?;
        Ok(tape.value(lp).data().to_vec())
    }

    /// Zero hidden vectors for a batch of `rows` sequences.
    pub fn tape_zero_state(&self, tape: &mut Tape, rows: usize) -> TapeState {
        self.layers
            .iter()
            .map(|l| match l.hidden_dim() {
                0 => None,
                h => Some(tape.constant(Tensor::zeros(&[rows, h]))),
            })
            .collect()
    }

    /// Row-wise `log p(x | state)` for `x[N, K]` in data units, shape `[N, 1]`.
    /// Hidden vectors may have `N` rows or a single broadcast row.
    pub fn tape_log_prob(&self, tape: &mut Tape, state: &TapeState, x: &Tensor) -> Result<Var> {
        if state.len() != self.layers.len() {
            return Err(Error::Contract("tape state does not match the graph".into()));
        }
        let xs = self.spec.standardizer.apply_rows(x)?;
        let rows = xs.rows();
        let mut v = tape.constant(xs);
        let mut logdet = tape.constant(Tensor::full(&[rows, 1], self.spec.standardizer.log_det()));
        for (layer, h) in self.layers.iter().zip(state) {
            let (next, ld) = layer.forward_tape(tape, v, *h)?;
            v = next;
            logdet = tape.add(logdet, ld)?;
        }
        let base = self.base.log_prob_tape(tape, v)?;
        tape.add(base, logdet)
    }

    /// Advances a batched state with conditioning rows `cond[N, C]`.
    pub fn tape_observe(&self, tape: &mut Tape, state: &TapeState, cond: Var) -> Result<TapeState> {
        self.layers
            .iter()
            .zip(state)
            .map(|(layer, h)| match (layer, h) {
                (Layer::Raf(cell), Some(h)) => cell.update_tape(tape, *h, cond).map(Some),
                _ => Ok(*h),
            })
            .collect()
    }

    /// Advances a batched state with observations `x[N, K]` in data units.
    pub fn tape_observe_data(&self, tape: &mut Tape, state: &TapeState, x: &Tensor) -> Result<TapeState> {
        if self.spec.conditioning != Conditioning::Observation {
            return Err(Error::Contract(
                "this graph is conditioned on an external context".into(),
            ));
        }
        let c = tape.constant(self.spec.standardizer.apply_rows(x)?);
        self.tape_observe(tape, state, c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::gaussian_log_prob;

    fn raf_graph(k: usize, n: usize, h: usize, seed: u64) -> FlowGraph {
        let spec = GraphSpec::raf_stack(
            k,
            n,
            h,
            Activation::default(),
            PermutationKind::Reversal,
            Conditioning::Observation,
        )
        .unwrap();
        FlowGraph::build(spec, &mut RngState::new(seed, 0)).unwrap()
    }

    fn episode(k: usize, t: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = RngState::new(seed, 1);
        (0..t)
            .map(|_| (0..k).map(|_| rng.normal(0.0, 1.5)).collect())
            .collect()
    }

    #[test]
    fn permutation_only_graph_is_gaussian() {
        let spec = GraphSpec {
            dim: 1,
            conditioning: Conditioning::Observation,
            layers: vec![LayerSpec::Permutation { perm: vec![0] }],
            standardizer: Standardizer::identity(1),
        };
        let g = FlowGraph::build(spec, &mut RngState::new(0, 0)).unwrap();
        let ep = episode(1, 6, 3);
        let lp = g.episode_log_prob(&ep).unwrap();
        assert_eq!(lp.len(), 5);
        for (l, x) in lp.iter().zip(&ep[1..]) {
            assert_eq!(*l, gaussian_log_prob(x).unwrap());
        }
    }

    #[test]
    fn short_episode_rejected() {
        let g = raf_graph(2, 1, 6, 0);
        assert!(matches!(g.episode_log_prob(&[]), Err(Error::Contract(_))));
        assert!(matches!(
            g.episode_log_prob(&[vec![0.0, 0.0]]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn standardizer_fit_and_logdet() {
        let rows = [vec![1.0, 5.0], vec![3.0, 5.0]];
        let s = Standardizer::fit(2, rows.iter().map(|r| r.as_slice())).unwrap();
        assert_eq!(s.shift, vec![2.0, 5.0]);
        assert_eq!(s.scale, vec![1.0, 1.0]);
        let s = Standardizer {
            shift: vec![0.0],
            scale: vec![2.0],
        };
        assert!((s.log_det() + 2f64.ln()).abs() < 1e-15);
        assert_eq!(s.invert(&s.apply(&[3.0])), vec![3.0]);
    }

    #[test]
    fn tape_route_matches_plain_route() {
        let mut g = raf_graph(2, 3, 8, 5);
        g.set_standardizer(Standardizer {
            shift: vec![0.3, -1.0],
            scale: vec![2.0, 0.5],
        })
        .unwrap();
        let eps: Vec<Vec<Vec<f64>>> = (0..3).map(|s| episode(2, 5, 10 + s)).collect();
        let plain: Vec<Vec<f64>> = eps.iter().map(|e| g.episode_log_prob(e).unwrap()).collect();
        let mut tape = Tape::new(&g.store);
        let mut st = g.tape_zero_state(&mut tape, 3);
        let step = |t: usize| Tensor::from_rows(&eps.iter().map(|e| e[t].clone()).collect::<Vec<_>>()).unwrap();
        st = g.tape_observe_data(&mut tape, &st, &step(0)).unwrap();
        for t in 1..5 {
            let lp = g.tape_log_prob(&mut tape, &st, &step(t)).unwrap();
            for r in 0..3 {
                assert!((tape.value(lp).data()[r] - plain[r][t - 1]).abs() < 1e-10);
            }
            st = g.tape_observe_data(&mut tape, &st, &step(t)).unwrap();
        }
    }

    #[test]
    fn reset_and_replay_is_identical() {
        let g = raf_graph(2, 2, 8, 1);
        let ep = episode(2, 8, 2);
        let mut st = g.zero_state();
        for x in &ep {
            g.observe(&mut st, x).unwrap();
        }
        let dirty = g.log_prob(&st, &[0.1, 0.2]).unwrap();
        st.reset();
        assert_eq!(st, g.zero_state());
        for x in &ep {
            g.observe(&mut st, x).unwrap();
        }
        assert_eq!(g.log_prob(&st, &[0.1, 0.2]).unwrap(), dirty);
    }
}
