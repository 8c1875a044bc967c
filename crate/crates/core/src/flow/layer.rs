use crate::error::{Error, Result};
use crate::flow::{Coupling, Permutation, RafCell};
use crate::numeric::{ParamId, ParamStore, Tape, Var};

/// A bijection on ℝ^K, evaluated data → latent by `forward`.
///
/// `context` is the layer's recurrent hidden vector for RAF cells and is
/// ignored (pass `&[]`) by stateless layers.
pub trait FlowLayer {
    fn dim(&self) -> usize;

    fn parameters(&self) -> Vec<ParamId>;

    /// Width of the hidden vector this layer carries, or 0.
    fn hidden_dim(&self) -> usize {
        0
    }

    fn forward(&self, store: &ParamStore, x: &[f64], context: &[f64]) -> Result<(Vec<f64>, f64)>;

    fn inverse(&self, store: &ParamStore, z: &[f64], context: &[f64]) -> Result<(Vec<f64>, f64)>;

    /// Batched forward returning `(z[N, K], logdet[N, 1])`.
    fn forward_tape(&self, tape: &mut Tape, x: Var, context: Option<Var>) -> Result<(Var, Var)>;
}

#[derive(Debug, Clone)]
pub enum Layer {
    Raf(RafCell),
    Coupling(Coupling),
    Permutation(Permutation),
}

fn zero_logdet(tape: &mut Tape, x: Var) -> Var {
    let rows = tape.value(x).rows();
    tape.constant(crate::numeric::Tensor::zeros(&[rows, 1]))
}

impl FlowLayer for Layer {
    fn dim(&self) -> usize {
        match self {
            Layer::Raf(c) => c.dim,
            Layer::Coupling(c) => c.dim,
            Layer::Permutation(p) => p.dim(),
        }
    }

    fn parameters(&self) -> Vec<ParamId> {
        match self {
            Layer::Raf(c) => c.parameters(),
            Layer::Coupling(c) => c.parameters(),
            Layer::Permutation(_) => Vec::new(),
        }
    }

    fn hidden_dim(&self) -> usize {
        match self {
            Layer::Raf(c) => c.hidden,
            _ => 0,
        }
    }

    fn forward(&self, store: &ParamStore, x: &[f64], context: &[f64]) -> Result<(Vec<f64>, f64)> {
        match self {
            Layer::Raf(c) => c.forward(x, context),
            Layer::Coupling(c) => c.forward(store, x),
            Layer::Permutation(p) => p.forward(x),
        }
    }

    fn inverse(&self, store: &ParamStore, z: &[f64], context: &[f64]) -> Result<(Vec<f64>, f64)> {
        match self {
            Layer::Raf(c) => c.inverse(z, context),
            Layer::Coupling(c) => c.inverse(store, z),
            Layer::Permutation(p) => p.inverse(z),
        }
    }

    fn forward_tape(&self, tape: &mut Tape, x: Var, context: Option<Var>) -> Result<(Var, Var)> {
        match self {
            Layer::Raf(c) => {
                let h = context.ok_or_else(|| {
                    Error::Contract("RAF layer evaluated without a hidden state".into())
                })?;
                c.forward_tape(tape, x, h)
            }
            Layer::Coupling(c) => c.forward_tape(tape, x),
            Layer::Permutation(p) => {
                let z = p.forward_tape(tape, x)?;
                let ld = zero_logdet(tape, x);
                Ok((z, ld))
            }
        }
    }
}
