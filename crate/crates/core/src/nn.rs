//! Dense layers, small multilayer perceptrons and the GRU cell.
//!
//! All layers operate on row batches: an input of shape `[N, in]` yields
//! `[N, out]`. Weight matrices are therefore stored as `[in, out]` (the
//! transpose of the usual `W x` convention) so a batch is one `X · W` product.

use crate::error::{Error, Result};
use crate::numeric::{ParamId, ParamStore, RngState, Tape, Tensor, Var};

fn uniform_tensor(rng: &mut RngState, shape: &[usize], bound: f64) -> Result<Tensor> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(-bound, bound)).collect())
}

/// How fresh parameters are filled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform weights in `±1/√fan_in`, zero bias.
    Uniform,
    /// All zeros (used for output layers that should start as the identity).
    Zeros,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Act {
    Tanh,
    Linear,
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        init: Init,
        rng: &mut RngState,
    ) -> Result<Self> {
        let w = match init {
            Init::Uniform => uniform_tensor(rng, &[input, output], 1.0 / (input as f64).sqrt())?,
            Init::Zeros => Tensor::zeros(&[input, output]),
        };
        let weight = store.add(format!("{name}.w"), w)?;
        let bias = store.add(format!("{name}.b"), Tensor::zeros(&[output]))?;
        Ok(Dense {
            weight,
            bias,
            input,
            output,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }
}

/// Dense layers with a shared hidden activation and a linear final layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub hidden_act: Act,
}

impl Mlp {
    /// `sizes = [in, h1, ..., out]`. The last layer is initialised with `last_init`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        sizes: &[usize],
        last_init: Init,
        rng: &mut RngState,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Config(format!("{name}: an MLP needs at least two sizes")));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let init = if i + 1 == n { last_init } else { Init::Uniform };
                Dense::new(store, &format!("{name}.{i}"), sizes[i], sizes[i + 1], init, rng)
            })
            .collect::<Result<_>>()?;
        Ok(Mlp {
            layers,
            hidden_act: Act::Tanh,
        })
    }

    pub fn forward(&self, tape: &mut Tape, mut x: Var) -> Result<Var> {
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, x)?;
            if i + 1 < n && self.hidden_act == Act::Tanh {
                x = tape.tanh(x)?;
            }
        }
        Ok(x)
    }
}

/// GRU parameter handles. Input weights are `[C, H]`, recurrent weights `[H, H]`,
/// biases `[H]`.
#[derive(Debug, Clone)]
pub struct GruParams {
    pub w_y: ParamId,
    pub u_y: ParamId,
    pub b_y: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
}

impl GruParams {
    pub fn all(&self) -> [ParamId; 9] {
        [
            self.w_y, self.u_y, self.b_y, self.w_r, self.u_r, self.b_r, self.w_h, self.u_h, self.b_h,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct Gru {
    pub input: usize,
    pub hidden: usize,
    pub params: GruParams,
}

impl Gru {
    /// Weights uniform in `±1/√H`, biases zero.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut RngState,
    ) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(Error::Config(format!("{name}: GRU sizes must be positive")));
        }
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut add = |suffix: &str, shape: &[usize], random: bool| -> Result<ParamId> {
            let t = if random {
                uniform_tensor(rng, shape, bound)?
            } else {
                Tensor::zeros(shape)
            };
            store.add(format!("{name}.{suffix}"), t)
        };
        let params = GruParams {
            w_y: add("w_y", &[input, hidden], true)?,
            u_y: add("u_y", &[hidden, hidden], true)?,
            b_y: add("b_y", &[hidden], false)?,
            w_r: add("w_r", &[input, hidden], true)?,
            u_r: add("u_r", &[hidden, hidden], true)?,
            b_r: add("b_r", &[hidden], false)?,
            w_h: add("w_h", &[input, hidden], true)?,
            u_h: add("u_h", &[hidden, hidden], true)?,
            b_h: add("b_h", &[hidden], false)?,
        };
        Ok(Gru {
            input,
            hidden,
            params,
        })
    }

    /// One recurrence step on a batch: `h_prev[N, H]`, `x[N, C]` → `h[N, H]`.
    ///
    /// ```text
    /// y = σ(x W_y + h U_y + b_y)
    /// r = σ(x W_r + h U_r + b_r)
    /// h' = (1 - y) ⊙ h + y ⊙ tanh(x W_h + (r ⊙ h) U_h + b_h)
    /// ```
    pub fn step(&self, tape: &mut Tape, h_prev: Var, x: Var) -> Result<Var> {
        let (hr, hc) = tape.value(h_prev).dims2();
        let (xr, xc) = tape.value(x).dims2();
        if hc != self.hidden || xc != self.input || hr != xr {
            return Err(Error::dim(
                "gru_update",
                format!(
                    "hidden {:?} and input {:?} for a GRU with C = {}, H = {}",
                    tape.shape(h_prev),
                    tape.shape(x),
                    self.input,
                    self.hidden
                ),
            ));
        }
        let p = &self.params;
        let gate = |tape: &mut Tape, w: ParamId, u: ParamId, b: ParamId, h: Var| -> Result<Var> {
            let w = tape.param(w);
            let u = tape.param(u);
            let b = tape.param(b);
            let xw = tape.matmul(x, w)?;
            let hu = tape.matmul(h, u)?;
            let s = tape.add(xw, hu)?;
            tape.add_row(s, b)
        };
        let y_pre = gate(tape, p.w_y, p.u_y, p.b_y, h_prev)?;
        let y = tape.logistic(y_pre)?;
        let r_pre = gate(tape, p.w_r, p.u_r, p.b_r, h_prev)?;
        let r = tape.logistic(r_pre)?;
        let rh = tape.mul(r, h_prev)?;
        let c_pre = gate(tape, p.w_h, p.u_h, p.b_h, rh)?;
        let c = tape.tanh(c_pre)?;
        let keep = tape.one_minus(y)?;
        let old = tape.mul(keep, h_prev)?;
        let new = tape.mul(y, c)?;
        tape.add(old, new)
    }
}

/// Plain (non-recorded) GRU update for a single row.
pub fn gru_update(store: &ParamStore, gru: &Gru, h_prev: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let mut tape = Tape::new(store);
    let h = tape.constant(Tensor::row(h_prev.to_vec())?);
    let xv = tape.constant(Tensor::row(x.to_vec())?);
    let out = gru.step(&mut tape, h, xv)?;
    Ok(tape.value(out).data().to_vec())
}
