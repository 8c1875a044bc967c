use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Init, Mlp};
use crate::numeric::{ParamStore, RngState, Tape, Tensor, Var};

/// Layer family of the autoencoder. Only dense layers exist today; the tag is
/// carried in checkpoints so other families can be added later.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoencoderKind {
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderSpec {
    pub kind: AutoencoderKind,
    pub grid: usize,
    pub hidden: usize,
    pub latent: usize,
}

impl AutoencoderSpec {
    pub fn dense(grid: usize) -> Self {
        AutoencoderSpec {
            kind: AutoencoderKind::Dense,
            grid,
            hidden: 64,
            latent: 32,
        }
    }
}

/// `G² → hidden → latent` encoder and its mirror, tanh between layers.
#[derive(Debug, Clone)]
pub struct DenseAutoencoder {
    pub spec: AutoencoderSpec,
    pub encoder: Mlp,
    pub decoder: Mlp,
}

impl DenseAutoencoder {
    pub fn new(store: &mut ParamStore, spec: AutoencoderSpec, rng: &mut RngState) -> Result<Self> {
        if spec.grid == 0 || spec.hidden == 0 || spec.latent == 0 {
            return Err(Error::Config("autoencoder sizes must be positive".into()));
        }
        let cells = spec.grid * spec.grid;
        let encoder = Mlp::new(store, "ae.enc", &[cells, spec.hidden, spec.latent], Init::Uniform, rng)?;
        let decoder = Mlp::new(store, "ae.dec", &[spec.latent, spec.hidden, cells], Init::Uniform, rng)?;
        Ok(DenseAutoencoder {
            spec,
            encoder,
            decoder,
        })
    }

    pub fn cells(&self) -> usize {
        self.spec.grid * self.spec.grid
    }

    fn flatten(&self, field: &Tensor) -> Result<Tensor> {
        let g = self.spec.grid;
        let ok = match field.shape() {
            [r, c] => *r == g && *c == g,
            [n] => *n == g * g,
            _ => false,
        };
        if !ok {
            return Err(Error::dim(
                "encode",
                format!("field {:?} for a {g}x{g} grid", field.shape()),
            ));
        }
        field.reshape(vec![1, g * g])
    }

    pub fn encode(&self, store: &ParamStore, field: &Tensor) -> Result<Vec<f64>> {
        let x = self.flatten(field)?;
        let mut tape = Tape::new(store);
        let x = tape.constant(x);
        let z = self.encoder.forward(&mut tape, x)?;
        Ok(tape.value(z).data().to_vec())
    }

    pub fn decode(&self, store: &ParamStore, latent: &[f64]) -> Result<Tensor> {
        if latent.len() != self.spec.latent {
            return Err(Error::dim(
                "decode",
                format!("latent of length {} for width {}", latent.len(), self.spec.latent),
            ));
        }
        let mut tape = Tape::new(store);
        let z = tape.constant(Tensor::row(latent.to_vec())?);
        let x = self.decoder.forward(&mut tape, z)?;
        let g = self.spec.grid;
        tape.value(x).reshape(vec![g, g])
    }

    /// Batched encoder: `x[N, G²] → [N, latent]`.
    pub fn encode_tape(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        if tape.value(x).cols() != self.cells() {
            return Err(Error::dim(
                "encode",
                format!("{:?} for {} cells", tape.shape(x), self.cells()),
            ));
        }
        self.encoder.forward(tape, x)
    }

    pub fn decode_tape(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        self.decoder.forward(tape, z)
    }
}
