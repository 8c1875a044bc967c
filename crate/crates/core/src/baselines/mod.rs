//! Non-flow sequence models: the isotropic-Gaussian recurrent predictor and
//! the dense field autoencoder.

mod autoencoder;
mod rnn;

pub use autoencoder::{AutoencoderKind, AutoencoderSpec, DenseAutoencoder};
pub use rnn::{isotropic_gaussian_log_prob, RnnGaussian, RnnGaussianSpec};
