//! Dense arrays, reverse-mode differentiation and seeded random streams.

pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use params::{Gradients, ParamId, ParamStore, Parameter};
pub use rng::{Draw, RngState};
pub use tape::{tri_affine_width, Tape, Var};
pub use tensor::{logistic, softplus, Elementwise, Tensor};
