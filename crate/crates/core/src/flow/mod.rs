//! Invertible layers and their composition into conditional densities.

mod activation;
mod base;
mod coupling;
mod graph;
mod layer;
mod permutation;
mod raf;
mod triangular;

pub use activation::{Activation, DEFAULT_LEAKY_ALPHA, LOGIT_CLAMP};
pub use base::{gaussian_log_prob, StandardNormal, HALF_LN_2PI};
pub use coupling::{Coupling, DEFAULT_NET_WIDTH, SCALE_CLAMP};
pub use graph::{
    Conditioning, FlowGraph, GraphSpec, GraphState, LayerSpec, PermutationKind, Standardizer,
    TapeState,
};
pub use layer::{FlowLayer, Layer};
pub use permutation::Permutation;
pub use raf::RafCell;
pub use triangular::{packed_affine, packed_affine_inverse, packed_log_diag, split_hidden};
