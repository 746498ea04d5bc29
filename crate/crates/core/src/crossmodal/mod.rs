//! Toy-scale cross-modal token interaction and refinement head.
//!
//! Both rasters are cut into non-overlapping patches, linearly embedded and
//! offset by fixed 2-D sinusoidal encodings. Each layer runs radar-to-image
//! and image-to-radar single-head attention from the same layer input, then
//! applies `X <- X + MLP(LN(Z))` to each stream. The concatenated tokens are
//! mean-pooled and mapped to a quaternion, a translation and a confidence.
//!
//! The backward pass is written out by hand; [`gradcheck`] compares it with
//! central differences.

mod attention;
mod container;
mod model;
mod tokens;

pub mod gradcheck;

pub use attention::{gelu, layer_norm, softmax_rows, DirectionCache, DirectionParams, LN_EPS};
pub use container::{read_params, write_params, Manifest, TensorInfo};
pub use model::{
    forward_refine, pool_tokens, refinement_head, CrossModalConfig, CrossModalParams, ForwardTrace,
    HeadGrad, LayerParams, RefinementOutput,
};
pub use tokens::{positional_encoding, tokenize, EmbedParams, Patches, TokenSet};

/// Dense row-major-semantics matrix; rows are tokens.
pub type Mat = nalgebra::DMatrix<f64>;
