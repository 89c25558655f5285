//! Encode-process-decode graph network built from first principles.

pub mod gradcheck;
pub mod io;
pub mod model;
pub mod params;
pub mod real;

pub use model::{
    accumulate_gradients, backward, cross_entropy, encode_process_decode_forward, forward, forward_tensors,
    full_block_forward, independent_block_forward, predict, predict_bimanual, softmax, softmax_cross_entropy,
    ForwardCache, GraphTensors,
};
pub use params::{BlockParams, Dense, GraphNetWeights, Mlp, ModelConfig};
pub use real::Real;
