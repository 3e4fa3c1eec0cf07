//! Dense fp64 tensors, a reverse-mode tape, and the transformer building
//! blocks the rest of the workspace is assembled from.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod nn;
pub mod optim;
pub mod param;
pub mod rng;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use error::{Result, TensorError};
pub use graph::{Graph, RopeTable, Var};
pub use nn::{Block, LayerNorm, Linear, Mlp, SelfAttention};
pub use optim::{Adam, AdamConfig};
pub use param::{Param, ParamId, ParamStore};
pub use rng::SplitMix64;
pub use tensor::Tensor;
