//! Double-precision-first tensors, reverse-mode differentiation with a
//! recordable tangent pass, and the Adam optimizer.

mod adam;
mod graph;
mod init;
mod mlp;
mod params;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use graph::{Gradients, Graph, NodeId, ParamId};
pub use init::glorot_uniform;
pub use mlp::{BoundMlp, Mlp};
pub use params::ParamSet;
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
