use rand::Rng;

use super::graph::{Graph, NodeId, ParamId};
use super::init::glorot_uniform;
use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::Result;
use crate::scalar::Real;

/// Fully connected network: ReLU hidden layers followed by a linear output layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mlp {
    dims: Vec<usize>,
    layers: Vec<(ParamId, ParamId)>,
}

/// An [`Mlp`] whose parameters are leaves of a specific graph.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    layers: Vec<(NodeId, NodeId)>,
}

impl Mlp {
    /// Registers `dims.len() - 1` layers in `params`: Glorot weights, zero biases.
    pub fn new<T: Real, R: Rng + ?Sized>(params: &mut ParamSet<T>, rng: &mut R, name: &str, dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output sizes");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let wid = params.add(format!("{name}.{i}.weight"), glorot_uniform(rng, w[1], w[0]));
                let bid = params.add(format!("{name}.{i}.bias"), Tensor::zeros(&[w[1]]));
                (wid, bid)
            })
            .collect();
        Self {
            dims: dims.to_vec(),
            layers,
        }
    }

    /// Rebuilds the layer map over tensors already in `params` (checkpoint loading).
    pub fn from_ids(dims: Vec<usize>, layers: Vec<(ParamId, ParamId)>) -> Self {
        Self { dims, layers }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("non-empty dims")
    }

    pub fn weight_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().map(|&(w, _)| w)
    }

    pub fn layer_ids(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    pub fn bind<T: Real>(&self, graph: &mut Graph<T>, params: &ParamSet<T>) -> BoundMlp {
        BoundMlp {
            layers: self
                .layers
                .iter()
                .map(|&(w, b)| (params.leaf(graph, w), params.leaf(graph, b)))
                .collect(),
        }
    }
}

impl BoundMlp {
    pub fn weights(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.layers.iter().map(|&(w, _)| w)
    }

    pub fn forward<T: Real>(&self, graph: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = graph.affine(w, b, h)?;
            if i < last {
                h = graph.relu(h);
            }
        }
        Ok(h)
    }
}
