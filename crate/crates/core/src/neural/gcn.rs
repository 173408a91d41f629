//! Graph convolution with a nonlocal (graph-mean) channel block.
//!
//! Each layer maps `N x c_in` node features to `N x c_out`:
//!
//! ```text
//! X' = act( Â [X ‖ 1 mean(X)] W + 1 b )
//! ```
//!
//! where `mean(X)` is the channel-wise average over all nodes, so every node
//! sees the whole graph at every layer. `W` is stored as one
//! `(2 c_in) x c_out` matrix; the product is evaluated as
//! `Â (X W_top + 1 (mean(X) W_bottom))`, which is the same linear map
//! without materialising the `N x 2c_in` concatenation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::geometry::{normalized_adjacency, Mesh};
use crate::sparse::CsrMatrix;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub(crate) fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Tanh => g.tanh(x),
            Activation::Relu => g.relu(x),
            Activation::Identity => x,
        }
    }
}

/// Per-mesh quantities reused across every forward pass on that mesh.
#[derive(Clone, Debug)]
pub struct MeshContext {
    pub adjacency: Arc<CsrMatrix>,
    pub coords: Tensor,
}

impl MeshContext {
    pub fn new(mesh: &Mesh) -> Self {
        Self {
            adjacency: normalized_adjacency(mesh).matrix,
            coords: mesh.coords_tensor(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcnNonlocalLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl GcnNonlocalLayer {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (r, c) = weight.require_rank2("gcn-layer")?;
        if r % 2 != 0 || bias.shape() != [1, c] {
            return Err(Error::shape(
                "gcn-layer",
                format!("weight {:?} with bias {:?}", weight.shape(), bias.shape()),
            ));
        }
        Ok(Self { weight, bias })
    }

    pub fn c_in(&self) -> usize {
        self.weight.rows() / 2
    }

    pub fn c_out(&self) -> usize {
        self.weight.cols()
    }
}

/// Records one nonlocal layer on the tape.
pub fn nonlocal_layer(
    g: &mut Graph,
    adjacency: &Arc<CsrMatrix>,
    x: Var,
    weight: Var,
    bias: Var,
    act: Activation,
) -> Result<Var> {
    let (n, c_in) = g.value(x).require_rank2("gcn-layer")?;
    let (wr, _) = g.value(weight).require_rank2("gcn-layer")?;
    if wr != 2 * c_in {
        return Err(Error::shape("gcn-layer", format!("features have {c_in} channels, weight has {wr} rows")));
    }
    if adjacency.n_rows() != n {
        return Err(Error::shape("gcn-layer", format!("operator of size {} on {n} nodes", adjacency.n_rows())));
    }
    let top: Vec<usize> = (0..c_in).collect();
    let bottom: Vec<usize> = (c_in..2 * c_in).collect();
    let w_top = g.gather_rows(weight, &top)?;
    let w_bottom = g.gather_rows(weight, &bottom)?;
    let local = g.matmul(x, w_top)?;
    let mean = g.reduce_mean(x, 0)?;
    let global = g.matmul(mean, w_bottom)?;
    let global = g.broadcast_row(global, n)?;
    let mixed = g.add(local, global)?;
    let propagated = g.sparse_matmul(adjacency, mixed)?;
    let b = g.broadcast_row(bias, n)?;
    let pre = g.add(propagated, b)?;
    Ok(act.apply(g, pre))
}

/// Evaluates one layer outside of any training graph.
pub fn gcn_nonlocal_layer_apply(
    adjacency: &Arc<CsrMatrix>,
    x: &Tensor,
    layer: &GcnNonlocalLayer,
    act: Activation,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let w = g.constant(layer.weight.clone());
    let b = g.constant(layer.bias.clone());
    let out = nonlocal_layer(&mut g, adjacency, xv, w, b, act)?;
    g.forward(out)
}
