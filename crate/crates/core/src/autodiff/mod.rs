//! Tape-based reverse-mode automatic differentiation over dense `f64`
//! tensors.
//!
//! A [`Graph`] is an append-only tape. Every operation evaluates eagerly and,
//! when any input requires gradients, records its inputs so that
//! [`Graph::backward`] can replay it in reverse. Backward is itself written
//! in terms of graph operations: with `create_graph = true` the returned
//! gradients are ordinary graph nodes that can be differentiated again, which
//! is what the inner loop of MAML needs.
//!
//! ```
//! use episodic_core::autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! let grads = g.backward(y, &[x], false).unwrap();
//! assert_eq!(g.value(grads.get(x).unwrap()).item(), 6.0);
//! ```

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::grad_check;
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid tensor shape {shape:?}")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} needs a different number of elements than {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("backward needs a scalar output, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("graph is not topologically ordered at node {node}")]
    Cycle { node: usize },
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("finite-difference step {0} outside [1e-6, 1e-3]")]
    BadEpsilon(f64),
}
