//! Dense reverse-mode automatic differentiation over `f64` matrices.
//!
//! Build a [`Graph`] out of named leaves, constants and primitive ops,
//! evaluate it against a set of leaf bindings, then call
//! [`Graph::backprop`] on a scalar root:
//!
//! ```
//! use std::collections::BTreeMap;
//! use trimodal_autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.leaf("x");
//! let sq = g.mul(x, x);
//! let loss = g.sum(sq);
//!
//! let mut leaves = BTreeMap::new();
//! leaves.insert("x".to_string(), Tensor::matrix(1, 2, vec![1.0, -3.0]).unwrap());
//! assert_eq!(g.evaluate(loss, &leaves).unwrap().item(), Some(10.0));
//! let grads = g.backprop(loss).unwrap();
//! assert_eq!(grads["x"].data(), &[2.0, -6.0]);
//! ```
//!
//! All reductions run in a fixed left-to-right order, so identical inputs
//! give bitwise-identical values and gradients.

mod error;
mod grad_check;
mod graph;
mod ops;
mod tensor;

pub use error::{AutodiffError, Result};
pub use grad_check::{grad_check, relative_error, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, LeafSource, Node, NodeId};
pub use ops::{gelu, gelu_derivative, Op, NORM_EPSILON};
pub use tensor::Tensor;
