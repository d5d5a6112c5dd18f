//! Dense `f64` tensors, a reverse-mode gradient tape, and AdamW.
//!
//! A [`Graph`] is a single-use tape: build it, run ops forward, call
//! [`Graph::backward`] once on a scalar, then read leaf gradients. Parameters
//! live in a [`ParamStore`] that outlives individual tapes, so one model can
//! be evaluated on many tapes (and on many threads, one tape each).
//!
//! ```
//! use ndgrad::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.variable(Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! g.backward(y).unwrap();
//! assert_eq!(g.grad(x).unwrap().data(), &[6.0]);
//! ```

pub mod container;
mod error;
pub mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use optim::{AdamW, AdamWState};
pub use params::{Param, ParamStore};
pub use tensor::Tensor;
