//! Tensors, a reverse-mode tape, the layer primitives built on it and Adam.

mod adam;
mod conv;
mod gradcheck;
mod graph;
pub mod linalg;
mod ops;
mod params;
mod real;
mod rnn;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use conv::Padding;
pub use gradcheck::{grad_check, grad_check_params, rel_error, GRAD_FLOOR};
pub use graph::{GradSink, Gradients, Graph, NodeId, Var};
pub use params::{glorot, normal, orthogonal, Param, ParamId, ParamStore};
pub use real::Real;
pub use rnn::{Gru, GruState, Linear, Lstm, LstmState};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },
    #[error("{op}: non-finite value in gradient")]
    NonFiniteGrad { op: &'static str },
    #[error("{op}: {detail}")]
    Invalid { op: &'static str, detail: String },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("matrix is singular (|det| = {0:e})")]
    Singular(f64),
}
