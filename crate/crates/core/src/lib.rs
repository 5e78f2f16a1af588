//! A small CPU deep-learning framework.
//!
//! Graphs are built from [`graph::Variable`]s with the functions in
//! [`functions`] and the parameter-owning layers in [`parametric`]. The same
//! code runs define-then-run or define-by-run depending on the thread's
//! [`graph::ExecutionContext`].

pub mod cli;
pub mod communicator;
pub mod data;
pub mod error;
pub mod functions;
pub mod graph;
pub mod models;
pub mod nnp;
pub mod parameters;
pub mod parametric;
pub mod solver;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{ExecutionContext, ExecutionMode, TypeConfig, Variable};
pub use parameters::ParameterRegistry;
pub use tensor::{Dtype, NdArray};
