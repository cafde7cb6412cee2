//! Reverse-mode differentiation, parameter storage, optimization and
//! checkpointing.

pub mod backend;
pub mod checkpoint;
pub mod dist;
pub mod gradcheck;
pub mod kernels;
pub mod params;
pub mod tape;

pub use backend::{Backend, Eval, Graph};
pub use params::{AdamConfig, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
