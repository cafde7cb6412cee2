//! SO(3)-equivariant switching state-space model for 3D motion prediction.
//!
//! The crate is organised bottom-up:
//!
//! - [`lie`]: matrix Lie groups, generators, the matrix exponential and
//!   composite representations.
//! - [`equivariant`]: equivariant/invariant linear layers obtained as the
//!   nullspace of stacked Lie-algebra constraints, gated nonlinearities and
//!   network assembly.
//! - [`diff`]: reverse-mode differentiation over dense matrices, parameter
//!   storage, the adaptive-moment optimizer and checkpoints.
//! - [`ssm`]: the switching state-space model, its evidence lower bound,
//!   training, per-step inference and rolling prediction.
//! - [`data`]: pendulum simulation, trajectory CSV I/O, splits and rotations.
//! - [`eval`]: NRMSE, regular-vs-rotated evaluation and plot data.
//! - [`cli`]: the `eqssm` command-line entry point.

pub mod cli;
pub mod data;
pub mod diff;
pub mod equivariant;
pub mod error;
pub mod eval;
pub mod lie;
pub mod ssm;

pub use error::{Error, Result};
