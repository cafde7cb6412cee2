//! Equivariant and invariant layers from Lie-algebra nullspaces.
//!
//! A linear map `W: V_in -> V_out` is equivariant iff
//! `drho_out(A) W - W drho_in(A) = 0` for every generator `A`. Stacking these
//! constraints on `vec(W)` gives a matrix whose nullspace, solved by dense
//! SVD, is the space of allowed weights. Layers store coefficients in that
//! basis, so equivariance holds for every parameter value.
//!
//! Feature vectors are laid out by [`RepSignature`](crate::lie::RepSignature):
//! rank-ascending, then copy-major.

pub mod basis;
pub mod layers;
pub mod network;

pub use basis::{constraint_matrix, solve_basis, BasisCache, EquivariantBasis, SVD_REL_TOL};
pub use layers::{gated_nonlinearity, DenseLinear, EquivariantLinear, GateLayer, InvariantHead, Layer};
pub use network::{build_network, BoundNetwork, LayerSpec, Network, NetworkSpec, Variant};
