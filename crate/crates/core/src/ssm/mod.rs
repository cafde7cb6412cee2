//! Switching state-space model with equivariant transition and emission
//! networks and invariant switch networks.
//!
//! Generative model, for every sequence:
//! - `p(s_t | s_{t-1}, z_{t-1}) = Cat(pi^{s_{t-1}}(z_{t-1}))`, `p(s_0)` uniform;
//! - `p(z_t | z_{t-lags}, s_t) = N(mu^{s_t}(...), sigma^{s_t}(...)^2)`, and
//!   `N(0, I)` before the first full lag window;
//! - `p(x_t | z_t) = N(mu_x(z_t), sigma_x^2 I)`.
//!
//! Inference is mean-field: a free Gaussian per timestep and a state posterior
//! computed from the model (see [`elbo`]).

pub mod config;
pub mod elbo;
pub mod infer;
pub mod model;
pub mod train;

pub use config::ModelConfig;
pub use elbo::{posterior_step, sequence_elbo, ElboTerms, SequenceElbo};
pub use infer::{emission_jacobian, infer_step, most_probable, rolling_predict, InferState, Prediction};
pub use model::{emission_spec, switch_spec, transition_spec, BoundModel, Model};
pub use train::{evaluate_elbo, initial_means, train, TrainOutput, Variational};
