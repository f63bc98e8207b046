//! Neural approximation of minimum-payoff Hamilton-Jacobi-Isaacs values.
//!
//! The value function `V(x, t)` of a two-player reachability game is
//! approximated by `V(x, 0) + t * N(x, t)` where `N` is a small feedforward
//! network. Training alternates between generating regression targets from
//! one-step minimax rollouts of the current approximation and fitting the
//! network to them with momentum SGD. A Lax-Friedrichs grid solver provides
//! reference values for low-dimensional systems.

pub mod cli;
pub mod error;
pub mod gridsolver;
pub mod metrics;
pub mod minimax;
pub mod network;
pub mod systems;
pub mod trainer;

pub use error::{Error, Result};
pub use gridsolver::{GridField, GridSpec};
pub use metrics::{Evaluator, ReferenceSet};
pub use minimax::{hamiltonian, optimal_inputs, rk4_step, InputPair, Integrator};
pub use network::{Activation, Architecture, Network};
pub use systems::{Axis, StateVector, SystemSpec};
pub use trainer::{run_parallel, train, train_residual_baseline, RunLog, TrainConfig};
