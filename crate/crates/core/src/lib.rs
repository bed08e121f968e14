//! Signal recovery with deep ReLU generative priors.
//!
//! A generator `G(x) = relu(W_d ... relu(W_1 x))` maps a latent code in
//! `R^k` to a signal in `R^n`. Given indirect observations of `y* = G(x*)`
//! the recovery problems here minimise a loss over the latent code with a
//! subgradient method that also tests the negated iterate at every step.
//!
//! Besides the solvers, the crate measures the deterministic quantities the
//! convergence theory is built on: the weight distribution condition and its
//! range-restricted variant, the restricted isometry of the measurement
//! matrix over the range of `G`, concentration of the local linear maps,
//! and the number of activation patterns on a low-dimensional subspace.
//!
//! Modules:
//!
//! - [`net`]: generator sampling, evaluation, activation masks and `Λ` maps.
//! - [`geometry`]: the distortion matrix `Q_{r,s}`, the angle map `g`,
//!   and the predicted gradient direction `h̃`.
//! - [`conditions`]: sampled and exact estimators for the conditions.
//! - [`solvers`]: recovery instances, losses, subgradients, and the solver.
//! - [`harness`]: experiment sweeps, condition suites, config and CSV output.

mod binfmt;
pub mod conditions;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod net;
pub mod rng;
pub mod solvers;

pub use error::{Error, Result};
pub use net::{GenerativeNet, LinearPath};
pub use solvers::{Instance, InstanceKind, SolveTrace, SolverConfig};
