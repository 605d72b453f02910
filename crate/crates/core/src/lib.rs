//! Finite Markov decision processes viewed through their linear operators.
//!
//! The crate is organised bottom-up:
//!
//! * [`mdp`]: the MDP data model and the operators built from it (kernel,
//!   policy, Bellman maps, occupancy resolvent, value/Q/advantage functions).
//! * [`metrics`]: the action-space MMD, the weighted policy metric and the
//!   majorization constants derived from them.
//! * [`solvers`]: value/policy iteration and the policy-gradient family
//!   (PPO, mirror descent, OTPG, TRPO, MM-RKHS).
//! * [`verify`]: numerical checks of the perturbation, policy-difference,
//!   directional-derivative and majorization identities.
//! * [`garnet`]: random GARNET instances, trajectory simulation and
//!   Monte-Carlo estimators.
//! * [`lqr`]: the linear-quadratic example as executable checks.
//! * [`bench`]: the experiment harness and its CSV outputs.

pub mod bench;
pub mod error;
pub mod garnet;
pub mod lqr;
pub mod mdp;
pub mod metrics;
pub mod solvers;
pub mod verify;

pub use error::{Error, Result};
pub use mdp::{FiniteMdp, PolicyMatrix, QFn, ValueFn};
pub use metrics::KernelMetric;

/// Deterministic RNG used for every sampling routine in the crate.
pub type SimRng = rand_chacha::ChaCha8Rng;
