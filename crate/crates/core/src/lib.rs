//! Simulation laboratory for safe reinforcement learning in non-stationary
//! episodic constrained MDPs.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] – finite episodic CMDPs, policies, exact evaluation.
//! * [`kernel`] – linear-kernel view of a model (features and parameters).
//! * [`format`] – versioned plain-text serialization of models and sequences.
//! * [`env_gen`] – drifting CMDP sequences and variation-budget measurement.
//! * [`lp`], [`oracle`] – occupancy-measure LP solver for the hindsight optimum.
//! * [`policy_eval`] – optimistic sliding-window evaluators (tabular counts, LSTD).
//! * [`learner`] – the restarted optimistic primal-dual policy optimizer.
//! * [`metrics`] – dynamic regret and long-run constraint violation.
//! * [`harness`] – config-driven experiments, CSV/JSON outputs, plot data.
//!
//! Step indices are 0-based throughout (`h = 0` is the first step); episode
//! indices `m` are 1-based to match the restart arithmetic.

pub mod env_gen;
pub mod error;
pub mod format;
pub mod harness;
pub mod kernel;
pub mod learner;
pub mod lp;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod policy_eval;
pub mod rng;

pub use error::{Error, Result};
