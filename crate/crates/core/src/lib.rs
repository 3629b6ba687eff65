//! Multi-user DASH rate adaptation as a non-cooperative game.
//!
//! * [`model`]: quality curve, estimated buffer and per-user utility.
//! * [`game`]: first-order conditions, best responses and equilibrium solvers.
//! * [`adapt`]: the distributed sub-gradient iteration and its payoff protocol.
//! * [`stability`]: Jacobians of the update map and eigenvalue tests.
//! * [`netsim`]: fluid shared-bottleneck simulator and scenario files.
//! * [`baselines`]: quality-first and buffer-first reference policies.
//! * [`metrics`]: trace statistics and composite QoE scores.
//! * [`cli`]: the command implementations behind the `dashgame` binary.

pub mod adapt;
pub mod baselines;
pub mod cli;
pub mod error;
pub mod game;
pub mod metrics;
pub mod model;
pub mod netsim;
pub mod stability;

pub use error::{Error, Result};
