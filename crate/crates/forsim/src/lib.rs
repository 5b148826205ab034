//! Deterministic multi-agent traffic forward simulation.
//!
//! The crate is organized around a stepwise virtual rollout engine: a traffic
//! agent ("center" agent) tracks candidate trajectories through a PID
//! controller and a kinematic bicycle model, other agents advance through
//! constant-action or learned-prediction paradigms, and groups of rollout
//! branches are scored with a stepwise reward model to fine-tune a linear
//! candidate-scoring policy with a group-relative, dual-clipped objective.
//!
//! Entry points:
//! - [`world`]: scenario files, maps, agent states, global configuration.
//! - [`dynamics`]: bicycle model, PID tracking, the one-step propagator.
//! - [`policy`]: lattice candidate generation and the linear scoring head.
//! - [`selection`]: the three center-agent candidate-selection paradigms.
//! - [`agents`]: the three other-agent rollout paradigms and the trainable
//!   predictor with its composite loss.
//! - [`rollout`]: the forward-simulation engine unrolling one branch per
//!   seed candidate.
//! - [`optimization`]: rewards, group-relative advantages, dual-clip
//!   surrogate, and the outer training loop.
//! - [`metrics`]: kinematic / interaction / map / comfort metric suite.
//! - [`cli`]: the `forsim` command-line surface.

pub mod agents;
pub mod cli;
pub mod dynamics;
pub mod fixtures;
pub mod geom;
pub mod metrics;
pub mod optimization;
pub mod policy;
pub mod rollout;
pub mod selection;
pub mod world;
