//! Desk-scale laboratory for force-guided peg-in-hole assembly control.
//!
//! The crate simulates quasi-static insertion of columnar pegs with arbitrary
//! star-shaped cross-sections, implements a model-hybrid compliance controller
//! (analytic decoupling + proportional compliance law + an RL agent that
//! revises the gains online), reconfigures compliance gains across object
//! geometries through a stiffness-product invariance, and transfers trained
//! agents between tasks with similarity-weighted per-dimension policy
//! distillation.
//!
//! Module map:
//! - [`geometry`]: cross-section boundaries, centroids, radial sampling and
//!   angular quadrature.
//! - [`plant`]: penalty-contact wrench integration, frame couplings, and the
//!   quasi-static state update.
//! - [`controller`]: decoupling transforms, compliance laws, depth estimation.
//! - [`reconfig`]: numerical contact stiffness, shape scales, and gain
//!   reconfiguration between tasks.
//! - [`env`]: the MDP wrapper (state/action/reward, episodes, safety).
//! - [`rl`]: a compact deterministic actor-critic trainer with replay buffer
//!   and target networks.
//! - [`transfer`]: dimensional similarity evaluation and weighted
//!   distillation losses on top of the trainer.

pub mod controller;
pub mod env;
pub mod geometry;
pub mod plant;
pub mod reconfig;
pub mod rl;
pub mod transfer;

pub use geometry::CrossSection;
pub use plant::{PlantParams, PoseState, Wrench};
