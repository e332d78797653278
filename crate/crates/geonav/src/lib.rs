//! Desk-scale geomagnetic navigation laboratory.
//!
//! The crate provides the pieces needed to study how well learned geomagnetic
//! navigation strategies transfer between regions:
//!
//! - [`field`] — geomagnetic element math plus three field backends (ingested
//!   grid, analytic tilted dipole, synthetic linear test field).
//! - [`env`] — a goal-conditioned navigation environment over any field
//!   backend: planar kinematics, the normalized element-deficit objective,
//!   task generation, and episode lifecycle.
//! - [`reward`] — sparse / extrinsic / shaped reward variants, including the
//!   parallel-approach heading prediction used as an intrinsic signal.
//! - [`neural`] — a small dense-network core (forward, exact reverse-mode
//!   gradients, Adam, Polyak tracking) with no external learning framework.
//! - [`td3`] — a twin-critic delayed-policy-update trainer binding the
//!   networks to the environment.
//! - [`distill`] — multi-teacher policy distillation into one student actor.
//! - [`baselines`] — PSO / DE / GA / AFSA per-step heading search over the
//!   same objective.
//! - [`eval`] — task batteries and navigation metrics (SR, SPL, heading
//!   deviation, NE, TNT) with CSV report emission.
//! - [`config`] / [`scenario`] — declarative run configuration and scripted
//!   experiment scenarios with expected-outcome assertions.
//!
//! Batteries, dataset collection, and multi-seed experiments are data-parallel
//! via rayon when the default `parallel` feature is enabled; every parallel
//! code path has a sequential twin that produces bit-identical output, so the
//! feature only affects wall time.

pub mod baselines;
pub mod config;
pub mod distill;
pub mod env;
pub mod error;
pub mod eval;
pub mod field;
pub mod geo;
pub mod neural;
pub mod par;
pub mod reward;
pub mod rng;
pub mod scenario;
pub mod td3;

pub use error::{Error, Result};
