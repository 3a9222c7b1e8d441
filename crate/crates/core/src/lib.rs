//! Monte Carlo laboratory for random walks in random environments.
//!
//! The crate simulates nearest-neighbour (and general bounded-step) walks
//! whose step probabilities are drawn site by site from an i.i.d. random
//! environment, with Dirichlet environments as the primary example. On top of
//! the simulator it provides the directional regeneration structure of a
//! single walk, the joint regeneration structure of a pair of walks sharing
//! an environment, intersection counting for such pairs, and the scaled-path
//! estimators and diagnostics used to check diffusive behaviour empirically:
//! velocity and covariance from regeneration blocks, environment-variance
//! decay along a geometric stage sequence, heavy-tail index estimation for
//! regeneration times, and endpoint normality within a fixed environment.
//!
//! Everything is driven by explicit 64-bit seeds through counter-based
//! streams: environments are pure functions of (seed, site), walks are pure
//! functions of their seeds, and every experiment is replayable bit for bit.
//!
//! The `rwre` binary runs the named experiments from JSON configs; see the
//! [`experiment`] module.

pub mod clt;
pub mod env;
pub mod error;
pub mod experiment;
pub mod intersect;
pub mod joint;
pub mod regen;
pub mod rng;
pub mod stats;
pub mod walk;

pub use clt::{ScaledPath, TestFunctional, VelocityEstimate};
pub use env::{
    kappa, sample_dirichlet, t_gamma_sufficient, DirichletParams, EnvironmentKind, EnvironmentSpec,
    Point, ProbVector, QuenchedEnvironment, StepSupport,
};
pub use error::{Error, Result};
pub use joint::JointRegenRecord;
pub use regen::{BlockSummary, DirectionSpec, RegenerationRecord};
pub use stats::EstimateWithCi;
pub use walk::{PairMode, Trajectory};
