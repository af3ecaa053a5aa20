//! Adaptive skills over adaptive hyperplane partitions.
//!
//! A set of `2^K` parameterised skills is learned jointly with `K` hyperplanes
//! whose half-space intersections decide where each skill runs. Both are
//! trained by policy-gradient ascent on a single parameter vector.
//!
//! Modules, bottom-up:
//!
//! - [`params`]: dimensions, parameter layout, skill-index bits, trajectories, checkpoints.
//! - [`policy`]: hyperplane sigmoids, Bernoulli skill likelihood, Gibbs intra-skill policy.
//! - [`gradient`]: closed-form score functions, the trajectory estimator, finite-difference checks.
//! - [`envs`]: room-world MDPs, feature builders, task distributions.
//! - [`learner`]: rollouts, the training loop, the linear critic, evaluation, hyperplane flipping.
//! - [`cli`]: configuration files, partition maps, SVG/CSV/JSON artifacts and subcommands.

pub mod cli;
pub mod envs;
pub mod error;
pub mod gradient;
pub mod learner;
pub mod params;
pub mod policy;

pub use error::{AsapError, Result};

/// Seeded generator used for every random draw.
pub type Rng64 = rand_chacha::ChaCha8Rng;
