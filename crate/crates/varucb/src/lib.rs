//! Contextual bandits with variance-adaptive confidence widths.
//!
//! The crate is organized bottom-up:
//!
//! - [`linalg`]: dense row-major matrices, rank-one inverse updates,
//!   Mahalanobis norms. Everything downstream assumes these primitives.
//! - [`neural`]: bias-free ReLU feature networks, losses (squared error and
//!   Gaussian likelihood), mini-batch SGD on the feature weights.
//! - [`agents`]: the bandit policies. A shared ridge head over either raw
//!   contexts or learned features, with per-round variance weights, plus
//!   gradient-feature UCB/TS baselines.
//! - [`envs`]: synthetic reward surfaces with controllable noise schedules
//!   and classification datasets replayed as bandit streams.
//! - [`metrics`]: regret accounting, probability-calibration scores,
//!   sharpness, variance-tracking diagnostics.
//! - [`harness`]: config parsing, the agent x seed experiment matrix, CSV /
//!   JSON / SVG outputs.

pub mod agents;
pub mod envs;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod neural;
