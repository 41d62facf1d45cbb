//! Risk-aware signal temporal logic.
//!
//! Chance and risk predicates over a Gaussian environment are monitored
//! quantitatively, turned into deterministic STL by threshold synthesis, and
//! enforced on a disturbed unicycle with a time-varying control barrier
//! function.

pub mod barrier;
pub mod control;
pub mod determinize;
pub mod logic;
pub mod monitor;
pub mod normal;
pub mod scenario;
pub mod sim;
pub mod stochastics;
