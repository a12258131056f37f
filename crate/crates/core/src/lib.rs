//! Time-informed kinodynamic planning on top of a learned invertible Koopman
//! surrogate.
//!
//! The crate is `no_std` (with `alloc`) and contains only the numerical core:
//!
//! * [`dynamics`]: benchmark control systems, RK4 integration and trajectory
//!   datasets.
//! * [`neural`]: dense multilayer perceptrons with explicit reverse-mode
//!   gradients, initialization schemes and Adam.
//! * [`koopman`]: the invertible lifted model (lift, coupling steps in both
//!   directions, recovery, rollouts) and its K-step bidirectional loss.
//! * [`geometry`]: point-cloud convex hulls, a dense simplex LP solver, hull
//!   membership/intersection/chords and hit-and-run sampling.
//! * [`reachability`]: sampled forward/backward flowpipes, adversarial
//!   inflation and the time-informed set.
//! * [`planner`]: SST with time-informed heuristic sampling and pruning, and
//!   the plain SST baseline.
//!
//! File formats, wall clocks and the command-line driver live in the `tis`
//! crate.

#![no_std]
// With std in the graph (tests, the `std` feature) inherent float methods
// shadow the libm-backed trait.
#![cfg_attr(any(test, feature = "std"), allow(unused_imports))]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod dynamics;
mod error;
pub mod geometry;
pub mod koopman;
pub(crate) mod linalg;
pub mod neural;
pub mod planner;
pub mod reachability;

pub use error::{Error, Result};

/// Default random generator used throughout the crate. Seeded explicitly
/// everywhere so every run is reproducible.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate's generator from a seed.
pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

/// Source of elapsed seconds for timing metrics. The core has no clock of
/// its own; callers without one can pass [`NullClock`].
pub trait Clock {
    fn seconds(&self) -> f64;
}

/// A clock that always reads zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct NullClock;

impl Clock for NullClock {
    fn seconds(&self) -> f64 {
        0.0
    }
}
