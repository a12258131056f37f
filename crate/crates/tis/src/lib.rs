//! File formats, wall-clock timing, reports and the command-line driver for
//! [`tis_core`].

pub mod cli;
pub mod config;
mod error;
pub mod formats;
pub mod report;

pub use error::{Error, Result};
pub use tis_core;

use std::time::Instant;

/// Seconds since construction.
#[derive(Clone, Copy, Debug)]
pub struct WallClock(Instant);

impl WallClock {
    pub fn start() -> Self {
        Self(Instant::now())
    }
}

impl tis_core::Clock for WallClock {
    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}
