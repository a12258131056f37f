//! Sampling-based reachability: tuples drawn from a start or goal set are
//! pushed through a propagator in either time direction, the resulting
//! slices are inflated by projected gradient ascent, and forward/backward
//! flowpipes are paired into a time-informed set.

mod flowpipe;
mod sets;
mod tis;

pub use flowpipe::{adversarial_inflate, extend_flowpipe, propagate, Flowpipe, InflateConfig, Propagator, TrueDynamics, CHUNK_ROWS, GRAD_CHUNK_ROWS};
pub use sets::{sample_tuples, sample_tuples_mixed, ControlSampling, InitialSet, Tuples, MAX_REJECTIONS};
pub use tis::{backward_search, build_tis, expand_tis, shrink_tis, ReachConfig, TimeInformedSet, TisTimings};
