//! Convex sets represented by point clouds: LP membership, intersection,
//! chords, hit-and-run sampling and planar diagnostics.

mod hnr;
mod hull;
pub mod lp;
mod planar;

pub use hnr::{hnr_chain, hnr_sample, interior_start, HnrConfig};
pub use hull::PointCloudHull;
pub use lp::{lp_solve, LpOutcome, LpProblem, Sense};
pub use planar::{hull_2d, hull_area, polygon_area};

use alloc::vec::Vec;

use crate::Result;

/// Default membership tolerance (L1 distance).
pub const DEFAULT_TOL: f64 = 1e-7;

pub fn hull_contains(hull: &PointCloudHull, x: &[f64], tol: f64) -> Result<bool> {
    hull.contains(x, tol)
}

pub fn hulls_intersect(a: &PointCloudHull, b: &PointCloudHull, tol: f64) -> Result<bool> {
    a.intersects(b, tol)
}

pub fn chord(hull: &PointCloudHull, x: &[f64], direction: &[f64], tol: f64) -> Result<(f64, f64)> {
    hull.chord(x, direction, tol)
}

/// Witness point of a pairwise intersection, if any.
pub fn intersection_point(a: &PointCloudHull, b: &PointCloudHull, tol: f64) -> Result<Option<Vec<f64>>> {
    a.intersection_witness(b, tol)
}
