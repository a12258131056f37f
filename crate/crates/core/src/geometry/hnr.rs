//! Hit-and-run sampling over an intersection of hulls.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use super::hull::PointCloudHull;
use crate::{Error, Result};

/// Chain parameters. `tol` is the membership tolerance the samples must
/// meet; chords are computed at half of it so that accumulated LP roundoff
/// never pushes a sample over.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HnrConfig {
    pub burn_in: usize,
    pub thin: usize,
    pub tol: f64,
    pub max_retries: usize,
}

impl Default for HnrConfig {
    fn default() -> Self {
        Self { burn_in: 50, thin: 5, tol: 1e-7, max_retries: 100 }
    }
}

fn random_direction<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let d: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return d.into_iter().map(|v| v / norm).collect();
        }
    }
}

/// One hit-and-run move from `x`.
fn step<R: Rng + ?Sized>(hulls: &[&PointCloudHull], x: &mut [f64], config: &HnrConfig, rng: &mut R) -> Result<()> {
    let chord_tol = 0.5 * config.tol;
    for _ in 0..config.max_retries {
        let d = random_direction(x.len(), rng);
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for h in hulls {
            let (a, b) = h.chord(x, &d, chord_tol)?;
            lo = lo.max(a);
            hi = hi.min(b);
        }
        if lo > hi {
            continue;
        }
        let t = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        for (xi, di) in x.iter_mut().zip(&d) {
            *xi += t * di;
        }
        return Ok(());
    }
    Err(Error::SamplingStall(config.max_retries))
}

/// Draws `count` samples from the intersection of `hulls`, starting at
/// `x_start` (which must lie in all of them): `burn_in` moves, then every
/// `thin`-th state.
pub fn hnr_chain<R: Rng + ?Sized>(
    hulls: &[&PointCloudHull],
    x_start: &[f64],
    count: usize,
    config: &HnrConfig,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if hulls.is_empty() {
        return Err(Error::Config("hit-and-run needs at least one hull".into()));
    }
    let mut x = x_start.to_vec();
    for _ in 0..config.burn_in {
        step(hulls, &mut x, config, rng)?;
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        for _ in 0..config.thin.max(1) {
            step(hulls, &mut x, config, rng)?;
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// A single sample after burn-in.
pub fn hnr_sample<R: Rng + ?Sized>(
    hulls: &[&PointCloudHull],
    x_start: &[f64],
    config: &HnrConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut out = hnr_chain(hulls, x_start, 1, config, rng)?;
    Ok(out.pop().unwrap_or_else(|| x_start.to_vec()))
}

/// Average of hull centroids, pulled toward `common` (a point known to lie
/// in every hull) by bisection until it lies in all of them.
pub fn interior_start(hulls: &[&PointCloudHull], common: &[f64], tol: f64) -> Result<Vec<f64>> {
    let n = common.len();
    let mut target = vec![0.0; n];
    for h in hulls {
        for (t, c) in target.iter_mut().zip(h.centroid()) {
            *t += c / hulls.len() as f64;
        }
    }
    let inside = |p: &[f64]| -> Result<bool> {
        for h in hulls {
            if !h.contains(p, tol)? {
                return Ok(false);
            }
        }
        Ok(true)
    };
    if inside(&target)? {
        return Ok(target);
    }
    // Largest fraction along common -> target that stays inside.
    let (mut a, mut b) = (0.0, 1.0);
    for _ in 0..30 {
        let mid = 0.5 * (a + b);
        let p: Vec<f64> = common.iter().zip(&target).map(|(c, t)| c + mid * (t - c)).collect();
        if inside(&p)? {
            a = mid;
        } else {
            b = mid;
        }
    }
    // Back off halfway so the start is not on the boundary.
    let f = 0.5 * a;
    Ok(common.iter().zip(&target).map(|(c, t)| c + f * (t - c)).collect())
}
