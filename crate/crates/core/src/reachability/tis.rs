//! The time-informed set: forward and backward flowpipes paired on the
//! time grid for a given cost.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::cell::RefCell;
use num_traits::Float;
use rand::Rng;

use super::flowpipe::{adversarial_inflate, extend_flowpipe, propagate, Flowpipe, InflateConfig, Propagator};
use super::sets::{sample_tuples_mixed, ControlSampling, InitialSet};
use crate::dynamics::SystemSpec;
use crate::geometry::{hnr_chain, interior_start, HnrConfig, PointCloudHull};
use crate::koopman::Direction;
use crate::{Clock, Error, Result};

/// Settings for building a time-informed set.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReachConfig {
    /// Tuples per flowpipe before inflation.
    pub samples: usize,
    pub eta_forward: f64,
    pub eta_backward: f64,
    pub rounds: usize,
    pub normalize_grad: bool,
    pub sampling: ControlSampling,
    /// Share of the tuples whose state is drawn on the boundary of the
    /// start or goal set.
    #[cfg_attr(feature = "serde", serde(default))]
    pub boundary_fraction: f64,
    /// Longest backward horizon searched for the start state (seconds).
    pub horizon: f64,
    /// Hull membership tolerance.
    pub tol: f64,
}

impl Default for ReachConfig {
    fn default() -> Self {
        Self {
            samples: 1000,
            eta_forward: 0.015,
            eta_backward: 0.04,
            rounds: 1,
            normalize_grad: false,
            sampling: ControlSampling::default(),
            boundary_fraction: 0.1,
            horizon: 5.0,
            tol: crate::geometry::DEFAULT_TOL,
        }
    }
}

impl ReachConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::Config("samples must be positive".into()));
        }
        for eta in [self.eta_forward, self.eta_backward] {
            if !(eta >= 0.0 && eta.is_finite()) {
                return Err(Error::Config("inflation steps must be finite and non-negative".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.boundary_fraction) {
            return Err(Error::Config("boundary fraction must lie in [0, 1]".into()));
        }
        if !(self.horizon > 0.0 && self.tol >= 0.0) {
            return Err(Error::Config("horizon must be positive and tol non-negative".into()));
        }
        self.sampling.validate()
    }

    fn inflate(&self, direction: Direction) -> InflateConfig {
        let eta = match direction {
            Direction::Forward => self.eta_forward,
            Direction::Backward => self.eta_backward,
        };
        InflateConfig { eta, rounds: self.rounds, normalize_grad: self.normalize_grad }
    }
}

/// Wall-clock seconds spent in each phase of a build.
#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TisTimings {
    pub backward: f64,
    pub backward_inflate: f64,
    pub forward: f64,
    pub forward_inflate: f64,
}

/// Forward slice `i` (time `i·dt` after the start) paired with backward
/// slices `0..=cost_steps - i`, each a hull of sampled states.
#[derive(Clone, Debug)]
pub struct TimeInformedSet {
    cost_steps: usize,
    dt: f64,
    tol: f64,
    pub forward: Flowpipe,
    pub backward: Flowpipe,
    fwd_hulls: Vec<PointCloudHull>,
    bwd_hulls: Vec<PointCloudHull>,
    start: InitialSet,
    config: ReachConfig,
    witnesses: RefCell<BTreeMap<(usize, usize), Option<Vec<f64>>>>,
    pub timings: TisTimings,
}

fn reduce_all(slices: &[PointCloudHull]) -> Result<Vec<PointCloudHull>> {
    slices.iter().map(|s| s.reduced()).collect()
}

fn grid_steps(cost: f64, dt: f64) -> usize {
    (cost / dt).round() as usize
}

/// Backward flowpipe from `goal` over `config.horizon`, and the first slice
/// index whose hull contains `x0`.
pub fn backward_search<P: Propagator + ?Sized, R: Rng + ?Sized>(
    prop: &P,
    spec: &SystemSpec,
    x0: &[f64],
    goal: &InitialSet,
    config: &ReachConfig,
    rng: &mut R,
) -> Result<(Flowpipe, Vec<PointCloudHull>, Option<usize>)> {
    let steps = (config.horizon / spec.dt).ceil() as usize;
    let tuples = sample_tuples_mixed(goal, spec, config.samples, steps, config.sampling, config.boundary_fraction, rng)?;
    let fp = propagate(prop, &tuples, Direction::Backward, spec.dt)?;
    let hulls = reduce_all(&fp.slices)?;
    let mut hit = None;
    for (j, h) in hulls.iter().enumerate().skip(1) {
        if h.contains(x0, config.tol)? {
            hit = Some(j);
            break;
        }
    }
    Ok((fp, hulls, hit))
}

/// Estimates the minimal time cost from `x0` to `goal` by backward
/// containment, then assembles and inflates both flowpipes.
pub fn build_tis<P: Propagator + ?Sized, R: Rng + ?Sized>(
    prop: &P,
    spec: &SystemSpec,
    x0: &[f64],
    goal: &InitialSet,
    config: &ReachConfig,
    clock: &dyn Clock,
    rng: &mut R,
) -> Result<TimeInformedSet> {
    config.validate()?;
    goal.validate(spec)?;
    if x0.len() != spec.n {
        return Err(Error::Shape { expected: spec.n, got: x0.len() });
    }
    let start = InitialSet::point(x0.to_vec());
    let mut timings = TisTimings::default();

    let t0 = clock.seconds();
    let (backward, bwd_hulls, hit) = if goal.contains(x0, 0.0) {
        let tuples = sample_tuples_mixed(goal, spec, config.samples, 0, config.sampling, config.boundary_fraction, rng)?;
        let fp = propagate(prop, &tuples, Direction::Backward, spec.dt)?;
        let h = reduce_all(&fp.slices)?;
        (fp, h, Some(0))
    } else {
        backward_search(prop, spec, x0, goal, config, rng)?
    };
    let cost_steps = hit.ok_or(Error::NoFeasibleEstimate { horizon: config.horizon })?;
    let t1 = clock.seconds();
    timings.backward = t1 - t0;
    let backward = if backward.steps() > 0 {
        adversarial_inflate(prop, &backward, goal, spec, &config.inflate(Direction::Backward))?
    } else {
        backward
    };
    let bwd_hulls = if backward.steps() > 0 { reduce_all(&backward.slices)? } else { bwd_hulls };
    let t2 = clock.seconds();
    timings.backward_inflate = t2 - t1;

    let tuples = sample_tuples_mixed(&start, spec, config.samples, cost_steps, config.sampling, config.boundary_fraction, rng)?;
    let forward = propagate(prop, &tuples, Direction::Forward, spec.dt)?;
    let t3 = clock.seconds();
    timings.forward = t3 - t2;
    let forward = if cost_steps > 0 {
        adversarial_inflate(prop, &forward, &start, spec, &config.inflate(Direction::Forward))?
    } else {
        forward
    };
    let fwd_hulls = reduce_all(&forward.slices)?;
    timings.forward_inflate = clock.seconds() - t3;

    Ok(TimeInformedSet {
        cost_steps,
        dt: spec.dt,
        tol: config.tol,
        forward,
        backward,
        fwd_hulls,
        bwd_hulls,
        start,
        config: config.clone(),
        witnesses: RefCell::new(BTreeMap::new()),
        timings,
    })
}

impl TimeInformedSet {
    pub fn cost(&self) -> f64 {
        self.cost_steps as f64 * self.dt
    }

    pub fn cost_steps(&self) -> usize {
        self.cost_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// Zero cost: the start already lies in the goal set.
    pub fn is_degenerate(&self) -> bool {
        self.cost_steps == 0
    }

    pub fn forward_hull(&self, i: usize) -> Option<&PointCloudHull> {
        self.fwd_hulls.get(i)
    }

    pub fn backward_hull(&self, j: usize) -> Option<&PointCloudHull> {
        self.bwd_hulls.get(j)
    }

    /// Largest backward index paired with forward slice `i`, if any.
    pub fn max_backward(&self, i: usize) -> Option<usize> {
        if i > self.cost_steps || i >= self.fwd_hulls.len() {
            return None;
        }
        Some((self.cost_steps - i).min(self.bwd_hulls.len() - 1))
    }

    /// `(i, max j)` for every forward slice of the current cost.
    pub fn pairing(&self) -> Vec<(usize, usize)> {
        (0..=self.cost_steps).filter_map(|i| self.max_backward(i).map(|j| (i, j))).collect()
    }

    /// A point in `Co(F_i) ∩ Co(B_j)`, memoized.
    pub fn intersection(&self, i: usize, j: usize) -> Result<Option<Vec<f64>>> {
        if let Some(w) = self.witnesses.borrow().get(&(i, j)) {
            return Ok(w.clone());
        }
        let (f, b) = match (self.fwd_hulls.get(i), self.bwd_hulls.get(j)) {
            (Some(f), Some(b)) => (f, b),
            _ => return Ok(None),
        };
        let w = f.intersection_witness(b, self.tol)?;
        self.witnesses.borrow_mut().insert((i, j), w.clone());
        Ok(w)
    }

    /// Backward indices scanned from the largest paired one downward while
    /// the pairwise intersection stays non-empty.
    pub fn feasible_backward(&self, i: usize) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        if let Some(jmax) = self.max_backward(i) {
            for j in (0..=jmax).rev() {
                if self.intersection(i, j)?.is_none() {
                    break;
                }
                out.push(j);
            }
        }
        Ok(out)
    }

    /// Membership of `x` in forward slice `i` intersected with the union of
    /// its paired backward slices.
    pub fn slice_contains(&self, i: usize, x: &[f64], tol: f64) -> Result<bool> {
        let Some(jmax) = self.max_backward(i) else { return Ok(false) };
        if !self.fwd_hulls[i].contains(x, tol)? {
            return Ok(false);
        }
        for j in 0..=jmax {
            if self.bwd_hulls[j].contains(x, tol)? {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// `count` hit-and-run samples from `Co(F_i) ∩ Co(B_j)`, started from the
    /// centroid average pulled toward the intersection witness.
    pub fn sample_pair<R: Rng + ?Sized>(
        &self,
        i: usize,
        j: usize,
        count: usize,
        hnr: &HnrConfig,
        rng: &mut R,
    ) -> Result<Vec<Vec<f64>>> {
        let w = self.intersection(i, j)?.ok_or(Error::OutsideHull)?;
        let hulls = [&self.fwd_hulls[i], &self.bwd_hulls[j]];
        let start = interior_start(&hulls, &w, 0.5 * hnr.tol)?;
        hnr_chain(&hulls, &start, count, hnr, rng)
    }

    /// Re-pairs for a smaller cost.
    pub fn shrink(&mut self, cost_new: f64) -> Result<()> {
        if !(cost_new > 0.0) || !cost_new.is_finite() {
            return Err(Error::InvalidCost(cost_new));
        }
        let k = grid_steps(cost_new, self.dt);
        if k > self.cost_steps {
            return Err(Error::InvalidCost(cost_new));
        }
        self.cost_steps = k;
        Ok(())
    }

    /// Re-pairs for a larger cost, propagating both flowpipes further when
    /// the stored slices do not reach it. Existing slices, and so all
    /// memoized intersections, are unchanged.
    pub fn expand<P: Propagator + ?Sized, R: Rng + ?Sized>(
        &mut self,
        cost_new: f64,
        prop: &P,
        spec: &SystemSpec,
        rng: &mut R,
    ) -> Result<()> {
        if !(cost_new > 0.0) || !cost_new.is_finite() {
            return Err(Error::InvalidCost(cost_new));
        }
        let k = grid_steps(cost_new, self.dt);
        if k < self.cost_steps {
            return Err(Error::InvalidCost(cost_new));
        }
        if k > self.forward.steps() {
            let extra = k - self.forward.steps();
            self.forward = extend_flowpipe(prop, &self.forward, spec, extra, self.config.sampling, rng)?;
            let fresh = reduce_all(&self.forward.slices[self.fwd_hulls.len()..])?;
            self.fwd_hulls.extend(fresh);
        }
        if k > self.backward.steps() {
            let extra = k - self.backward.steps();
            self.backward = extend_flowpipe(prop, &self.backward, spec, extra, self.config.sampling, rng)?;
            let fresh = reduce_all(&self.backward.slices[self.bwd_hulls.len()..])?;
            self.bwd_hulls.extend(fresh);
        }
        self.cost_steps = k;
        Ok(())
    }

    /// The start set (a single point).
    pub fn start(&self) -> &InitialSet {
        &self.start
    }
}

/// Free-function form of [`TimeInformedSet::shrink`].
pub fn shrink_tis(tis: &TimeInformedSet, cost_new: f64) -> Result<TimeInformedSet> {
    let mut out = tis.clone();
    out.shrink(cost_new)?;
    Ok(out)
}

/// Free-function form of [`TimeInformedSet::expand`].
pub fn expand_tis<P: Propagator + ?Sized, R: Rng + ?Sized>(
    tis: &TimeInformedSet,
    cost_new: f64,
    prop: &P,
    spec: &SystemSpec,
    rng: &mut R,
) -> Result<TimeInformedSet> {
    let mut out = tis.clone();
    out.expand(cost_new, prop, spec, rng)?;
    Ok(out)
}
