//! Batched propagation of sampled tuples into time-sliced point clouds, and
//! adversarial inflation of those clouds.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;
use rand::Rng;

use super::sets::{ControlSampling, InitialSet, Tuples};
use crate::dynamics::{step_rk4_into, SystemSpec};
use crate::geometry::PointCloudHull;
use crate::koopman::{step_controls, DikuModel, Direction};
use crate::{Error, Result};

/// Rows per propagation batch.
pub const CHUNK_ROWS: usize = 1024;

/// Rows per gradient batch; bounds the memory held by reverse-mode tapes.
pub const GRAD_CHUNK_ROWS: usize = 128;

/// Something that rolls batches of states forward or backward in time.
pub trait Propagator {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;

    /// Slices `0..=steps` (`rows x n` each) from `x0` (`rows x n`) under
    /// per-row `steps x m` control blocks. Step `k` uses control `k`.
    fn rollout(&self, x0: &[f64], controls: &[f64], steps: usize, direction: Direction) -> Result<Vec<Vec<f64>>>;

    /// Per-row gradient of `(1/T) Σ_{t=1..T} |x_t - centers[t]|²` with
    /// respect to the initial state and the controls. The default uses
    /// central differences over all rows at once.
    fn spread_gradient(
        &self,
        x0: &[f64],
        controls: &[f64],
        steps: usize,
        direction: Direction,
        centers: &[Vec<f64>],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let (n, m) = (self.state_dim(), self.control_dim());
        let rows = x0.len() / n;
        let eval = |x: &[f64], u: &[f64]| -> Result<Vec<f64>> {
            let slices = self.rollout(x, u, steps, direction)?;
            Ok(spread_per_row(&slices, centers, n, rows))
        };
        let h = 1e-6;
        let mut gx = vec![0.0; rows * n];
        for i in 0..n {
            let (mut xp, mut xm) = (x0.to_vec(), x0.to_vec());
            for r in 0..rows {
                xp[r * n + i] += h;
                xm[r * n + i] -= h;
            }
            let (fp, fm) = (eval(&xp, controls)?, eval(&xm, controls)?);
            for r in 0..rows {
                gx[r * n + i] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        let w = steps * m;
        let mut gu = vec![0.0; rows * w];
        for c in 0..w {
            let (mut up, mut um) = (controls.to_vec(), controls.to_vec());
            for r in 0..rows {
                up[r * w + c] += h;
                um[r * w + c] -= h;
            }
            let (fp, fm) = (eval(x0, &up)?, eval(x0, &um)?);
            for r in 0..rows {
                gu[r * w + c] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        Ok((gx, gu))
    }
}

fn spread_per_row(slices: &[Vec<f64>], centers: &[Vec<f64>], n: usize, rows: usize) -> Vec<f64> {
    let steps = slices.len() - 1;
    let mut out = vec![0.0; rows];
    if steps == 0 {
        return out;
    }
    for t in 1..=steps {
        for r in 0..rows {
            let x = &slices[t][r * n..(r + 1) * n];
            out[r] += x.iter().zip(&centers[t]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    out.iter_mut().for_each(|v| *v /= steps as f64);
    out
}

impl Propagator for DikuModel {
    fn state_dim(&self) -> usize {
        self.n()
    }

    fn control_dim(&self) -> usize {
        self.m()
    }

    fn rollout(&self, x0: &[f64], controls: &[f64], steps: usize, direction: Direction) -> Result<Vec<Vec<f64>>> {
        self.propagate(x0, controls, steps, direction)
    }

    fn spread_gradient(
        &self,
        x0: &[f64],
        controls: &[f64],
        steps: usize,
        direction: Direction,
        centers: &[Vec<f64>],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.n();
        let trace = self.trace(x0, controls, steps, direction)?;
        if steps == 0 {
            return Ok((vec![0.0; x0.len()], Vec::new()));
        }
        let scale = 2.0 / steps as f64;
        let grads: Vec<Vec<f64>> = trace
            .states
            .iter()
            .enumerate()
            .map(|(t, s)| {
                if t == 0 {
                    Vec::new()
                } else {
                    s.iter().enumerate().map(|(k, v)| scale * (v - centers[t][k % n])).collect()
                }
            })
            .collect();
        let out = self.reverse(&trace, &grads)?;
        Ok((out.x0, out.controls))
    }
}

/// The system's own dynamics, integrated with RK4. Backward rollouts
/// integrate with a negated step.
#[derive(Clone, Copy, Debug)]
pub struct TrueDynamics<'a> {
    pub spec: &'a SystemSpec,
}

impl Propagator for TrueDynamics<'_> {
    fn state_dim(&self) -> usize {
        self.spec.n
    }

    fn control_dim(&self) -> usize {
        self.spec.m
    }

    fn rollout(&self, x0: &[f64], controls: &[f64], steps: usize, direction: Direction) -> Result<Vec<Vec<f64>>> {
        let (n, m) = (self.spec.n, self.spec.m);
        let rows = x0.len() / n;
        if controls.len() != rows * steps * m {
            return Err(Error::Shape { expected: rows * steps * m, got: controls.len() });
        }
        let h = match direction {
            Direction::Forward => self.spec.dt,
            Direction::Backward => -self.spec.dt,
        };
        let mut out = Vec::with_capacity(steps + 1);
        out.push(x0.to_vec());
        let mut next = vec![0.0; rows * n];
        for k in 0..steps {
            let u = step_controls(controls, rows, steps, m, k);
            let cur = out.last().unwrap();
            for r in 0..rows {
                step_rk4_into(self.spec, &cur[r * n..(r + 1) * n], &u[r * m..(r + 1) * m], h, &mut next[r * n..(r + 1) * n])?;
            }
            out.push(next.clone());
        }
        Ok(out)
    }
}

/// Sampled forward or backward tube: the generating tuples and one point
/// cloud per time slice.
#[derive(Clone, Debug)]
pub struct Flowpipe {
    pub direction: Direction,
    pub dt: f64,
    pub tuples: Tuples,
    /// Slice `k` holds the propagated states after `k` steps, one per tuple.
    pub slices: Vec<PointCloudHull>,
    /// One propagated state per slice (that of the first tuple).
    pub anchors: Vec<Vec<f64>>,
    /// Tuples dropped because their propagation went non-finite.
    pub dropped: usize,
}

impl Flowpipe {
    pub fn steps(&self) -> usize {
        self.slices.len() - 1
    }

    pub fn samples(&self) -> usize {
        self.tuples.len()
    }

    pub fn horizon(&self) -> f64 {
        self.steps() as f64 * self.dt
    }

    pub fn centroids(&self) -> Vec<Vec<f64>> {
        self.slices.iter().map(|s| s.centroid()).collect()
    }
}

/// Rolls `rows` tuples out chunk by chunk. A chunk that fails is retried row
/// by row and the failing rows are dropped. Returns kept row indices.
fn rollout_rows<P: Propagator + ?Sized>(prop: &P, tuples: &Tuples, direction: Direction) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let (n, steps) = (tuples.n, tuples.steps);
    let mut kept = Vec::with_capacity(tuples.len());
    let mut slices: Vec<Vec<f64>> = vec![Vec::with_capacity(tuples.len() * n); steps + 1];
    let finite = |s: &[Vec<f64>]| s.iter().all(|v| v.iter().all(|x| x.is_finite()));
    let mut start = 0;
    while start < tuples.len() {
        let end = (start + CHUNK_ROWS).min(tuples.len());
        let chunk = tuples.slice(start, end);
        match prop.rollout(&chunk.states, &chunk.controls, steps, direction) {
            Ok(s) if finite(&s) => {
                kept.extend(start..end);
                for (dst, src) in slices.iter_mut().zip(s) {
                    dst.extend(src);
                }
            }
            _ => {
                for r in start..end {
                    let one = tuples.slice(r, r + 1);
                    if let Ok(s) = prop.rollout(&one.states, &one.controls, steps, direction) {
                        if finite(&s) {
                            kept.push(r);
                            for (dst, src) in slices.iter_mut().zip(s) {
                                dst.extend(src);
                            }
                        }
                    }
                }
            }
        }
        start = end;
    }
    Ok((kept, slices))
}

fn keep_rows(tuples: &Tuples, kept: &[usize]) -> Tuples {
    let mut out = Tuples { n: tuples.n, m: tuples.m, steps: tuples.steps, states: Vec::new(), controls: Vec::new() };
    for &r in kept {
        out.states.extend_from_slice(tuples.state(r));
        out.controls.extend_from_slice(tuples.controls_of(r));
    }
    out
}

/// Lifts each tuple once and propagates it `tuples.steps` steps.
pub fn propagate<P: Propagator + ?Sized>(prop: &P, tuples: &Tuples, direction: Direction, dt: f64) -> Result<Flowpipe> {
    if tuples.n != prop.state_dim() || tuples.m != prop.control_dim() {
        return Err(Error::Shape { expected: prop.state_dim(), got: tuples.n });
    }
    let (kept, slices) = rollout_rows(prop, tuples, direction)?;
    if kept.is_empty() {
        return Err(Error::NonFinite("every propagated tuple"));
    }
    let dropped = tuples.len() - kept.len();
    let tuples = if dropped == 0 { tuples.clone() } else { keep_rows(tuples, &kept) };
    let n = tuples.n;
    let anchors = slices.iter().map(|s| s[..n].to_vec()).collect();
    let slices = slices.into_iter().map(|s| PointCloudHull::new(n, s)).collect::<Result<Vec<_>>>()?;
    Ok(Flowpipe { direction, dt, tuples, slices, anchors, dropped })
}

/// Inflation settings.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InflateConfig {
    pub eta: f64,
    pub rounds: usize,
    /// Rescale each tuple's gradient to the magnitude of the tuple itself.
    pub normalize_grad: bool,
}

/// Projected gradient ascent on the mean squared distance of each
/// trajectory from the slice centroids, followed by re-propagation and a
/// union with the existing slices. Each round ascends from the tuples added
/// by the previous round.
pub fn adversarial_inflate<P: Propagator + ?Sized>(
    prop: &P,
    flowpipe: &Flowpipe,
    set: &InitialSet,
    spec: &SystemSpec,
    config: &InflateConfig,
) -> Result<Flowpipe> {
    if !(config.eta >= 0.0 && config.eta.is_finite()) {
        return Err(Error::Config("inflation step must be finite and non-negative".into()));
    }
    let (n, m, steps) = (flowpipe.tuples.n, flowpipe.tuples.m, flowpipe.tuples.steps);
    let w = steps * m;
    let mut out = flowpipe.clone();
    let mut generation = flowpipe.tuples.clone();
    for _ in 0..config.rounds {
        let centers = out.centroids();
        let mut next = Tuples { n, m, steps, states: Vec::new(), controls: Vec::new() };
        let mut start = 0;
        while start < generation.len() {
            let end = (start + GRAD_CHUNK_ROWS).min(generation.len());
            let chunk = generation.slice(start, end);
            let grads = prop.spread_gradient(&chunk.states, &chunk.controls, steps, flowpipe.direction, &centers);
            let Ok((gx, gu)) = grads else {
                start = end;
                continue;
            };
            for r in 0..end - start {
                let (gxr, gur) = (&gx[r * n..(r + 1) * n], &gu[r * w..(r + 1) * w]);
                if gxr.iter().chain(gur).any(|g| !g.is_finite()) {
                    continue;
                }
                let (xr, ur) = (chunk.state(r), chunk.controls_of(r));
                let mut step = config.eta;
                if config.normalize_grad {
                    let gnorm = gxr.iter().chain(gur).map(|g| g * g).sum::<f64>().sqrt();
                    let pnorm = xr.iter().chain(ur).map(|p| p * p).sum::<f64>().sqrt();
                    if gnorm > 0.0 {
                        step *= pnorm / gnorm;
                    }
                }
                let mut x: Vec<f64> = xr.iter().zip(gxr).map(|(p, g)| p + step * g).collect();
                set.project(&mut x);
                let mut u: Vec<f64> = ur.iter().zip(gur).map(|(p, g)| p + step * g).collect();
                for c in u.chunks_exact_mut(m) {
                    spec.clamp_control(c);
                }
                next.states.extend(x);
                next.controls.extend(u);
            }
            start = end;
        }
        if next.is_empty() {
            break;
        }
        let fresh = propagate(prop, &next, flowpipe.direction, flowpipe.dt)?;
        for (slice, add) in out.slices.iter_mut().zip(&fresh.slices) {
            *slice = slice.union(add)?;
        }
        out.tuples.append(&fresh.tuples)?;
        out.dropped += fresh.dropped;
        generation = fresh.tuples;
    }
    Ok(out)
}

/// Appends `extra` steps of freshly sampled controls to every tuple and
/// propagates them from the last slice. The existing slices are kept as they
/// are, so hulls built on them stay valid.
pub fn extend_flowpipe<P: Propagator + ?Sized, R: Rng + ?Sized>(
    prop: &P,
    flowpipe: &Flowpipe,
    spec: &SystemSpec,
    extra: usize,
    sampling: ControlSampling,
    rng: &mut R,
) -> Result<Flowpipe> {
    let t = &flowpipe.tuples;
    let steps = t.steps + extra;
    let tail_controls: Vec<f64> = (0..t.len()).flat_map(|_| sampling.sample_sequence(spec, extra, rng)).collect();
    let mut controls = Vec::with_capacity(t.len() * steps * t.m);
    for j in 0..t.len() {
        controls.extend_from_slice(t.controls_of(j));
        controls.extend_from_slice(&tail_controls[j * extra * t.m..(j + 1) * extra * t.m]);
    }
    let tuples = Tuples { n: t.n, m: t.m, steps, states: t.states.clone(), controls };
    // If some row goes non-finite the whole horizon is re-propagated, which
    // drops those rows from the new slices only.
    let last = flowpipe.slices.last().expect("flowpipes have slice 0").points().to_vec();
    let cont = Tuples { n: t.n, m: t.m, steps: extra, states: last, controls: tail_controls };
    let (kept, tail) = rollout_rows(prop, &cont, flowpipe.direction)?;
    if kept.len() < t.len() {
        let mut out = propagate(prop, &tuples, flowpipe.direction, flowpipe.dt)?;
        let keep = flowpipe.slices.len();
        out.slices[..keep].clone_from_slice(&flowpipe.slices);
        out.anchors[..keep].clone_from_slice(&flowpipe.anchors);
        out.dropped += flowpipe.dropped;
        return Ok(out);
    }
    let mut out = flowpipe.clone();
    out.tuples = tuples;
    for s in tail.into_iter().skip(1) {
        out.anchors.push(s[..t.n].to_vec());
        out.slices.push(PointCloudHull::new(t.n, s)?);
    }
    Ok(out)
}
