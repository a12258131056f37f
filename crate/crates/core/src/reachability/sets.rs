//! Initial and goal sets, and sampling of (state, control sequence) tuples.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;
use rand::Rng;

use crate::dynamics::SystemSpec;
use crate::linalg::{cholesky, forward_substitute, lower_mul};
use crate::{Error, Result};

/// Maximum rejection-sampling attempts for a single state.
pub const MAX_REJECTIONS: usize = 1_000_000;

/// A set of states: axis-aligned box, ellipsoid `{x : (x-c)ᵀ P⁻¹ (x-c) <= 1}`
/// with symmetric positive definite `shape = P`, or a single point.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum InitialSet {
    Box { center: Vec<f64>, half_widths: Vec<f64> },
    Ellipsoid { center: Vec<f64>, shape: Vec<f64> },
    Point { center: Vec<f64> },
}

impl InitialSet {
    pub fn point(center: Vec<f64>) -> Self {
        InitialSet::Point { center }
    }

    /// Ellipsoid with shape `diag(radii²)`.
    pub fn axis_ellipsoid(center: Vec<f64>, radii: &[f64]) -> Self {
        let n = center.len();
        let mut shape = vec![0.0; n * n];
        for (k, r) in radii.iter().enumerate() {
            shape[k * n + k] = r * r;
        }
        InitialSet::Ellipsoid { center, shape }
    }

    pub fn center(&self) -> &[f64] {
        match self {
            InitialSet::Box { center, .. } | InitialSet::Ellipsoid { center, .. } | InitialSet::Point { center } => center,
        }
    }

    pub fn dim(&self) -> usize {
        self.center().len()
    }

    fn factor(&self) -> Result<Vec<f64>> {
        match self {
            InitialSet::Ellipsoid { shape, .. } => {
                let n = self.dim();
                if shape.len() != n * n {
                    return Err(Error::Shape { expected: n * n, got: shape.len() });
                }
                let symmetric = (0..n).all(|i| (0..n).all(|j| (shape[i * n + j] - shape[j * n + i]).abs() <= 1e-12 * (1.0 + shape[i * n + j].abs())));
                if !symmetric {
                    return Err(Error::Config("ellipsoid shape is not symmetric".into()));
                }
                cholesky(shape, n).ok_or_else(|| Error::Config("ellipsoid shape is not positive definite".into()))
            }
            _ => Ok(Vec::new()),
        }
    }

    /// Per-axis extent around the center.
    pub fn half_extent(&self) -> Vec<f64> {
        match self {
            InitialSet::Box { half_widths, .. } => half_widths.clone(),
            InitialSet::Ellipsoid { shape, .. } => {
                let n = self.dim();
                (0..n).map(|k| shape[k * n + k].max(0.0).sqrt()).collect()
            }
            InitialSet::Point { center } => vec![0.0; center.len()],
        }
    }

    /// Checks shape consistency, definiteness and containment in the state box.
    pub fn validate(&self, spec: &SystemSpec) -> Result<()> {
        let n = self.dim();
        if n != spec.n {
            return Err(Error::Shape { expected: spec.n, got: n });
        }
        if self.center().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("set center"));
        }
        if let InitialSet::Box { half_widths, .. } = self {
            if half_widths.len() != n {
                return Err(Error::Shape { expected: n, got: half_widths.len() });
            }
            if half_widths.iter().any(|h| !(h.is_finite() && *h >= 0.0)) {
                return Err(Error::Config("box half-widths must be finite and non-negative".into()));
            }
        }
        self.factor()?;
        let ext = self.half_extent();
        for k in 0..n {
            let c = self.center()[k];
            if c - ext[k] < spec.x_lo[k] || c + ext[k] > spec.x_hi[k] {
                return Err(Error::Config("set leaves the state bounds".into()));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        let c = self.center();
        match self {
            InitialSet::Point { .. } => x.iter().zip(c).all(|(a, b)| (a - b).abs() <= tol),
            InitialSet::Box { half_widths, .. } => {
                x.iter().zip(c).zip(half_widths).all(|((a, b), h)| (a - b).abs() <= h + tol)
            }
            InitialSet::Ellipsoid { .. } => match self.factor() {
                Ok(l) => {
                    let d: Vec<f64> = x.iter().zip(c).map(|(a, b)| a - b).collect();
                    let y = forward_substitute(&l, c.len(), &d);
                    y.iter().map(|v| v * v).sum::<f64>() <= (1.0 + tol) * (1.0 + tol)
                }
                Err(_) => false,
            },
        }
    }

    /// Nearest-feasible map: clamping for boxes, radial scaling in the
    /// whitened coordinates for ellipsoids.
    pub fn project(&self, x: &mut [f64]) {
        let c = self.center().to_vec();
        match self {
            InitialSet::Point { .. } => x.copy_from_slice(&c),
            InitialSet::Box { half_widths, .. } => {
                for k in 0..x.len() {
                    x[k] = x[k].clamp(c[k] - half_widths[k], c[k] + half_widths[k]);
                }
            }
            InitialSet::Ellipsoid { .. } => {
                if let Ok(l) = self.factor() {
                    let n = c.len();
                    let d: Vec<f64> = x.iter().zip(&c).map(|(a, b)| a - b).collect();
                    let y = forward_substitute(&l, n, &d);
                    let r = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if r > 1.0 {
                        let w: Vec<f64> = y.iter().map(|v| v / r).collect();
                        let back = lower_mul(&l, n, &w);
                        for k in 0..n {
                            x[k] = c[k] + back[k];
                        }
                    }
                }
            }
        }
    }

    /// A uniform sample. Ellipsoids use rejection from the enclosing cube in
    /// whitened coordinates.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let c = self.center();
        match self {
            InitialSet::Point { .. } => Ok(c.to_vec()),
            InitialSet::Box { half_widths, .. } => Ok(c
                .iter()
                .zip(half_widths)
                .map(|(ci, h)| if *h > 0.0 { ci + rng.gen_range(-h..=*h) } else { *ci })
                .collect()),
            InitialSet::Ellipsoid { .. } => {
                let l = self.factor()?;
                let n = c.len();
                for _ in 0..MAX_REJECTIONS {
                    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
                    if w.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
                        let d = lower_mul(&l, n, &w);
                        return Ok(c.iter().zip(&d).map(|(a, b)| a + b).collect());
                    }
                }
                Err(Error::SamplingStall(MAX_REJECTIONS))
            }
        }
    }

    /// A sample on the boundary: a uniformly chosen face for boxes, a
    /// uniform direction in whitened coordinates for ellipsoids.
    pub fn sample_boundary<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let c = self.center();
        match self {
            InitialSet::Point { .. } => Ok(c.to_vec()),
            InitialSet::Box { half_widths, .. } => {
                let mut x = self.sample(rng)?;
                let k = rng.gen_range(0..c.len());
                x[k] = if rng.gen_bool(0.5) { c[k] + half_widths[k] } else { c[k] - half_widths[k] };
                Ok(x)
            }
            InitialSet::Ellipsoid { .. } => {
                let l = self.factor()?;
                let n = c.len();
                for _ in 0..MAX_REJECTIONS {
                    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
                    let r = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if r <= 1.0 && r > 1e-3 {
                        let w: Vec<f64> = w.iter().map(|v| v / r).collect();
                        let d = lower_mul(&l, n, &w);
                        return Ok(c.iter().zip(&d).map(|(a, b)| a + b).collect());
                    }
                }
                Err(Error::SamplingStall(MAX_REJECTIONS))
            }
        }
    }
}

/// How control sequences are drawn for sampled tuples.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum ControlSampling {
    /// A fresh uniform control at every step.
    PerStep,
    /// One uniform control held for the whole sequence.
    Hold,
    /// Between one and `segments` constant segments with uniformly random
    /// switch steps. Each control coordinate of a segment sits on one of its
    /// bounds with probability `bang_prob` and is uniform otherwise.
    Switching { segments: usize, bang_prob: f64 },
}

impl Default for ControlSampling {
    fn default() -> Self {
        ControlSampling::Switching { segments: 3, bang_prob: 0.5 }
    }
}

impl ControlSampling {
    pub fn validate(&self) -> Result<()> {
        if let ControlSampling::Switching { segments, bang_prob } = *self {
            if segments == 0 || !(0.0..=1.0).contains(&bang_prob) {
                return Err(Error::Config("switching sampler needs segments >= 1 and bang_prob in [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// A `steps x m` control sequence.
    pub fn sample_sequence<R: Rng + ?Sized>(&self, spec: &SystemSpec, steps: usize, rng: &mut R) -> Vec<f64> {
        let m = spec.m;
        let mut out = Vec::with_capacity(steps * m);
        match *self {
            ControlSampling::PerStep => {
                for _ in 0..steps {
                    out.extend(spec.sample_control(rng));
                }
            }
            ControlSampling::Hold => {
                let u = spec.sample_control(rng);
                for _ in 0..steps {
                    out.extend_from_slice(&u);
                }
            }
            ControlSampling::Switching { segments, bang_prob } => {
                if steps == 0 {
                    return out;
                }
                let count = rng.gen_range(1..=segments.min(steps));
                let mut cuts: Vec<usize> = (0..count - 1).map(|_| rng.gen_range(1..steps)).collect();
                cuts.sort_unstable();
                cuts.push(steps);
                let mut k = 0;
                for &end in &cuts {
                    let u: Vec<f64> = (0..m)
                        .map(|j| {
                            let (lo, hi) = (spec.u_lo[j], spec.u_hi[j]);
                            if rng.gen_bool(bang_prob) {
                                if rng.gen_bool(0.5) {
                                    lo
                                } else {
                                    hi
                                }
                            } else {
                                rng.gen_range(lo..=hi)
                            }
                        })
                        .collect();
                    while k < end {
                        out.extend_from_slice(&u);
                        k += 1;
                    }
                }
            }
        }
        out
    }
}

/// `M` sampled tuples: initial states (`M x n`) and control sequences
/// (`M x steps x m`).
#[derive(Clone, Debug, PartialEq)]
pub struct Tuples {
    pub n: usize,
    pub m: usize,
    pub steps: usize,
    pub states: Vec<f64>,
    pub controls: Vec<f64>,
}

impl Tuples {
    pub fn len(&self) -> usize {
        self.states.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, j: usize) -> &[f64] {
        &self.states[j * self.n..(j + 1) * self.n]
    }

    pub fn controls_of(&self, j: usize) -> &[f64] {
        let w = self.steps * self.m;
        &self.controls[j * w..(j + 1) * w]
    }

    /// Rows `range` only.
    pub fn slice(&self, start: usize, end: usize) -> Tuples {
        let w = self.steps * self.m;
        Tuples {
            n: self.n,
            m: self.m,
            steps: self.steps,
            states: self.states[start * self.n..end * self.n].to_vec(),
            controls: self.controls[start * w..end * w].to_vec(),
        }
    }

    pub fn append(&mut self, other: &Tuples) -> Result<()> {
        if other.n != self.n || other.m != self.m || other.steps != self.steps {
            return Err(Error::Shape { expected: self.steps, got: other.steps });
        }
        self.states.extend_from_slice(&other.states);
        self.controls.extend_from_slice(&other.controls);
        Ok(())
    }
}

/// Draws `count` tuples: states uniform in `set`, controls per `sampling`.
pub fn sample_tuples<R: Rng + ?Sized>(
    set: &InitialSet,
    spec: &SystemSpec,
    count: usize,
    steps: usize,
    sampling: ControlSampling,
    rng: &mut R,
) -> Result<Tuples> {
    sample_tuples_mixed(set, spec, count, steps, sampling, 0.0, rng)
}

/// As [`sample_tuples`], with the first `boundary_fraction` of the states
/// drawn on the boundary of `set` instead. The hull of a convex set is the
/// hull of its boundary, so these keep the sampled hulls from shrinking
/// inward from the true set.
pub fn sample_tuples_mixed<R: Rng + ?Sized>(
    set: &InitialSet,
    spec: &SystemSpec,
    count: usize,
    steps: usize,
    sampling: ControlSampling,
    boundary_fraction: f64,
    rng: &mut R,
) -> Result<Tuples> {
    if !(0.0..=1.0).contains(&boundary_fraction) {
        return Err(Error::Config("boundary fraction must lie in [0, 1]".into()));
    }
    let on_boundary = (boundary_fraction * count as f64).round() as usize;
    if count == 0 {
        return Err(Error::Config("at least one tuple is required".into()));
    }
    if set.dim() != spec.n {
        return Err(Error::Shape { expected: spec.n, got: set.dim() });
    }
    sampling.validate()?;
    let mut states = Vec::with_capacity(count * spec.n);
    let mut controls = Vec::with_capacity(count * steps * spec.m);
    for j in 0..count {
        states.extend(if j < on_boundary { set.sample_boundary(rng)? } else { set.sample(rng)? });
        controls.extend(sampling.sample_sequence(spec, steps, rng));
    }
    Ok(Tuples { n: spec.n, m: spec.m, steps, states, controls })
}
