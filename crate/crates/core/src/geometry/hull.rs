//! Convex hulls of point clouds, queried through small LPs. Planar hulls
//! with area also keep their polygon and answer exactly without an LP.

use alloc::vec;
use alloc::vec::Vec;

use super::lp::{lp_solve, LpOutcome, LpProblem, Sense};
use super::planar::{convex_common_point, hull_2d, polygon_chord, polygon_l1_distance};
use crate::{Error, Result};

/// Convex hull of the rows of an `M x n` point array.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PointCloudHull {
    n: usize,
    points: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// Counter-clockwise vertices when `n == 2` and the hull has area.
    #[cfg_attr(feature = "serde", serde(skip))]
    polygon: Option<Vec<[f64; 2]>>,
}

impl PointCloudHull {
    /// `points` is row-major with `n` columns and at least one row.
    pub fn new(n: usize, points: Vec<f64>) -> Result<Self> {
        if n == 0 || points.is_empty() || points.len() % n != 0 {
            return Err(Error::Shape { expected: n.max(1), got: points.len() });
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("hull points"));
        }
        let mut lo = points[..n].to_vec();
        let mut hi = lo.clone();
        for p in points.chunks_exact(n) {
            for k in 0..n {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let polygon = (n == 2).then(|| hull_2d(&points)).filter(|p| p.len() >= 3);
        Ok(Self { n, points, lo, hi, polygon })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.n..(i + 1) * self.n]
    }

    pub fn bounding_box(&self) -> (&[f64], &[f64]) {
        (&self.lo, &self.hi)
    }

    pub fn centroid(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.n];
        for p in self.points.chunks_exact(self.n) {
            for (ci, pi) in c.iter_mut().zip(p) {
                *ci += pi;
            }
        }
        let m = self.len() as f64;
        c.iter_mut().for_each(|v| *v /= m);
        c
    }

    /// Hull of both clouds.
    pub fn union(&self, other: &Self) -> Result<Self> {
        if other.n != self.n {
            return Err(Error::Shape { expected: self.n, got: other.n });
        }
        let mut pts = self.points.clone();
        pts.extend_from_slice(&other.points);
        Self::new(self.n, pts)
    }

    /// Same set, represented by its extreme points only.
    pub fn reduced(&self) -> Result<Self> {
        let pts = match self.n {
            1 => {
                if self.lo[0] == self.hi[0] {
                    vec![self.lo[0]]
                } else {
                    vec![self.lo[0], self.hi[0]]
                }
            }
            2 => hull_2d(&self.points).into_iter().flatten().collect(),
            _ => extreme_points(self)?,
        };
        Self::new(self.n, pts)
    }

    fn outside_box(&self, x: &[f64], slack: f64) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).any(|(v, (l, h))| *v < l - slack || *v > h + slack)
    }

    /// Smallest L1 distance from `x` to the hull.
    pub fn residual(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        if self.len() == 1 {
            return Ok(x.iter().zip(&self.points).map(|(a, b)| (a - b).abs()).sum());
        }
        if let Some(poly) = &self.polygon {
            return Ok(polygon_l1_distance(poly, [x[0], x[1]]));
        }
        let (m, n) = (self.len(), self.n);
        let mut p = membership_lp(self, x);
        p.sense = Sense::Minimize;
        p.objective = vec![0.0; m + 2 * n];
        p.objective[m..].iter_mut().for_each(|v| *v = 1.0);
        match lp_solve(&p)? {
            LpOutcome::Optimal { value, .. } => Ok(value.max(0.0)),
            _ => Err(Error::NonFinite("membership lp")),
        }
    }

    /// True iff `x` is within L1 distance `tol` of the hull.
    pub fn contains(&self, x: &[f64], tol: f64) -> Result<bool> {
        self.check_dim(x.len())?;
        if self.outside_box(x, tol) {
            return Ok(false);
        }
        Ok(self.residual(x)? <= tol)
    }

    /// A point within `tol` of both hulls (midpoint of the two LP
    /// representations, or of two extreme common points for polygons), or
    /// `None` when the hulls are more than `tol` apart.
    pub fn intersection_witness(&self, other: &Self, tol: f64) -> Result<Option<Vec<f64>>> {
        self.check_dim(other.n)?;
        let n = self.n;
        for k in 0..n {
            if self.lo[k] > other.hi[k] + tol || other.lo[k] > self.hi[k] + tol {
                return Ok(None);
            }
        }
        if let (Some(a), Some(b)) = (&self.polygon, &other.polygon) {
            // Growing by tol/4 admits touching polygons; the L1 check
            // rejects points pushed too far out at sharp corners.
            let w = convex_common_point(a, b, 0.25 * tol).map(|w| vec![w[0], w[1]]);
            return Ok(w.filter(|w| polygon_l1_distance(a, [w[0], w[1]]) <= tol && polygon_l1_distance(b, [w[0], w[1]]) <= tol));
        }
        let (ma, mb) = (self.len(), other.len());
        let vars = ma + mb + 2 * n;
        let mut obj = vec![0.0; vars];
        obj[ma + mb..].iter_mut().for_each(|v| *v = 1.0);
        let mut p = LpProblem::new(Sense::Minimize, obj);
        for k in 0..n {
            let mut row = vec![0.0; vars];
            for i in 0..ma {
                row[i] = self.points[i * n + k];
            }
            for j in 0..mb {
                row[ma + j] = -other.points[j * n + k];
            }
            row[ma + mb + k] = 1.0;
            row[ma + mb + n + k] = -1.0;
            p.add_eq(row, 0.0);
        }
        let mut row = vec![0.0; vars];
        row[..ma].iter_mut().for_each(|v| *v = 1.0);
        p.add_eq(row, 1.0);
        let mut row = vec![0.0; vars];
        row[ma..ma + mb].iter_mut().for_each(|v| *v = 1.0);
        p.add_eq(row, 1.0);
        match lp_solve(&p)? {
            LpOutcome::Optimal { value, point } if value <= tol => {
                let mut w = vec![0.0; n];
                for i in 0..ma {
                    for k in 0..n {
                        w[k] += 0.5 * point[i] * self.points[i * n + k];
                    }
                }
                for j in 0..mb {
                    for k in 0..n {
                        w[k] += 0.5 * point[ma + j] * other.points[j * n + k];
                    }
                }
                Ok(Some(w))
            }
            LpOutcome::Optimal { .. } => Ok(None),
            _ => Err(Error::NonFinite("intersection lp")),
        }
    }

    pub fn intersects(&self, other: &Self, tol: f64) -> Result<bool> {
        Ok(self.intersection_witness(other, tol)?.is_some())
    }

    /// Interval of `t` with `x + t * direction` within `tol` of the hull.
    /// Planar polygons return the exact chord instead (loosened only at
    /// edges `x` itself violates).
    pub fn chord(&self, x: &[f64], direction: &[f64], tol: f64) -> Result<(f64, f64)> {
        self.check_dim(x.len())?;
        self.check_dim(direction.len())?;
        if direction.iter().all(|v| *v == 0.0) {
            return Err(Error::Config("chord direction is zero".into()));
        }
        if self.len() == 1 {
            return if self.residual(x)? <= tol { Ok((0.0, 0.0)) } else { Err(Error::OutsideHull) };
        }
        if let Some(poly) = &self.polygon {
            let p = [x[0], x[1]];
            if polygon_l1_distance(poly, p) > tol {
                return Err(Error::OutsideHull);
            }
            return Ok(polygon_chord(poly, p, [direction[0], direction[1]]));
        }
        let (m, n) = (self.len(), self.n);
        let t = m + 2 * n;
        let mut p = membership_lp(self, x);
        p.objective.push(1.0);
        p.bounds.push((0.0, f64::INFINITY));
        for (k, (row, _)) in p.eq.iter_mut().enumerate() {
            row.push(if k < n { -direction[k] } else { 0.0 });
        }
        let mut tol_row = vec![0.0; t + 1];
        tol_row[m..t].iter_mut().for_each(|v| *v = 1.0);
        p.add_le(tol_row, tol);
        p.sense = Sense::Maximize;
        let hi = match lp_solve(&p)? {
            LpOutcome::Optimal { value, .. } => value,
            LpOutcome::Infeasible => return Err(Error::OutsideHull),
            LpOutcome::Unbounded => return Err(Error::NonFinite("chord lp unbounded")),
        };
        p.sense = Sense::Minimize;
        p.bounds[t] = (f64::NEG_INFINITY, 0.0);
        let lo = match lp_solve(&p)? {
            LpOutcome::Optimal { value, .. } => value,
            LpOutcome::Infeasible => return Err(Error::OutsideHull),
            LpOutcome::Unbounded => return Err(Error::NonFinite("chord lp unbounded")),
        };
        Ok((lo, hi))
    }

    /// The same hull with the planar fast path disabled.
    #[cfg(test)]
    pub(crate) fn lp_only(&self) -> Self {
        Self { polygon: None, ..self.clone() }
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.n {
            return Err(Error::Shape { expected: self.n, got });
        }
        Ok(())
    }
}

/// Rows `Σ λ_i p_i + s⁺ - s⁻ = x` and `Σ λ_i = 1` over `[λ, s⁺, s⁻]`, zero objective.
fn membership_lp(hull: &PointCloudHull, x: &[f64]) -> LpProblem {
    let (m, n) = (hull.len(), hull.n);
    let vars = m + 2 * n;
    let mut p = LpProblem::new(Sense::Minimize, vec![0.0; vars]);
    for k in 0..n {
        let mut row = vec![0.0; vars];
        for i in 0..m {
            row[i] = hull.points[i * n + k];
        }
        row[m + k] = 1.0;
        row[m + n + k] = -1.0;
        p.add_eq(row, x[k]);
    }
    let mut row = vec![0.0; vars];
    row[..m].iter_mut().for_each(|v| *v = 1.0);
    p.add_eq(row, 1.0);
    p
}

/// Lexicographically largest point under `key`; always an extreme point.
fn lex_max(hull: &PointCloudHull, score: impl Fn(&[f64]) -> f64) -> usize {
    let n = hull.n;
    let mut best = 0;
    for i in 1..hull.len() {
        let (a, b) = (hull.point(i), hull.point(best));
        let (sa, sb) = (score(a), score(b));
        let better = sa > sb || (sa == sb && a.iter().zip(b).take(n).find(|(x, y)| x != y).is_some_and(|(x, y)| x > y));
        if better {
            best = i;
        }
    }
    best
}

/// Clarkson-style extreme point detection: a point is kept only when it is
/// not inside the hull of the extreme points found so far, and each miss
/// discovers a new extreme point through a separating direction.
fn extreme_points(hull: &PointCloudHull) -> Result<Vec<f64>> {
    let n = hull.n;
    let mut ext: Vec<usize> = Vec::new();
    for k in 0..n {
        for s in [1.0, -1.0] {
            let i = lex_max(hull, |p| s * p[k]);
            if !ext.contains(&i) {
                ext.push(i);
            }
        }
    }
    let gather = |ext: &[usize]| -> Result<PointCloudHull> {
        PointCloudHull::new(n, ext.iter().flat_map(|&i| hull.point(i).iter().copied()).collect())
    };
    let mut current = gather(&ext)?;
    for i in 0..hull.len() {
        if ext.contains(&i) {
            continue;
        }
        let p = hull.point(i);
        loop {
            if !current.outside_box(p, 0.0) && current.residual(p)? <= 1e-10 {
                break;
            }
            // max a·p - b  s.t.  a·e <= b for current extreme points, |a_k| <= 1.
            let mut obj: Vec<f64> = p.to_vec();
            obj.push(-1.0);
            let mut lp = LpProblem::new(Sense::Maximize, obj);
            for k in 0..n {
                lp.set_bounds(k, -1.0, 1.0);
            }
            lp.set_bounds(n, f64::NEG_INFINITY, f64::INFINITY);
            for &e in &ext {
                let mut row = hull.point(e).to_vec();
                row.push(-1.0);
                lp.add_le(row, 0.0);
            }
            let a = match lp_solve(&lp)? {
                LpOutcome::Optimal { value, point } if value > 1e-12 => point[..n].to_vec(),
                _ => break,
            };
            let q = lex_max(hull, |x| x.iter().zip(&a).map(|(u, v)| u * v).sum());
            if ext.contains(&q) {
                break;
            }
            ext.push(q);
            current = gather(&ext)?;
        }
    }
    ext.sort_unstable();
    Ok(ext.iter().flat_map(|&i| hull.point(i).iter().copied()).collect())
}
