//! Planar hulls for diagnostics and areas.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counter-clockwise convex hull of a flat `[x0, y0, x1, y1, ...]` array by
/// Andrew's monotone chain. Collinear boundary points are dropped, so a
/// degenerate cloud yields one or two vertices.
pub fn hull_2d(points: &[f64]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.chunks_exact(2).map(|p| [p[0], p[1]]).collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Shoelace area; zero for fewer than three vertices.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        s += a[0] * b[1] - a[1] * b[0];
    }
    0.5 * s.abs()
}

/// Area of the convex hull of a flat planar point array.
pub fn hull_area(points: &[f64]) -> f64 {
    polygon_area(&hull_2d(points))
}

/// L1 distance from `x` to the segment `[a, b]`. The distance is convex
/// and piecewise linear along the segment, so its minimum sits at an end
/// or where one coordinate of the segment matches `x`.
fn l1_to_segment(x: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let at = |s: f64| (a[0] + s * d[0] - x[0]).abs() + (a[1] + s * d[1] - x[1]).abs();
    let mut best = at(0.0).min(at(1.0));
    for k in 0..2 {
        if d[k] != 0.0 {
            let s = (x[k] - a[k]) / d[k];
            if (0.0..=1.0).contains(&s) {
                best = best.min(at(s));
            }
        }
    }
    best
}

/// L1 distance from `x` to a counter-clockwise convex polygon with at
/// least three vertices; zero inside.
pub fn polygon_l1_distance(poly: &[[f64; 2]], x: [f64; 2]) -> f64 {
    let k = poly.len();
    if (0..k).all(|i| cross(poly[i], poly[(i + 1) % k], x) >= 0.0) {
        return 0.0;
    }
    (0..k).map(|i| l1_to_segment(x, poly[i], poly[(i + 1) % k])).fold(f64::INFINITY, f64::min)
}

/// Range of `t` keeping `x + t d` inside a counter-clockwise convex
/// polygon. An edge that `x` already violates is loosened to pass through
/// `x`, so the range always contains zero and moving along it never makes
/// any violation worse.
pub fn polygon_chord(poly: &[[f64; 2]], x: [f64; 2], d: [f64; 2]) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let k = poly.len();
    for i in 0..k {
        let (a, b) = (poly[i], poly[(i + 1) % k]);
        let g = cross(a, b, x);
        let c = (b[0] - a[0]) * d[1] - (b[1] - a[1]) * d[0];
        let need = g.min(0.0) - g;
        if c > 0.0 {
            lo = lo.max(need / c);
        } else if c < 0.0 {
            hi = hi.min(need / c);
        }
    }
    (lo.min(0.0), hi.max(0.0))
}

/// Half-planes `a·y <= b` (unit `a`) of a counter-clockwise polygon, pushed
/// outward by `offset`.
fn half_planes(poly: &[[f64; 2]], offset: f64, out: &mut Vec<([f64; 2], f64)>) {
    let k = poly.len();
    for i in 0..k {
        let (p, q) = (poly[i], poly[(i + 1) % k]);
        let a = [q[1] - p[1], p[0] - q[0]];
        let len = (a[0] * a[0] + a[1] * a[1]).sqrt();
        if len == 0.0 {
            continue;
        }
        let a = [a[0] / len, a[1] / len];
        out.push((a, a[0] * p[0] + a[1] * p[1] + offset));
    }
}

/// Seidel's incremental 2D LP: maximizes `c·y` over the half-planes inside
/// the box `[lo, hi]`. Constraints are visited in a fixed pseudo-random order
/// so the expected work stays linear while results remain deterministic.
fn lp_2d(planes: &[([f64; 2], f64)], c: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> Option<[f64; 2]> {
    let scale = 1.0 + lo.iter().chain(&hi).fold(0.0f64, |m, v| m.max(v.abs()));
    let eps = 1e-12 * scale;
    let mut all: Vec<([f64; 2], f64)> = vec![
        ([1.0, 0.0], hi[0]),
        ([-1.0, 0.0], -lo[0]),
        ([0.0, 1.0], hi[1]),
        ([0.0, -1.0], -lo[1]),
    ];
    let mut rest = planes.to_vec();
    let mut state: u64 = 0x9E37_79B9_7F4A_7C15 ^ rest.len() as u64;
    for i in (1..rest.len()).rev() {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        rest.swap(i, (state >> 33) as usize % (i + 1));
    }
    all.extend(rest);
    let mut v = [if c[0] >= 0.0 { hi[0] } else { lo[0] }, if c[1] >= 0.0 { hi[1] } else { lo[1] }];
    for k in 4..all.len() {
        let (a, b) = all[k];
        if a[0] * v[0] + a[1] * v[1] <= b + eps {
            continue;
        }
        // The new optimum lies on the line a·y = b.
        let p = [a[0] * b, a[1] * b];
        let d = [-a[1], a[0]];
        let (mut tlo, mut thi) = (f64::NEG_INFINITY, f64::INFINITY);
        for &(g, h) in &all[..k] {
            let gd = g[0] * d[0] + g[1] * d[1];
            let slack = h - (g[0] * p[0] + g[1] * p[1]);
            if gd.abs() <= 1e-14 {
                if slack < -eps {
                    return None;
                }
            } else if gd > 0.0 {
                thi = thi.min(slack / gd);
            } else {
                tlo = tlo.max(slack / gd);
            }
        }
        if tlo > thi + eps {
            return None;
        }
        let cd = c[0] * d[0] + c[1] * d[1];
        let t = if cd > 0.0 {
            thi
        } else if cd < 0.0 {
            tlo
        } else if tlo.is_finite() {
            tlo
        } else {
            thi
        };
        let t = if tlo <= thi { t } else { 0.5 * (tlo + thi) };
        v = [p[0] + t * d[0], p[1] + t * d[1]];
    }
    Some(v)
}

/// A point common to two counter-clockwise convex polygons, each first
/// grown outward by `offset`: the midpoint of the leftmost and rightmost
/// common points. `None` when they do not meet.
pub fn convex_common_point(a: &[[f64; 2]], b: &[[f64; 2]], offset: f64) -> Option<[f64; 2]> {
    let bbox = |p: &[[f64; 2]]| {
        let mut lo = p[0];
        let mut hi = p[0];
        for v in p {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    };
    let ((alo, ahi), (blo, bhi)) = (bbox(a), bbox(b));
    let lo = [alo[0].max(blo[0]) - offset, alo[1].max(blo[1]) - offset];
    let hi = [ahi[0].min(bhi[0]) + offset, ahi[1].min(bhi[1]) + offset];
    if lo[0] > hi[0] || lo[1] > hi[1] {
        return None;
    }
    let mut planes = Vec::with_capacity(a.len() + b.len());
    half_planes(a, offset, &mut planes);
    half_planes(b, offset, &mut planes);
    let right = lp_2d(&planes, [1.0, 0.0], lo, hi)?;
    let left = lp_2d(&planes, [-1.0, 0.0], lo, hi)?;
    Some([0.5 * (left[0] + right[0]), 0.5 * (left[1] + right[1])])
}
