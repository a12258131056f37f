//! Dense two-phase simplex with Bland's rule.
//!
//! Problems are small (a few rows, at most a few thousand columns), so a
//! dense tableau is the simplest thing that is fast enough.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Pivot and reduced-cost tolerance.
pub const PIVOT_TOL: f64 = 1e-9;

/// Optimization direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

/// A linear program over `num_vars` variables.
///
/// Constraint rows are dense. Each variable carries `(lower, upper)` bounds,
/// where either side may be infinite; the default is `[0, inf)`.
#[derive(Clone, Debug)]
pub struct LpProblem {
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub eq: Vec<(Vec<f64>, f64)>,
    pub le: Vec<(Vec<f64>, f64)>,
    pub bounds: Vec<(f64, f64)>,
}

/// Result of a solve.
#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal { value: f64, point: Vec<f64> },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn is_optimal(&self) -> bool {
        matches!(self, LpOutcome::Optimal { .. })
    }
}

impl LpProblem {
    pub fn new(sense: Sense, objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self { sense, objective, eq: Vec::new(), le: Vec::new(), bounds: vec![(0.0, f64::INFINITY); n] }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) {
        self.eq.push((row, rhs));
    }

    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64) {
        self.le.push((row, rhs));
    }

    /// `row · x >= rhs`.
    pub fn add_ge(&mut self, row: Vec<f64>, rhs: f64) {
        self.le.push((row.into_iter().map(|v| -v).collect(), -rhs));
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.bounds[var] = (lower, upper);
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.bounds.len() != n {
            return Err(Error::Shape { expected: n, got: self.bounds.len() });
        }
        for (row, rhs) in self.eq.iter().chain(&self.le) {
            if row.len() != n {
                return Err(Error::Shape { expected: n, got: row.len() });
            }
            if !rhs.is_finite() || row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("lp constraint"));
            }
        }
        if self.objective.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("lp objective"));
        }
        for &(l, u) in &self.bounds {
            if l.is_nan() || u.is_nan() || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(Error::Config("lp variable bounds".into()));
            }
        }
        Ok(())
    }
}

/// How an original variable maps onto non-negative solver columns.
#[derive(Clone, Copy)]
enum VarMap {
    /// `x = offset + y[col]`
    Shifted { col: usize, offset: f64 },
    /// `x = offset - y[col]`
    Mirrored { col: usize, offset: f64 },
    /// `x = y[pos] - y[neg]`
    Free { pos: usize, neg: usize },
}

struct Tableau {
    rows: usize,
    cols: usize,
    /// `(rows + 1) x (cols + 1)`; the last row is the objective, the last
    /// column the right-hand side.
    t: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * (self.cols + 1) + c]
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.cols + 1;
        let p = self.t[pr * w + pc];
        for c in 0..w {
            self.t[pr * w + c] /= p;
        }
        self.t[pr * w + pc] = 1.0;
        let (before, rest) = self.t.split_at_mut(pr * w);
        let (prow, after) = rest.split_at_mut(w);
        for row in before.chunks_exact_mut(w).chain(after.chunks_exact_mut(w)) {
            let f = row[pc];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * pv;
                }
                row[pc] = 0.0;
            }
        }
        self.basis[pr] = pc;
    }

    /// Runs simplex iterations on the current objective row. Columns with
    /// `allowed[c] == false` never enter. Returns `Ok(false)` on unboundedness.
    fn run(&mut self, allowed: &[bool], iterations: &mut usize, cap: usize) -> Result<bool> {
        let obj = self.rows;
        loop {
            // Bland: lowest-index improving column.
            let entering = (0..self.cols).find(|&c| allowed[c] && self.at(obj, c) < -PIVOT_TOL);
            let Some(pc) = entering else { return Ok(true) };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a > PIVOT_TOL {
                    let ratio = self.at(r, self.cols) / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((br, bratio)) => {
                            if ratio < bratio - 1e-12 || (ratio <= bratio + 1e-12 && self.basis[r] < self.basis[br]) {
                                Some((r, ratio))
                            } else {
                                Some((br, bratio))
                            }
                        }
                    };
                }
            }
            let Some((pr, _)) = leave else { return Ok(false) };
            self.pivot(pr, pc);
            *iterations += 1;
            if *iterations > cap {
                return Err(Error::LpIterationLimit(cap));
            }
        }
    }
}

/// Solves `problem`. Exceeding the iteration cap is reported as
/// [`Error::LpIterationLimit`].
pub fn lp_solve(problem: &LpProblem) -> Result<LpOutcome> {
    problem.validate()?;
    let n = problem.num_vars();

    // Map variables onto non-negative columns, collecting extra upper-bound rows.
    let mut maps = Vec::with_capacity(n);
    let mut ncols = 0;
    let mut bound_rows: Vec<(usize, f64)> = Vec::new();
    for &(l, u) in &problem.bounds {
        if l.is_finite() {
            maps.push(VarMap::Shifted { col: ncols, offset: l });
            if u.is_finite() {
                bound_rows.push((ncols, u - l));
            }
            ncols += 1;
        } else if u.is_finite() {
            maps.push(VarMap::Mirrored { col: ncols, offset: u });
            ncols += 1;
        } else {
            maps.push(VarMap::Free { pos: ncols, neg: ncols + 1 });
            ncols += 2;
        }
    }
    if bound_rows.iter().any(|&(_, w)| w < -PIVOT_TOL) {
        return Ok(LpOutcome::Infeasible);
    }

    // Rewrite a row over original variables as a row over columns.
    let translate = |row: &[f64], rhs: f64| -> (Vec<f64>, f64) {
        let mut out = vec![0.0; ncols];
        let mut b = rhs;
        for (j, &a) in row.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            match maps[j] {
                VarMap::Shifted { col, offset } => {
                    out[col] += a;
                    b -= a * offset;
                }
                VarMap::Mirrored { col, offset } => {
                    out[col] -= a;
                    b -= a * offset;
                }
                VarMap::Free { pos, neg } => {
                    out[pos] += a;
                    out[neg] -= a;
                }
            }
        }
        (out, b)
    };

    let mut eq_rows: Vec<(Vec<f64>, f64)> = problem.eq.iter().map(|(r, b)| translate(r, *b)).collect();
    let mut le_rows: Vec<(Vec<f64>, f64)> = problem.le.iter().map(|(r, b)| translate(r, *b)).collect();
    for &(col, w) in &bound_rows {
        let mut r = vec![0.0; ncols];
        r[col] = 1.0;
        le_rows.push((r, w));
    }
    let (mut cost, _) = translate(&problem.objective, 0.0);
    let sign = if problem.sense == Sense::Maximize { -1.0 } else { 1.0 };
    for c in &mut cost {
        *c *= sign;
    }

    // Columns: structural, one slack per <= row, one artificial per row that
    // lacks an obvious starting basic column.
    let rows = eq_rows.len() + le_rows.len();
    let nslack = le_rows.len();
    let mut needs_art = Vec::with_capacity(rows);
    let mut all_rows: Vec<(Vec<f64>, f64, Option<usize>)> = Vec::with_capacity(rows);
    for (r, b) in eq_rows.drain(..) {
        all_rows.push((r, b, None));
    }
    for (i, (r, b)) in le_rows.drain(..).enumerate() {
        all_rows.push((r, b, Some(ncols + i)));
    }
    for (_, b, slack) in &all_rows {
        needs_art.push(slack.is_none() || *b < 0.0);
    }
    let nart = needs_art.iter().filter(|&&a| a).count();
    let cols = ncols + nslack + nart;
    let w = cols + 1;
    let mut tab = Tableau { rows, cols, t: vec![0.0; (rows + 1) * w], basis: vec![0; rows] };
    let mut art = ncols + nslack;
    for (r, (row, b, slack)) in all_rows.iter().enumerate() {
        let flip = if *b < 0.0 { -1.0 } else { 1.0 };
        for (c, &a) in row.iter().enumerate() {
            tab.t[r * w + c] = flip * a;
        }
        if let Some(s) = slack {
            tab.t[r * w + s] = flip;
        }
        tab.t[r * w + cols] = flip * b;
        if needs_art[r] {
            tab.t[r * w + art] = 1.0;
            tab.basis[r] = art;
            art += 1;
        } else {
            tab.basis[r] = slack.unwrap();
        }
    }

    let cap = 50 * (rows + cols) + 1000;
    let mut iterations = 0;
    let is_art = |c: usize| c >= ncols + nslack;

    // Phase 1: minimize the sum of artificials.
    if nart > 0 {
        let obj = rows;
        for r in 0..rows {
            if is_art(tab.basis[r]) {
                for c in 0..w {
                    let v = tab.t[r * w + c];
                    tab.t[obj * w + c] -= v;
                }
            }
        }
        for c in ncols + nslack..cols {
            tab.t[obj * w + c] = 0.0;
        }
        let allowed = vec![true; cols];
        tab.run(&allowed, &mut iterations, cap)?;
        let scale = all_rows.iter().map(|(_, b, _)| b.abs()).fold(1.0, f64::max);
        if -tab.at(obj, cols) > 1e-9 * scale {
            return Ok(LpOutcome::Infeasible);
        }
        // Drive remaining artificials out of the basis where possible.
        for r in 0..rows {
            if is_art(tab.basis[r]) {
                if let Some(c) = (0..ncols + nslack).find(|&c| tab.at(r, c).abs() > PIVOT_TOL) {
                    tab.pivot(r, c);
                }
            }
        }
    }

    // Phase 2 objective row.
    let obj = rows;
    for c in 0..w {
        tab.t[obj * w + c] = 0.0;
    }
    for (c, &v) in cost.iter().enumerate() {
        tab.t[obj * w + c] = v;
    }
    for r in 0..rows {
        let b = tab.basis[r];
        let cb = if b < ncols { cost[b] } else { 0.0 };
        if cb != 0.0 {
            for c in 0..w {
                let v = tab.t[r * w + c];
                tab.t[obj * w + c] -= cb * v;
            }
        }
    }
    let allowed: Vec<bool> = (0..cols).map(|c| !is_art(c)).collect();
    if !tab.run(&allowed, &mut iterations, cap)? {
        return Ok(LpOutcome::Unbounded);
    }

    let mut y = vec![0.0; ncols];
    for r in 0..rows {
        if tab.basis[r] < ncols {
            y[tab.basis[r]] = tab.at(r, cols);
        }
    }
    let point: Vec<f64> = maps
        .iter()
        .map(|m| match *m {
            VarMap::Shifted { col, offset } => offset + y[col],
            VarMap::Mirrored { col, offset } => offset - y[col],
            VarMap::Free { pos, neg } => y[pos] - y[neg],
        })
        .collect();
    let value: f64 = problem.objective.iter().zip(&point).map(|(c, x)| c * x).sum();
    Ok(LpOutcome::Optimal { value, point })
}
