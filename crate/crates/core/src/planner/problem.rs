//! Planning queries: start, goal region, box obstacles in a workspace projection.

use alloc::vec::Vec;

use crate::dynamics::SystemSpec;
use crate::reachability::InitialSet;
use crate::{Error, Result};

/// Axis-aligned box over the workspace coordinates of a problem.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Obstacle {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Obstacle {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter().zip(&self.lo).zip(&self.hi).all(|((v, l), h)| *v >= *l && *v <= *h)
    }

    fn overlaps(&self, lo: &[f64], hi: &[f64]) -> bool {
        (0..self.lo.len()).all(|k| self.lo[k] <= hi[k] && lo[k] <= self.hi[k])
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlanProblem {
    pub x0: Vec<f64>,
    pub goal: InitialSet,
    #[cfg_attr(feature = "serde", serde(default))]
    pub obstacles: Vec<Obstacle>,
    /// State coordinates the obstacles live in.
    pub workspace: Vec<usize>,
}

impl PlanProblem {
    pub fn new(x0: Vec<f64>, goal: InitialSet, obstacles: Vec<Obstacle>, workspace: Vec<usize>) -> Self {
        Self { x0, goal, obstacles, workspace }
    }

    fn project(&self, x: &[f64]) -> Vec<f64> {
        self.workspace.iter().map(|&k| x[k]).collect()
    }

    /// True when the workspace projection of `x` lies in an obstacle.
    pub fn collides(&self, x: &[f64]) -> bool {
        if self.obstacles.is_empty() {
            return false;
        }
        let p = self.project(x);
        self.obstacles.iter().any(|o| o.contains(&p))
    }

    pub fn in_goal(&self, x: &[f64]) -> bool {
        self.goal.contains(x, 0.0)
    }

    pub fn validate(&self, spec: &SystemSpec) -> Result<()> {
        if self.x0.len() != spec.n {
            return Err(Error::Shape { expected: spec.n, got: self.x0.len() });
        }
        self.goal.validate(spec)?;
        if self.workspace.iter().any(|&k| k >= spec.n) {
            return Err(Error::Config("workspace index out of range".into()));
        }
        let w = self.workspace.len();
        for o in &self.obstacles {
            if o.lo.len() != w || o.hi.len() != w {
                return Err(Error::Shape { expected: w, got: o.lo.len().min(o.hi.len()) });
            }
            if o.lo.iter().zip(&o.hi).any(|(l, h)| !(l <= h)) {
                return Err(Error::Config("obstacle with lo > hi".into()));
            }
        }
        if !spec.state_in_bounds(&self.x0) {
            return Err(Error::Config("start state outside the state box".into()));
        }
        if self.collides(&self.x0) {
            return Err(Error::Config("start state in collision".into()));
        }
        // Conservative: the goal's bounding box must be clear of obstacles.
        let c = self.project(self.goal.center());
        let h = self.project(&self.goal.half_extent());
        let lo: Vec<f64> = c.iter().zip(&h).map(|(c, h)| c - h).collect();
        let hi: Vec<f64> = c.iter().zip(&h).map(|(c, h)| c + h).collect();
        if self.obstacles.iter().any(|o| o.overlaps(&lo, &hi)) {
            return Err(Error::Config("goal region intersects an obstacle".into()));
        }
        Ok(())
    }
}

/// True when every state of the flat `len x n` segment is outside all obstacles.
pub fn collision_free(problem: &PlanProblem, states: &[f64], n: usize) -> bool {
    states.chunks_exact(n).all(|x| !problem.collides(x))
}
