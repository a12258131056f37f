//! SST search tree with witness-based sparsification.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use super::problem::PlanProblem;
use crate::dynamics::{step_rk4_into, SystemSpec};
use crate::linalg::dist;

/// A tree node. The incoming edge holds one constant control applied for
/// `edge_steps` integrator steps.
#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub state: Vec<f64>,
    /// Cost-to-come in integrator steps.
    pub cost: usize,
    pub parent: Option<usize>,
    pub control: Vec<f64>,
    pub edge_steps: usize,
    pub active: bool,
    pub alive: bool,
    pub witness: usize,
    pub children: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Witness {
    pub point: Vec<f64>,
    pub rep: Option<usize>,
}

/// Radii and extension lengths for SST steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SstParams {
    pub selection_radius: f64,
    pub pruning_radius: f64,
    pub min_steps: usize,
    pub max_steps: usize,
}

/// Node storage is append-only; removed nodes keep their slot with
/// `alive == false` so indices stay stable.
#[derive(Clone, Debug)]
pub struct PlanTree {
    pub nodes: Vec<Node>,
    pub witnesses: Vec<Witness>,
    /// Nodes that removal must skip (the incumbent solution path).
    protected: Vec<bool>,
}

/// Outcome of one extension attempt.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extension {
    Added(usize),
    Collision,
    Dominated,
    NoParent,
}

impl PlanTree {
    pub fn new(root: Vec<f64>) -> Self {
        let node = Node {
            state: root.clone(),
            cost: 0,
            parent: None,
            control: Vec::new(),
            edge_steps: 0,
            active: true,
            alive: true,
            witness: 0,
            children: Vec::new(),
        };
        Self { nodes: vec![node], witnesses: vec![Witness { point: root, rep: Some(0) }], protected: vec![true] }
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn alive_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.alive).count()
    }

    pub fn active_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.alive && n.active).count()
    }

    /// Lowest-cost active node within `radius` of `x`, or the nearest active
    /// node when none is that close. Only nodes with cost at most
    /// `max_cost` are candidates.
    pub fn best_near(&self, x: &[f64], radius: f64, max_cost: Option<usize>) -> Option<usize> {
        let mut best: Option<(usize, usize)> = None;
        let mut nearest: Option<(usize, f64)> = None;
        for (i, n) in self.nodes.iter().enumerate() {
            if !(n.alive && n.active) || max_cost.is_some_and(|c| n.cost > c) {
                continue;
            }
            let d = dist(&n.state, x);
            if d <= radius && best.is_none_or(|(_, c)| n.cost < c) {
                best = Some((i, n.cost));
            }
            if nearest.is_none_or(|(_, nd)| d < nd) {
                nearest = Some((i, d));
            }
        }
        best.map(|b| b.0).or(nearest.map(|n| n.0))
    }

    fn nearest_witness(&self, x: &[f64]) -> Option<(usize, f64)> {
        let mut out: Option<(usize, f64)> = None;
        for (i, w) in self.witnesses.iter().enumerate() {
            let d = dist(&w.point, x);
            if out.is_none_or(|(_, od)| d < od) {
                out = Some((i, d));
            }
        }
        out
    }

    /// Marks `i` and everything below it removed.
    pub fn remove_subtree(&mut self, i: usize) {
        let mut stack = vec![i];
        while let Some(k) = stack.pop() {
            if !self.nodes[k].alive {
                continue;
            }
            self.nodes[k].alive = false;
            self.nodes[k].active = false;
            stack.extend(self.nodes[k].children.iter().copied());
        }
        if let Some(p) = self.nodes[i].parent {
            self.nodes[p].children.retain(|&c| c != i);
        }
        for w in &mut self.witnesses {
            if w.rep.is_some_and(|r| !self.nodes[r].alive) {
                w.rep = None;
            }
        }
    }

    /// Removes inactive leaves, walking up while parents become inactive leaves.
    fn drop_inactive_leaf(&mut self, mut i: usize) {
        loop {
            let n = &self.nodes[i];
            if !n.alive || n.active || !n.children.is_empty() || self.protected[i] {
                return;
            }
            let parent = n.parent;
            self.nodes[i].alive = false;
            match parent {
                Some(p) => {
                    self.nodes[p].children.retain(|&c| c != i);
                    i = p;
                }
                None => return,
            }
        }
    }

    pub fn set_protected(&mut self, path: &[usize]) {
        self.protected.iter_mut().for_each(|p| *p = false);
        self.protected[0] = true;
        for &i in path {
            self.protected[i] = true;
        }
    }

    pub fn is_protected(&self, i: usize) -> bool {
        self.protected[i]
    }

    /// Node indices from the root down to `i`.
    pub fn path_to(&self, i: usize) -> Vec<usize> {
        let mut path = vec![i];
        let mut cur = i;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// One SST step toward `x_new`: select a parent, shoot a random constant
    /// control for a random number of steps, keep the result only when it is
    /// collision-free and the best node near its witness.
    #[allow(clippy::too_many_arguments)]
    pub fn extend<R: Rng + ?Sized>(
        &mut self,
        spec: &SystemSpec,
        problem: &PlanProblem,
        params: &SstParams,
        x_new: &[f64],
        max_cost: Option<usize>,
        rng: &mut R,
    ) -> Extension {
        let Some(parent) = self.best_near(x_new, params.selection_radius, max_cost) else {
            return Extension::NoParent;
        };
        let u = spec.sample_control(rng);
        let steps = rng.gen_range(params.min_steps..=params.max_steps);
        let mut x = self.nodes[parent].state.clone();
        let mut next = vec![0.0; x.len()];
        for _ in 0..steps {
            if step_rk4_into(spec, &x, &u, spec.dt, &mut next).is_err() {
                return Extension::Collision;
            }
            core::mem::swap(&mut x, &mut next);
            if !spec.state_in_bounds(&x) || problem.collides(&x) {
                return Extension::Collision;
            }
        }
        let cost = self.nodes[parent].cost + steps;
        let witness = match self.nearest_witness(&x) {
            Some((w, d)) if d <= params.pruning_radius => w,
            _ => {
                self.witnesses.push(Witness { point: x.clone(), rep: None });
                self.witnesses.len() - 1
            }
        };
        let old = self.witnesses[witness].rep;
        if let Some(r) = old {
            if self.nodes[r].cost <= cost {
                return Extension::Dominated;
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            state: x,
            cost,
            parent: Some(parent),
            control: u,
            edge_steps: steps,
            active: true,
            alive: true,
            witness,
            children: Vec::new(),
        });
        self.protected.push(false);
        self.nodes[parent].children.push(id);
        if let Some(r) = old {
            self.nodes[r].active = false;
            self.drop_inactive_leaf(r);
        }
        self.witnesses[witness].rep = Some(id);
        Extension::Added(id)
    }

    /// Rebuilds the witness set from the surviving nodes in cost order and
    /// drops the inactive leaves this creates.
    pub fn rebuild_witnesses(&mut self, radius: f64) {
        self.witnesses.clear();
        let mut order: Vec<usize> = (0..self.nodes.len()).filter(|&i| self.nodes[i].alive).collect();
        order.sort_by_key(|&i| (self.nodes[i].cost, i));
        for &i in &order {
            match self.nearest_witness(&self.nodes[i].state) {
                Some((w, d)) if d <= radius => {
                    self.nodes[i].witness = w;
                    self.nodes[i].active = false;
                }
                _ => {
                    self.witnesses.push(Witness { point: self.nodes[i].state.clone(), rep: Some(i) });
                    self.nodes[i].witness = self.witnesses.len() - 1;
                    self.nodes[i].active = true;
                }
            }
        }
        for &i in order.iter().rev() {
            self.drop_inactive_leaf(i);
        }
    }

    /// Structural checks: cost recursion, parent links, witness rules.
    /// Returns a description of the first violation.
    pub fn check_invariants(&self, spec: &SystemSpec, problem: &PlanProblem) -> Result<(), alloc::string::String> {
        use alloc::format;
        if !self.nodes[0].alive || self.nodes[0].cost != 0 {
            return Err("root missing or with non-zero cost".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if !n.alive {
                continue;
            }
            if let Some(p) = n.parent {
                let pn = &self.nodes[p];
                if !pn.alive {
                    return Err(format!("node {i} has a removed parent"));
                }
                if n.cost != pn.cost + n.edge_steps {
                    return Err(format!("node {i} cost does not follow its parent"));
                }
                if !pn.children.contains(&i) {
                    return Err(format!("node {i} missing from its parent's children"));
                }
                if p >= i {
                    return Err(format!("node {i} has a parent created after it"));
                }
            } else if i != 0 {
                return Err(format!("node {i} has no parent"));
            }
            if n.active && (problem.collides(&n.state) || !spec.state_in_bounds(&n.state)) {
                return Err(format!("active node {i} is in collision"));
            }
        }
        for (w, wit) in self.witnesses.iter().enumerate() {
            let members: Vec<usize> = (0..self.nodes.len()).filter(|&i| self.nodes[i].alive && self.nodes[i].witness == w).collect();
            let active: Vec<usize> = members.iter().copied().filter(|&i| self.nodes[i].active).collect();
            if active.len() > 1 {
                return Err(format!("witness {w} has {} active nodes", active.len()));
            }
            if let Some(r) = wit.rep {
                if !self.nodes[r].alive {
                    return Err(format!("witness {w} represented by a removed node"));
                }
                if let Some(&better) = members.iter().find(|&&i| self.nodes[i].cost < self.nodes[r].cost) {
                    return Err(format!("witness {w}: node {better} is cheaper than its representative {r}"));
                }
            }
        }
        Ok(())
    }
}
