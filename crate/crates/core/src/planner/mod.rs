//! Time-informed kinodynamic planning: SST growth biased by hit-and-run
//! samples from the time-informed set, pruning on improvement and expansion
//! on failure, plus the plain SST baseline.

mod problem;
mod tree;


pub use problem::{collision_free, Obstacle, PlanProblem};
pub use tree::{Extension, Node, PlanTree, SstParams, Witness};

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use crate::dynamics::SystemSpec;
use crate::geometry::{hnr_chain, interior_start, HnrConfig};
use crate::reachability::{build_tis, Propagator, ReachConfig, TimeInformedSet};
use crate::{seeded_rng, Clock, Error, Result};

/// Default SST radii as fractions of the state-box diagonal. The witness
/// radius has to stay below what one extension can travel, or the root
/// dominates its whole neighbourhood and the tree never grows.
pub const SELECTION_FRACTION: f64 = 0.02;
pub const PRUNING_FRACTION: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PlannerConfig {
    /// Extensions per growth round.
    pub iterations: usize,
    /// Probability of drawing a time-informed sample.
    pub mu: f64,
    /// Relative cost change at or below which the loop stops.
    pub eps: f64,
    /// Cost increment (seconds) after a round without a solution.
    pub delta2: f64,
    /// SST selection radius; `None` means `0.02 · state_range_norm`.
    pub selection_radius: Option<f64>,
    /// SST witness radius; `None` means `0.01 · state_range_norm`.
    pub pruning_radius: Option<f64>,
    pub min_steps: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub max_rounds: usize,
    /// Wall-clock limit in seconds, checked between rounds.
    pub time_budget: Option<f64>,
    pub hnr: HnrConfig,
    pub reach: ReachConfig,
    /// Keep every heuristic sample with its slice pair in the result.
    pub record_samples: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            mu: 0.9,
            eps: 0.01,
            delta2: 0.5,
            selection_radius: None,
            pruning_radius: None,
            min_steps: 1,
            max_steps: 10,
            seed: 0,
            max_rounds: 200,
            time_budget: None,
            hnr: HnrConfig::default(),
            reach: ReachConfig::default(),
            record_samples: false,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::Config("mu must lie in [0, 1]".into()));
        }
        if !(self.eps > 0.0 && self.delta2 > 0.0) {
            return Err(Error::Config("eps and delta2 must be positive".into()));
        }
        if self.iterations == 0 || self.max_rounds == 0 {
            return Err(Error::Config("iterations and max_rounds must be positive".into()));
        }
        if self.min_steps == 0 || self.min_steps > self.max_steps {
            return Err(Error::Config("need 1 <= min_steps <= max_steps".into()));
        }
        for r in [self.selection_radius, self.pruning_radius].into_iter().flatten() {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Config("SST radii must be positive".into()));
            }
        }
        self.reach.validate()
    }

    pub fn sst_params(&self, spec: &SystemSpec) -> SstParams {
        let range = spec.state_range_norm();
        SstParams {
            selection_radius: self.selection_radius.unwrap_or(SELECTION_FRACTION * range),
            pruning_radius: self.pruning_radius.unwrap_or(PRUNING_FRACTION * range),
            min_steps: self.min_steps,
            max_steps: self.max_steps,
        }
    }
}

/// A goal-reaching trajectory: `states` holds every integrator step
/// (flat, `(steps + 1) x n`), `controls` and `durations` the edges.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Solution {
    pub cost: f64,
    pub cost_steps: usize,
    pub states: Vec<f64>,
    pub controls: Vec<Vec<f64>>,
    pub durations: Vec<usize>,
}

impl Solution {
    pub fn len(&self, n: usize) -> usize {
        self.states.len() / n
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "event", rename_all = "snake_case"))]
pub enum PlanEvent {
    TisBuilt { cost: f64, time: f64 },
    Solution { round: usize, cost: f64, time: f64 },
    Shrink { round: usize, cost: f64 },
    Expand { round: usize, cost: f64 },
    Prune { round: usize, before: usize, after: usize },
    Finished { round: usize, converged: bool },
}

#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlanMetrics {
    /// Seconds to the first solution, including the set construction.
    pub t_in: Option<f64>,
    pub c_in: Option<f64>,
    /// Seconds to the returned solution.
    pub t_op: Option<f64>,
    pub c_op: Option<f64>,
    /// Alive tree nodes at termination.
    pub n_node: usize,
    pub rounds: usize,
    pub extensions: usize,
    pub heuristic_samples: usize,
    pub heuristic_accepted: usize,
    /// Surviving fraction after each prune.
    pub retention: Vec<f64>,
    pub tis_cost: Option<f64>,
    pub tis_time: f64,
    /// Seconds spent growing, pruning and expanding.
    pub growth_time: f64,
    pub prune_time: f64,
    pub expand_time: f64,
}

impl PlanMetrics {
    pub fn acceptance_rate(&self) -> Option<f64> {
        (self.heuristic_samples > 0).then(|| self.heuristic_accepted as f64 / self.heuristic_samples as f64)
    }
}

/// A heuristic sample and the forward/backward slices it was drawn from.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HeuristicSample {
    pub forward: usize,
    pub backward: usize,
    pub state: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct PlanResult {
    pub solution: Option<Solution>,
    pub metrics: PlanMetrics,
    pub events: Vec<PlanEvent>,
    /// Set when a round or time budget ended the loop before convergence.
    pub best_effort: bool,
    pub tree: PlanTree,
    pub samples: Vec<HeuristicSample>,
    /// The set at the end of the loop. Slices are only ever appended, so it
    /// holds every hull a recorded sample was drawn from.
    pub tis: Option<TimeInformedSet>,
}

/// Hit-and-run chain states kept per slice pair so consecutive draws
/// continue one chain instead of burning in again. Slices never change once
/// built, so the states stay valid across expansions.
#[derive(Default)]
struct Chains {
    state: BTreeMap<(usize, usize), Vec<f64>>,
}

impl Chains {
    fn draw<R: Rng + ?Sized>(
        &mut self,
        tis: &TimeInformedSet,
        i: usize,
        j: usize,
        hnr: &HnrConfig,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let (Some(f), Some(b)) = (tis.forward_hull(i), tis.backward_hull(j)) else {
            return Err(Error::OutsideHull);
        };
        let hulls = [f, b];
        let (start, cfg) = match self.state.get(&(i, j)) {
            Some(x) => (x.clone(), HnrConfig { burn_in: 0, ..hnr.clone() }),
            None => {
                let w = tis.intersection(i, j)?.ok_or(Error::OutsideHull)?;
                (interior_start(&hulls, &w, 0.5 * hnr.tol)?, hnr.clone())
            }
        };
        let x = hnr_chain(&hulls, &start, 1, &cfg, rng)?.pop().unwrap_or(start);
        self.state.insert((i, j), x.clone());
        Ok(x)
    }
}

struct Growth {
    samples: usize,
    accepted: usize,
}

/// Cheapest alive node inside the goal set.
fn best_goal(tree: &PlanTree, problem: &PlanProblem) -> Option<usize> {
    tree.nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.alive && problem.in_goal(&n.state))
        .min_by_key(|(i, n)| (n.cost, *i))
        .map(|(i, _)| i)
}

/// One round of `config.iterations` extensions. With a time-informed set,
/// each iteration draws a cost-to-come slice `i`, and with probability `mu`
/// a sample from `F_i ∩ B_j` for a uniformly chosen feasible `j`; other
/// draws are uniform over the state box.
#[allow(clippy::too_many_arguments)]
fn tree_growth<R: Rng + ?Sized>(
    tree: &mut PlanTree,
    spec: &SystemSpec,
    problem: &PlanProblem,
    tis: Option<&TimeInformedSet>,
    chains: &mut Chains,
    config: &PlannerConfig,
    params: &SstParams,
    recorded: &mut Vec<HeuristicSample>,
    rng: &mut R,
) -> Result<Growth> {
    let mut g = Growth { samples: 0, accepted: 0 };
    for _ in 0..config.iterations {
        let mut heuristic = None;
        let mut hint = None;
        if let Some(tis) = tis {
            let i = rng.gen_range(0..=tis.cost_steps());
            hint = Some(i);
            if rng.gen::<f64>() < config.mu {
                let feasible = tis.feasible_backward(i)?;
                if !feasible.is_empty() {
                    let j = feasible[rng.gen_range(0..feasible.len())];
                    match chains.draw(tis, i, j, &config.hnr, rng) {
                        Ok(x) => heuristic = Some((i, j, x)),
                        // Degenerate intersections can stall the chain.
                        Err(Error::SamplingStall(_)) | Err(Error::OutsideHull) => {}
                        Err(e) => return Err(e),
                    }
                }
            }
        }
        let x_new = match &heuristic {
            Some((_, _, x)) => x.clone(),
            None => spec.sample_state(rng),
        };
        let ext = tree.extend(spec, problem, params, &x_new, hint, rng);
        if let Some((i, j, x)) = heuristic {
            g.samples += 1;
            if matches!(ext, Extension::Added(_)) {
                g.accepted += 1;
            }
            if config.record_samples {
                recorded.push(HeuristicSample { forward: i, backward: j, state: x });
            }
        }
    }
    Ok(g)
}

/// Removes every node whose cost-to-come exceeds the set's cost or whose
/// state lies outside its own time slice, together with its subtree, then
/// rebuilds the witnesses. Protected nodes are kept. Returns the alive
/// counts before and after.
pub fn prune(tree: &mut PlanTree, tis: &TimeInformedSet, radius: f64) -> Result<(usize, usize)> {
    let before = tree.alive_count();
    let k = tis.cost_steps();
    for i in 1..tree.nodes.len() {
        if !tree.nodes[i].alive || tree.is_protected(i) {
            continue;
        }
        let n = &tree.nodes[i];
        let outside = n.cost > k || !tis.slice_contains(n.cost, &n.state, tis.tol())?;
        if outside {
            tree.remove_subtree(i);
        }
    }
    tree.rebuild_witnesses(radius);
    Ok((before, tree.alive_count()))
}

fn extract(tree: &PlanTree, spec: &SystemSpec, node: usize) -> Result<Solution> {
    let path = tree.path_to(node);
    let mut states = tree.nodes[0].state.clone();
    let mut controls = Vec::new();
    let mut durations = Vec::new();
    let mut x = tree.nodes[0].state.clone();
    let mut next = vec![0.0; spec.n];
    for &k in &path[1..] {
        let n = &tree.nodes[k];
        for _ in 0..n.edge_steps {
            crate::dynamics::step_rk4_into(spec, &x, &n.control, spec.dt, &mut next)?;
            core::mem::swap(&mut x, &mut next);
            states.extend_from_slice(&x);
        }
        controls.push(n.control.clone());
        durations.push(n.edge_steps);
    }
    let cost_steps = tree.nodes[node].cost;
    Ok(Solution { cost: cost_steps as f64 * spec.dt, cost_steps, states, controls, durations })
}

fn trivial(tree: PlanTree, problem: &PlanProblem, elapsed: f64) -> PlanResult {
    let metrics = PlanMetrics {
        t_in: Some(elapsed),
        c_in: Some(0.0),
        t_op: Some(elapsed),
        c_op: Some(0.0),
        n_node: 1,
        tis_cost: Some(0.0),
        ..PlanMetrics::default()
    };
    PlanResult {
        solution: Some(Solution {
            cost: 0.0,
            cost_steps: 0,
            states: problem.x0.clone(),
            controls: Vec::new(),
            durations: Vec::new(),
        }),
        metrics,
        events: vec![PlanEvent::Finished { round: 0, converged: true }],
        best_effort: false,
        tree,
        samples: Vec::new(),
        tis: None,
    }
}

fn relative_change(new: usize, old: usize) -> f64 {
    (new as f64 - old as f64).abs() / (old as f64).max(1.0)
}

/// Shared driver for both planners; `prop` is `Some` for the informed one.
fn run<P: Propagator + ?Sized>(
    problem: &PlanProblem,
    spec: &SystemSpec,
    prop: Option<&P>,
    config: &PlannerConfig,
    clock: &dyn Clock,
) -> Result<PlanResult> {
    config.validate()?;
    problem.validate(spec)?;
    let t0 = clock.seconds();
    let elapsed = || clock.seconds() - t0;
    let mut rng = seeded_rng(config.seed);
    let params = config.sst_params(spec);
    let mut tree = PlanTree::new(problem.x0.clone());
    if problem.in_goal(&problem.x0) {
        return Ok(trivial(tree, problem, elapsed()));
    }

    let mut events = Vec::new();
    let mut metrics = PlanMetrics::default();
    let mut tis = match prop {
        Some(p) => {
            let tis = build_tis(p, spec, &problem.x0, &problem.goal, &config.reach, clock, &mut rng)?;
            metrics.tis_cost = Some(tis.cost());
            metrics.tis_time = elapsed();
            events.push(PlanEvent::TisBuilt { cost: tis.cost(), time: metrics.tis_time });
            Some(tis)
        }
        None => None,
    };
    let delta2_steps = ((config.delta2 / spec.dt).round() as usize).max(1);
    let mut cost = tis.as_ref().map(|t| t.cost_steps());
    let mut chains = Chains::default();
    let mut incumbent: Option<(usize, usize)> = None;
    let mut solution = None;
    let mut samples = Vec::new();
    let mut converged = false;
    let mut round = 0;

    while round < config.max_rounds && !config.time_budget.is_some_and(|b| elapsed() > b) {
        round += 1;
        let before = cost;
        let tg = clock.seconds();
        let g = tree_growth(&mut tree, spec, problem, tis.as_ref(), &mut chains, config, &params, &mut samples, &mut rng)?;
        metrics.growth_time += clock.seconds() - tg;
        metrics.extensions += config.iterations;
        metrics.heuristic_samples += g.samples;
        metrics.heuristic_accepted += g.accepted;

        let Some(goal) = best_goal(&tree, problem) else {
            if let (Some(t), Some(p), Some(c)) = (tis.as_mut(), prop, cost) {
                let c = c + delta2_steps;
                let te = clock.seconds();
                t.expand(c as f64 * spec.dt, p, spec, &mut rng)?;
                metrics.expand_time += clock.seconds() - te;
                cost = Some(c);
                events.push(PlanEvent::Expand { round, cost: c as f64 * spec.dt });
            }
            continue;
        };
        let found = tree.nodes[goal].cost;
        if incumbent.is_none_or(|(_, c)| found < c) {
            let now = elapsed();
            let sol = extract(&tree, spec, goal)?;
            metrics.t_in.get_or_insert(now);
            metrics.c_in.get_or_insert(sol.cost);
            metrics.t_op = Some(now);
            metrics.c_op = Some(sol.cost);
            events.push(PlanEvent::Solution { round, cost: sol.cost, time: now });
            tree.set_protected(&tree.path_to(goal));
            incumbent = Some((goal, found));
            solution = Some(sol);
        }
        cost = Some(found);
        if let (Some(t), Some(p), Some(old)) = (tis.as_mut(), prop, before) {
            if found < old {
                t.shrink(found as f64 * spec.dt)?;
                events.push(PlanEvent::Shrink { round, cost: found as f64 * spec.dt });
                let tp = clock.seconds();
                let (b, a) = prune(&mut tree, t, params.pruning_radius)?;
                metrics.prune_time += clock.seconds() - tp;
                metrics.retention.push(a as f64 / b as f64);
                events.push(PlanEvent::Prune { round, before: b, after: a });
            } else if found > old {
                let te = clock.seconds();
                t.expand(found as f64 * spec.dt, p, spec, &mut rng)?;
                metrics.expand_time += clock.seconds() - te;
                events.push(PlanEvent::Expand { round, cost: found as f64 * spec.dt });
            }
        }
        if let Some(old) = before {
            if relative_change(found, old) <= config.eps {
                converged = true;
                break;
            }
        }
    }
    metrics.rounds = round;
    metrics.n_node = tree.alive_count();
    events.push(PlanEvent::Finished { round, converged });
    Ok(PlanResult { solution, metrics, events, best_effort: !converged, tree, samples, tis })
}

/// Time-informed planning: builds the time-informed set with `prop`, grows
/// an SST tree biased toward it, shrinks and prunes on every improvement and
/// expands by `delta2` after a round without a solution. Stops once a round
/// changes the cost by at most `eps` relative.
pub fn plan<P: Propagator + ?Sized>(
    problem: &PlanProblem,
    spec: &SystemSpec,
    prop: &P,
    config: &PlannerConfig,
    clock: &dyn Clock,
) -> Result<PlanResult> {
    run(problem, spec, Some(prop), config, clock)
}

/// Plain SST with the same stopping rule and metrics: uniform samples only,
/// no set, no pruning.
pub fn plan_sst_baseline(
    problem: &PlanProblem,
    spec: &SystemSpec,
    config: &PlannerConfig,
    clock: &dyn Clock,
) -> Result<PlanResult> {
    let cfg = PlannerConfig { mu: 0.0, ..config.clone() };
    run::<crate::reachability::TrueDynamics<'static>>(problem, spec, None, &cfg, clock)
}
