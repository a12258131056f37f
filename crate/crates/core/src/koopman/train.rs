use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use super::loss::k_step_loss_value;
use super::{k_step_loss, DikuModel, Direction};
use crate::dynamics::{Dataset, Trajectory};
use crate::neural::Adam;
use crate::{seeded_rng, Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub k_steps: usize,
    pub gamma: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Stop after this many epochs without a validation improvement; 0
    /// disables early stopping.
    pub patience: usize,
    /// Random windows drawn per training trajectory per epoch.
    pub windows_per_trajectory: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k_steps: 10,
            gamma: 0.9,
            lr: 1e-3,
            batch: 1024,
            epochs: 200,
            seed: 0,
            patience: 20,
            windows_per_trajectory: 1,
        }
    }
}

impl TrainConfig {
    /// Settings that train the builtin systems well from a thousand
    /// trajectories: smaller minibatches and several windows per trajectory
    /// give enough optimizer steps, and the nonlinear systems use a longer
    /// rollout so that 100-step predictions stay stable.
    pub fn for_system(system: &str) -> Self {
        let base = Self { batch: 128, patience: 40, ..Self::default() };
        match system {
            "2d-l" => Self { windows_per_trajectory: 8, ..base },
            _ => Self { k_steps: 30, windows_per_trajectory: 4, ..base },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_steps == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config("gamma must lie in (0, 1)".into()));
        }
        if self.batch == 0 || self.windows_per_trajectory == 0 {
            return Err(Error::Config("batch and windows per trajectory must be positive".into()));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::Config("learning rate must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Parameters with the best validation loss.
    pub model: DikuModel,
    /// Mean minibatch loss per epoch.
    pub train_loss: Vec<f64>,
    /// Validation loss before training (index 0) and after every epoch.
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

struct Windows<'a> {
    trajectories: &'a [Trajectory],
    index: Vec<(usize, usize)>,
}

impl<'a> Windows<'a> {
    fn new(trajectories: &'a [Trajectory], k: usize) -> Self {
        let index = trajectories
            .iter()
            .enumerate()
            .flat_map(|(t, traj)| (0..traj.len().saturating_sub(k)).map(move |s| (t, s)))
            .collect();
        Self { trajectories, index }
    }

    fn assemble(&self, picks: &[(usize, usize)], k: usize) -> (Vec<f64>, Vec<f64>) {
        let mut states = Vec::new();
        let mut controls = Vec::new();
        for &(t, s) in picks {
            let traj = &self.trajectories[t];
            states.extend_from_slice(&traj.states[s * traj.n..(s + k + 1) * traj.n]);
            controls.extend_from_slice(&traj.controls[s * traj.m..(s + k) * traj.m]);
        }
        (states, controls)
    }
}

fn evaluate(model: &DikuModel, windows: &Windows, picks: &[(usize, usize)], config: &TrainConfig) -> Result<f64> {
    let mut total = 0.0;
    for chunk in picks.chunks(config.batch.max(1)) {
        let (s, c) = windows.assemble(chunk, config.k_steps);
        total += k_step_loss_value(model, &s, &c, config.k_steps, config.gamma)? * chunk.len() as f64;
    }
    Ok(total / picks.len() as f64)
}

/// Minibatch Adam on the K-step loss. Returns the parameters that scored
/// best on the validation split.
pub fn train(model: &DikuModel, dataset: &Dataset, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if dataset.n != model.n() || dataset.m != model.m() {
        return Err(Error::Config(alloc::format!(
            "dataset dims ({}, {}) do not match model ({}, {})",
            dataset.n,
            dataset.m,
            model.n(),
            model.m()
        )));
    }
    let k = config.k_steps;
    let train_windows = Windows::new(&dataset.train, k);
    let val_windows = Windows::new(&dataset.validation, k);
    if train_windows.index.is_empty() || val_windows.index.is_empty() {
        return Err(Error::Config(alloc::format!("no trajectory is long enough for K = {k}")));
    }
    let mut rng = seeded_rng(config.seed);
    let mut val_rng = seeded_rng(config.seed ^ 0x5eed_0f_7a11);
    let val_picks: Vec<(usize, usize)> = dataset
        .validation
        .iter()
        .enumerate()
        .filter(|(_, t)| t.len() > k)
        .map(|(i, t)| (i, val_rng.gen_range(0..t.len() - k)))
        .collect();

    let mut model = model.clone();
    let mut params = model.params_flat();
    let mut adam = Adam::new(params.len(), config.lr);
    let initial = evaluate(&model, &val_windows, &val_picks, config)?;
    if !initial.is_finite() {
        return Err(Error::Diverged { epoch: 0, loss: initial });
    }
    let mut val_loss = alloc::vec![initial];
    let mut train_loss = Vec::with_capacity(config.epochs);
    let mut best = (initial, 0usize, params.clone());
    let mut stopped_early = false;
    let per_epoch = dataset.train.len() * config.windows_per_trajectory;

    for epoch in 1..=config.epochs {
        let picks: Vec<(usize, usize)> = (0..per_epoch)
            .map(|_| train_windows.index[rng.gen_range(0..train_windows.index.len())])
            .collect();
        let mut epoch_loss = 0.0;
        for chunk in picks.chunks(config.batch) {
            let (s, c) = train_windows.assemble(chunk, k);
            let out = k_step_loss(&model, &s, &c, k, config.gamma)?;
            epoch_loss += out.loss * chunk.len() as f64;
            adam.step(&mut params, &out.grads.flatten())?;
            model.set_params_flat(&params)?;
        }
        train_loss.push(epoch_loss / picks.len() as f64);
        let v = evaluate(&model, &val_windows, &val_picks, config)?;
        if !v.is_finite() {
            return Err(Error::Diverged { epoch, loss: v });
        }
        val_loss.push(v);
        if v < best.0 {
            best = (v, epoch, params.clone());
        }
        if config.patience > 0 && epoch - best.1 >= config.patience {
            stopped_early = true;
            break;
        }
    }
    model.set_params_flat(&best.2)?;
    Ok(TrainReport { model, train_loss, val_loss, best_epoch: best.1, stopped_early })
}

/// Long-horizon prediction errors on full-length trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionReport {
    pub direction: Direction,
    pub horizon: usize,
    /// Mean Euclidean state error at each step `1..=horizon` away from the
    /// starting state.
    pub per_step_mean: Vec<f64>,
    /// Maximum Euclidean error over the horizon, per trajectory.
    pub per_trajectory_max: Vec<f64>,
    pub mean_log10_max: f64,
}

impl PredictionReport {
    pub fn max_error(&self) -> f64 {
        self.per_trajectory_max.iter().copied().fold(0.0, f64::max)
    }

    pub fn median_max_error(&self) -> f64 {
        let mut v = self.per_trajectory_max.clone();
        v.sort_by(|a, b| a.total_cmp(b));
        if v.is_empty() {
            return f64::NAN;
        }
        v[v.len() / 2]
    }
}

/// Rolls the model over every trajectory with at least `horizon + 1` states.
/// Forward predictions start from state 0; backward predictions start from
/// state `horizon` and run back to state 0.
pub fn prediction_errors(
    model: &DikuModel,
    trajectories: &[Trajectory],
    horizon: usize,
    direction: Direction,
) -> Result<PredictionReport> {
    let (n, m) = (model.n(), model.m());
    let usable: Vec<&Trajectory> = trajectories.iter().filter(|t| t.len() > horizon).collect();
    if usable.is_empty() || horizon == 0 {
        return Err(Error::Config(alloc::format!("no trajectory covers a horizon of {horizon}")));
    }
    let rows = usable.len();
    let mut start = Vec::with_capacity(rows * n);
    let mut controls = Vec::with_capacity(rows * horizon * m);
    for t in &usable {
        match direction {
            Direction::Forward => {
                start.extend_from_slice(t.state(0));
                controls.extend_from_slice(&t.controls[..horizon * m]);
            }
            Direction::Backward => {
                start.extend_from_slice(t.state(horizon));
                for j in (0..horizon).rev() {
                    controls.extend_from_slice(t.control(j));
                }
            }
        }
    }
    let slices = model.propagate(&start, &controls, horizon, direction)?;
    let mut per_step_mean = alloc::vec![0.0; horizon];
    let mut per_trajectory_max = alloc::vec![0.0f64; rows];
    for i in 1..=horizon {
        for (r, t) in usable.iter().enumerate() {
            let truth = match direction {
                Direction::Forward => t.state(i),
                Direction::Backward => t.state(horizon - i),
            };
            let pred = &slices[i][r * n..(r + 1) * n];
            let err = crate::linalg::dist(pred, truth);
            per_step_mean[i - 1] += err / rows as f64;
            per_trajectory_max[r] = per_trajectory_max[r].max(err);
        }
    }
    let mean_log10_max =
        per_trajectory_max.iter().map(|e| e.max(1e-300).log10()).sum::<f64>() / rows as f64;
    Ok(PredictionReport { direction, horizon, per_step_mean, per_trajectory_max, mean_log10_max })
}
