use alloc::vec::Vec;

use num_traits::Float;

use super::{DikuGrads, DikuModel, Direction};
use crate::{Error, Result};

/// Value and gradient of the K-step bidirectional loss on a batch.
#[derive(Debug, Clone)]
pub struct KStepLoss {
    pub loss: f64,
    /// Unweighted forward MSE at horizons `1..=K`.
    pub forward_mse: Vec<f64>,
    /// Unweighted backward MSE at horizons `1..=K` (horizon `i` predicts
    /// `X_{K-i}` from `X_K`).
    pub backward_mse: Vec<f64>,
    pub grads: DikuGrads,
}

/// K-step forward and backward loss
///
/// `L = sum_i gamma^(i-1) [MSE(X_i, C Z_i) + MSE(X_{K-i}, C W_{K-i})] / sum_i gamma^(i-1)`
///
/// where `Z` is rolled forward from `X_0` and `W` backward from `X_K`.
/// `states` holds `rows` windows of `(K + 1) x n` states and `controls` the
/// matching `K x m` controls.
pub fn k_step_loss(model: &DikuModel, states: &[f64], controls: &[f64], k: usize, gamma: f64) -> Result<KStepLoss> {
    let (n, m) = (model.n(), model.m());
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Config(alloc::format!("gamma must lie in (0, 1), got {gamma}")));
    }
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let rows = states.len() / ((k + 1) * n);
    if rows == 0 || states.len() != rows * (k + 1) * n {
        return Err(Error::Shape { expected: (k + 1) * n, got: states.len() });
    }
    if controls.len() != rows * k * m {
        return Err(Error::Shape { expected: rows * k * m, got: controls.len() });
    }
    let state_at = |r: usize, i: usize| &states[(r * (k + 1) + i) * n..(r * (k + 1) + i + 1) * n];

    let x0: Vec<f64> = (0..rows).flat_map(|r| state_at(r, 0).iter().copied()).collect();
    let xk: Vec<f64> = (0..rows).flat_map(|r| state_at(r, k).iter().copied()).collect();
    let reversed: Vec<f64> = (0..rows)
        .flat_map(|r| (0..k).rev().flat_map(move |j| controls[(r * k + j) * m..(r * k + j + 1) * m].iter().copied()))
        .collect();

    let fwd = model.trace(&x0, controls, k, Direction::Forward)?;
    let bwd = model.trace(&xk, &reversed, k, Direction::Backward)?;

    let weights: Vec<f64> = (0..k).map(|i| gamma.powi(i as i32)).collect();
    let norm: f64 = weights.iter().sum();
    let scale = 1.0 / (rows * n) as f64;

    let mut loss = 0.0;
    let mut forward_mse = alloc::vec![0.0; k];
    let mut backward_mse = alloc::vec![0.0; k];
    let mut gf = alloc::vec![Vec::new(); k + 1];
    let mut gb = alloc::vec![Vec::new(); k + 1];
    for i in 1..=k {
        let w = weights[i - 1] / norm;
        let mut g_f = alloc::vec![0.0; rows * n];
        let mut g_b = alloc::vec![0.0; rows * n];
        for r in 0..rows {
            let tf = state_at(r, i);
            let tb = state_at(r, k - i);
            for j in 0..n {
                let ef = fwd.states[i][r * n + j] - tf[j];
                let eb = bwd.states[i][r * n + j] - tb[j];
                forward_mse[i - 1] += ef * ef * scale;
                backward_mse[i - 1] += eb * eb * scale;
                g_f[r * n + j] = 2.0 * w * ef * scale;
                g_b[r * n + j] = 2.0 * w * eb * scale;
            }
        }
        loss += w * (forward_mse[i - 1] + backward_mse[i - 1]);
        gf[i] = g_f;
        gb[i] = g_b;
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("k-step loss"));
    }
    let mut grads = model.reverse(&fwd, &gf)?.params;
    grads.add(&model.reverse(&bwd, &gb)?.params);
    Ok(KStepLoss { loss, forward_mse, backward_mse, grads })
}

/// Loss value only, without recording tapes.
pub(crate) fn k_step_loss_value(model: &DikuModel, states: &[f64], controls: &[f64], k: usize, gamma: f64) -> Result<f64> {
    let (n, m) = (model.n(), model.m());
    let rows = states.len() / ((k + 1) * n);
    let state_at = |r: usize, i: usize| &states[(r * (k + 1) + i) * n..(r * (k + 1) + i + 1) * n];
    let x0: Vec<f64> = (0..rows).flat_map(|r| state_at(r, 0).iter().copied()).collect();
    let xk: Vec<f64> = (0..rows).flat_map(|r| state_at(r, k).iter().copied()).collect();
    let reversed: Vec<f64> = (0..rows)
        .flat_map(|r| (0..k).rev().flat_map(move |j| controls[(r * k + j) * m..(r * k + j + 1) * m].iter().copied()))
        .collect();
    let fwd = model.propagate(&x0, controls, k, Direction::Forward)?;
    let bwd = model.propagate(&xk, &reversed, k, Direction::Backward)?;
    let mut loss = 0.0;
    let mut norm = 0.0;
    for i in 1..=k {
        let w = gamma.powi(i as i32 - 1);
        norm += w;
        let mut sq = 0.0;
        for r in 0..rows {
            for j in 0..n {
                let ef = fwd[i][r * n + j] - state_at(r, i)[j];
                let eb = bwd[i][r * n + j] - state_at(r, k - i)[j];
                sq += ef * ef + eb * eb;
            }
        }
        loss += w * sq / (rows * n) as f64;
    }
    Ok(loss / norm)
}
