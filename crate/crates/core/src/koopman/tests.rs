use super::*;
use crate::dynamics::{generate_dataset, simulate, SplitCounts, SystemSpec};
use crate::neural::Activation;

fn small_config(n: usize, m: usize, d: usize) -> DikuConfig {
    DikuConfig {
        n,
        m,
        embed_dim: d,
        encoder_hidden: alloc::vec![8],
        coupling_hidden: alloc::vec![16, 8],
        coupling_activation: Activation::Relu,
        blocks: 1,
        features: Vec::new(),
        split_seed: 3,
        input_center: alloc::vec![0.0; n],
        input_half_width: alloc::vec![1.0; n],
        init_output_scale: 1.0,
    }
}

fn random_model(config: DikuConfig, seed: u64) -> DikuModel {
    scaled_model(config, seed, 0.5)
}

fn scaled_model(config: DikuConfig, seed: u64, scale: f64) -> DikuModel {
    let mut rng = seeded_rng(seed);
    let mut model = DikuModel::new(config, &mut rng).unwrap();
    // Non-zero biases everywhere, weights shrunk so long rollouts stay bounded.
    let p: Vec<f64> = model.params_flat().iter().map(|v| scale * v + rng.gen_range(-0.05..0.05)).collect();
    model.set_params_flat(&p).unwrap();
    model
}

fn uniform(rng: &mut crate::Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Exact discrete double integrator in the lifted space: x1 sits in the
/// first half and x2 in the second, `A2` copies `dt * x2`, `A1` is zero.
fn exact_double_integrator(dt: f64) -> DikuModel {
    let mut config = small_config(2, 1, 2);
    config.coupling_hidden = alloc::vec![2];
    config.coupling_activation = Activation::Linear;
    let mut model = DikuModel::zeroed(config).unwrap();
    let (h1, h2) = (model.half1.clone(), model.half2.clone());
    assert_eq!((h1[0], h2[0]), (0, 1));
    // A2: [2] -> [2] -> [2] linear, identity then pick input 0 into output 0.
    let mut a2 = alloc::vec![0.0; model.a2[0].num_params()];
    a2[0] = 1.0; // W1[0][0]
    a2[3] = 1.0; // W1[1][1]
    a2[6] = dt; // W2[0][0] after W1 (4) and b1 (2)
    model.a2[0].set_params(&a2).unwrap();
    let cx = model.lifted_dim();
    model.control = alloc::vec![0.0; cx];
    model.control[0] = 0.5 * dt * dt;
    model.control[1] = dt;
    model
}

#[test]
fn lift_then_recover_is_bitwise_identity() {
    let model = random_model(small_config(3, 2, 5), 1);
    let mut rng = seeded_rng(2);
    let x = uniform(&mut rng, 1000 * 3, 10.0);
    let z = model.lift(&x).unwrap();
    assert_eq!(z.len(), 1000 * 8);
    assert_eq!(model.recover(&z), x);
    assert_eq!(model.lift(&x).unwrap(), z);
}

#[test]
fn degenerate_configs_rejected() {
    assert!(DikuModel::zeroed(small_config(2, 1, 0)).is_err());
    assert!(DikuModel::zeroed(small_config(2, 1, 1)).is_err());
    let mut c = small_config(2, 1, 2);
    c.blocks = 0;
    assert!(DikuModel::zeroed(c).is_err());
    let mut c = small_config(2, 1, 1);
    c.features = alloc::vec![StateFeature::Sin { index: 0 }];
    let model = DikuModel::zeroed(c).unwrap();
    let z = model.lift(&[0.5, 1.0]).unwrap();
    assert_eq!(z[3], 0.5f64.sin());
}

#[test]
fn halves_interleave_state_coordinates() {
    let (h1, h2) = split_halves(6, 20, 9);
    assert_eq!(h1.len(), 10);
    assert_eq!(&h1[..3], &[0, 2, 4]);
    assert_eq!(&h2[..3], &[1, 3, 5]);
    let mut all: Vec<usize> = h1.iter().chain(&h2).copied().collect();
    all.sort();
    assert_eq!(all, (0..20).collect::<Vec<_>>());
    assert_eq!(split_halves(6, 20, 9), (h1, h2));
}

#[test]
fn zero_model_is_identity() {
    let model = DikuModel::zeroed(small_config(2, 1, 2)).unwrap();
    let z = [0.1, -0.2, 0.3, 0.4];
    assert_eq!(model.forward_step(&z, &[0.7]).unwrap(), z);
    assert_eq!(model.backward_step(&z, &[0.7]).unwrap(), z);
}

#[test]
fn single_and_composed_round_trips() {
    for seed in 0..20 {
        let model = scaled_model(small_config(2, 1, 2), seed, 0.2);
        let mut rng = seeded_rng(100 + seed);
        let z = uniform(&mut rng, 50 * 4, 1.0);
        let u = uniform(&mut rng, 50, 1.0);
        let there = model.forward_step(&z, &u).unwrap();
        let back = model.backward_step(&there, &u).unwrap();
        let err = z.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-10, "single step drift {err}");
        let back = model.backward_step(&z, &u).unwrap();
        let there = model.forward_step(&back, &u).unwrap();
        let err = z.iter().zip(&there).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-10);

        let controls = uniform(&mut rng, 100, 1.0);
        let mut cur = z[..4].to_vec();
        let mut peak: f64 = 0.0;
        for k in 0..100 {
            cur = model.forward_step(&cur, &controls[k..k + 1]).unwrap();
            peak = cur.iter().fold(peak, |a, v| a.max(v.abs()));
        }
        for k in (0..100).rev() {
            cur = model.backward_step(&cur, &controls[k..k + 1]).unwrap();
        }
        let err = z[..4].iter().zip(&cur).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-7, "100-step drift {err}");
        assert!(peak > 0.1 && peak < 1e3, "peak {peak}");
    }
}

#[test]
fn coupling_jacobian_has_unit_determinant() {
    let model = random_model(small_config(2, 1, 2), 4);
    let z = [0.3, -0.1, 0.5, 0.2];
    let u = [0.4];
    let h = 1e-6;
    let mut jac = [[0.0; 4]; 4];
    for j in 0..4 {
        let mut zp = z;
        zp[j] += h;
        let mut zm = z;
        zm[j] -= h;
        let fp = model.forward_step(&zp, &u).unwrap();
        let fm = model.forward_step(&zm, &u).unwrap();
        for i in 0..4 {
            jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    // Laplace expansion is fine at 4x4.
    fn det(m: &[[f64; 4]; 4]) -> f64 {
        let mut a = *m;
        let mut d = 1.0;
        for c in 0..4 {
            let p = (c..4).max_by(|x, y| a[*x][c].abs().total_cmp(&a[*y][c].abs())).unwrap();
            if p != c {
                a.swap(p, c);
                d = -d;
            }
            d *= a[c][c];
            for r in c + 1..4 {
                let f = a[r][c] / a[c][c];
                for k in c..4 {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
        d
    }
    assert!((det(&jac) - 1.0).abs() < 1e-6, "det {}", det(&jac));
}

#[test]
fn rollouts_invert_each_other() {
    let model = scaled_model(small_config(2, 1, 2), 5, 0.2);
    let mut rng = seeded_rng(6);
    let x0 = [0.2, -0.4];
    let controls = uniform(&mut rng, 100, 1.0);
    let fwd = model.rollout_forward(&x0, &controls).unwrap();
    assert_eq!(fwd.len(), 200);
    // Backward in the lifted space from the final lifted state.
    let mut z = model.lift(&x0).unwrap();
    for k in 0..100 {
        z = model.forward_step(&z, &controls[k..k + 1]).unwrap();
    }
    let z_final = z.clone();
    for k in (0..100).rev() {
        z = model.backward_step(&z, &controls[k..k + 1]).unwrap();
    }
    let z0 = model.lift(&x0).unwrap();
    let err = z0.iter().zip(&z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-7);
    assert_eq!(model.recover(&z_final), fwd[198..].to_vec());

    assert!(model.rollout_forward(&x0, &[]).unwrap().is_empty());
    let one = model.rollout_backward(&x0, &[0.3]).unwrap();
    let direct = model.recover(&model.backward_step(&model.lift(&x0).unwrap(), &[0.3]).unwrap());
    assert_eq!(one, direct);
}

#[test]
fn untrained_model_has_prediction_error() {
    let spec = SystemSpec::builtin("2d-l").unwrap();
    let model = random_model(DikuConfig::for_system(&spec), 7);
    let traj = simulate(&spec, &[0.0, 0.0], &[0.5; 30], spec.dt).unwrap();
    let pred = model.rollout_forward(traj.state(0), &traj.controls).unwrap();
    let err = crate::linalg::dist(&pred[29 * 2..], traj.state(30));
    assert!(err > 1e-3);
}

fn window_batch(spec: &SystemSpec, rows: usize, k: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = seeded_rng(seed);
    let mut states = Vec::new();
    let mut controls = Vec::new();
    while states.len() < rows * (k + 1) * spec.n {
        let x0: Vec<f64> = spec.x_lo.iter().zip(&spec.x_hi).map(|(l, h)| rng.gen_range(0.5 * l..0.5 * h)).collect();
        let u: Vec<f64> = (0..k).flat_map(|_| spec.sample_control(&mut rng)).collect();
        let traj = simulate(spec, &x0, &u, spec.dt).unwrap();
        if traj.len() == k + 1 {
            states.extend_from_slice(&traj.states);
            controls.extend_from_slice(&traj.controls);
        }
    }
    (states, controls)
}

#[test]
fn exact_model_has_zero_loss() {
    let spec = SystemSpec::builtin("2d-l").unwrap();
    let model = exact_double_integrator(spec.dt);
    let (s, c) = window_batch(&spec, 16, 5, 1);
    let out = k_step_loss(&model, &s, &c, 5, 0.9).unwrap();
    assert!(out.loss < 1e-24, "loss {}", out.loss);
}

#[test]
fn loss_weights_follow_gamma() {
    let spec = SystemSpec::builtin("2d-l").unwrap();
    let model = exact_double_integrator(spec.dt);
    let k = 4;
    let gamma: f64 = 0.9;
    let norm: f64 = (0..k).map(|i| gamma.powi(i as i32)).sum();
    assert!((norm - (1.0 - gamma.powi(k as i32)) / (1.0 - gamma)).abs() < 1e-12);
    let (s, c) = window_batch(&spec, 1, k, 2);
    for i in 1..k {
        let mut bad = s.clone();
        bad[i * 2] += 0.1;
        let out = k_step_loss(&model, &bad, &c, k, gamma).unwrap();
        let e2 = 0.01 / 2.0;
        // Forward horizon i and backward horizon K - i both see the error.
        let expected = (gamma.powi(i as i32 - 1) + gamma.powi((k - i) as i32 - 1)) * e2 / norm;
        assert!((out.loss - expected).abs() < 1e-12, "i={i}: {} vs {expected}", out.loss);
        for (h, v) in out.forward_mse.iter().enumerate() {
            let want = if h + 1 == i { e2 } else { 0.0 };
            assert!((v - want).abs() < 1e-14);
        }
    }
    // Horizon 1 carries weight 1 and horizon 2 weight gamma.
    let mut bad1 = s.clone();
    bad1[2] += 0.1;
    let mut bad2 = s.clone();
    bad2[4] += 0.1;
    let l1 = k_step_loss(&model, &bad1, &c, k, gamma).unwrap().forward_mse;
    let l2 = k_step_loss(&model, &bad2, &c, k, gamma).unwrap().forward_mse;
    assert_eq!((l1[0] > 0.0, l2[1] > 0.0), (true, true));
}

/// Central differences over every parameter of one group.
pub(crate) fn assert_loss_gradients(model: &DikuModel, s: &[f64], c: &[f64], k: usize) {
    let out = k_step_loss(model, s, c, k, 0.9).unwrap();
    let analytic = out.grads.flatten();
    let base = model.params_flat();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] += h;
        let mut mp = model.clone();
        mp.set_params_flat(&p).unwrap();
        let lp = k_step_loss(&mp, s, c, k, 0.9).unwrap().loss;
        p[i] -= 2.0 * h;
        mp.set_params_flat(&p).unwrap();
        let lm = k_step_loss(&mp, s, c, k, 0.9).unwrap().loss;
        let fd = (lp - lm) / (2.0 * h);
        let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
        worst = worst.max(rel);
    }
    assert!(worst < 1e-4, "worst relative gradient error {worst}");
}

#[test]
fn k_step_loss_gradients_match_finite_differences() {
    let spec = SystemSpec::builtin("2d-l").unwrap();
    let mut config = small_config(2, 1, 2);
    config.input_center = alloc::vec![0.0, 0.0];
    config.input_half_width = alloc::vec![5.0, 3.0];
    let model = random_model(config, 11);
    let (s, c) = window_batch(&spec, 4, 3, 3);
    assert_loss_gradients(&model, &s, &c, 3);
    let mut feat = small_config(2, 1, 1);
    feat.features = alloc::vec![StateFeature::Product { i: 0, j: 1 }];
    feat.blocks = 2;
    let model = random_model(feat, 12);
    assert_loss_gradients(&model, &s, &c, 3);
}

#[test]
fn reverse_gives_input_and_control_gradients() {
    let model = random_model(small_config(2, 1, 2), 13);
    let x0 = [0.3, -0.2, 0.1, 0.4];
    let controls = [0.1, -0.5, 0.7, 0.2, 0.0, -0.3];
    let steps = 3;
    for direction in [Direction::Forward, Direction::Backward] {
        let objective = |x0: &[f64], c: &[f64]| -> f64 {
            let slices = model.propagate(x0, c, steps, direction).unwrap();
            slices.iter().skip(1).flatten().map(|v| v * v).sum()
        };
        let trace = model.trace(&x0, &controls, steps, direction).unwrap();
        let grads: Vec<Vec<f64>> =
            trace.states.iter().enumerate().map(|(k, s)| if k == 0 { Vec::new() } else { s.iter().map(|v| 2.0 * v).collect() }).collect();
        let out = model.reverse(&trace, &grads).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let mut p = x0;
            p[i] += h;
            let mut m = x0;
            m[i] -= h;
            let fd = (objective(&p, &controls) - objective(&m, &controls)) / (2.0 * h);
            assert!((fd - out.x0[i]).abs() < 1e-6 * fd.abs().max(1.0), "{direction:?} x0[{i}]");
        }
        for i in 0..controls.len() {
            let mut p = controls;
            p[i] += h;
            let mut m = controls;
            m[i] -= h;
            let fd = (objective(&x0, &p) - objective(&x0, &m)) / (2.0 * h);
            assert!((fd - out.controls[i]).abs() < 1e-6 * fd.abs().max(1.0), "{direction:?} u[{i}]");
        }
    }
}

fn tiny_dataset() -> (SystemSpec, crate::dynamics::Dataset) {
    let spec = SystemSpec::builtin("2d-l").unwrap();
    let ds = generate_dataset(&spec, SplitCounts { train: 64, validation: 16, test: 16 }, 20, 4).unwrap();
    (spec, ds)
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let (spec, ds) = tiny_dataset();
    let mut config = DikuConfig::for_system(&spec);
    config.coupling_hidden = alloc::vec![16];
    let model = DikuModel::new(config, &mut seeded_rng(1)).unwrap();
    let tc = TrainConfig { lr: 0.0, epochs: 3, batch: 16, k_steps: 4, ..Default::default() };
    let report = train(&model, &ds, &tc).unwrap();
    assert_eq!(report.model.params_flat(), model.params_flat());
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let (spec, ds) = tiny_dataset();
    let mut config = DikuConfig::for_system(&spec);
    config.coupling_hidden = alloc::vec![32, 32];
    let model = DikuModel::new(config, &mut seeded_rng(2)).unwrap();
    let tc = TrainConfig { lr: 3e-3, epochs: 30, batch: 16, k_steps: 4, patience: 0, windows_per_trajectory: 2, ..Default::default() };
    let a = train(&model, &ds, &tc).unwrap();
    let b = train(&model, &ds, &tc).unwrap();
    assert_eq!(a.val_loss, b.val_loss);
    assert_eq!(a.model.params_flat(), b.model.params_flat());
    let best = a.val_loss.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(best < 0.5 * a.val_loss[0], "{:?}", a.val_loss);
}

#[test]
fn config_guards() {
    let (spec, ds) = tiny_dataset();
    let model = DikuModel::zeroed(DikuConfig::for_system(&spec)).unwrap();
    let bad = TrainConfig { gamma: 1.0, ..Default::default() };
    assert!(train(&model, &ds, &bad).is_err());
    let (s, c) = window_batch(&spec, 1, 2, 0);
    assert!(k_step_loss(&model, &s, &c, 2, 0.0).is_err());
    assert!(k_step_loss(&model, &s[..4], &c, 2, 0.5).is_err());
}

