//! Dense multilayer perceptrons with explicit reverse-mode gradients, weight
//! initialization and the Adam optimizer.
//!
//! Inputs are row-major batches: a slice of `rows * input_dim` values. A single
//! vector is a batch of one.

use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::linalg::gemm;
use crate::{Error, Result};

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// Activation applied after every hidden layer. The output layer is always
/// linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum InitScheme {
    /// `N(0, 2 / fan_in)`, for ReLU networks.
    He,
    /// `N(0, 2 / (fan_in + fan_out))`, for linear networks.
    Xavier,
}

impl InitScheme {
    pub fn for_activation(activation: Activation) -> Self {
        match activation {
            Activation::Relu => InitScheme::He,
            Activation::Linear => InitScheme::Xavier,
        }
    }
}

/// A fully connected network. Parameters live in one flat buffer; layer `l`
/// stores its `d_in x d_out` weight matrix row-major followed by `d_out`
/// biases.
#[derive(Debug)]
pub struct Mlp {
    dims: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
    version: u64,
}

impl Clone for Mlp {
    fn clone(&self) -> Self {
        Self {
            dims: self.dims.clone(),
            activation: self.activation,
            params: self.params.clone(),
            version: self.version,
        }
    }
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims && self.activation == other.activation && self.params == other.params
    }
}

/// Activations recorded by [`Mlp::forward_tape`].
#[derive(Debug, Clone)]
pub struct Tape {
    version: u64,
    rows: usize,
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
}

impl Tape {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Result of a backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub input: Vec<f64>,
    pub params: Vec<f64>,
}

impl Mlp {
    /// A zero-initialized network. `dims` lists every layer width including
    /// input and output.
    pub fn new(dims: &[usize], activation: Activation) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|d| *d == 0) {
            return Err(Error::Config(alloc::format!("invalid layer dims {dims:?}")));
        }
        let count = Self::count_params(dims);
        Ok(Self { dims: dims.to_vec(), activation, params: alloc::vec![0.0; count], version: fresh_version() })
    }

    pub fn from_parts(dims: &[usize], activation: Activation, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::new(dims, activation)?;
        if params.len() != net.params.len() {
            return Err(Error::Shape { expected: net.params.len(), got: params.len() });
        }
        net.params = params;
        Ok(net)
    }

    /// `sum(d_in * d_out + d_out)` over layers.
    pub fn count_params(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access; invalidates outstanding tapes.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version = fresh_version();
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape { expected: self.params.len(), got: params.len() });
        }
        self.params_mut().copy_from_slice(params);
        Ok(())
    }

    fn layer_offsets(&self, layer: usize) -> (usize, usize, usize) {
        let mut off = 0;
        for w in self.dims.windows(2).take(layer) {
            off += w[0] * w[1] + w[1];
        }
        let (d_in, d_out) = (self.dims[layer], self.dims[layer + 1]);
        (off, off + d_in * d_out, off + d_in * d_out + d_out)
    }

    /// Weight matrix (`d_in x d_out`) and bias of `layer`.
    pub fn layer(&self, layer: usize) -> (&[f64], &[f64]) {
        let (w, b, end) = self.layer_offsets(layer);
        (&self.params[w..b], &self.params[b..end])
    }

    /// Multiplies the weights and bias of `layer` by `factor`.
    pub fn scale_layer(&mut self, layer: usize, factor: f64) {
        let (w, _, end) = self.layer_offsets(layer);
        self.params[w..end].iter_mut().for_each(|p| *p *= factor);
        self.version = fresh_version();
    }

    /// Draws weights from the given scheme; biases are zeroed.
    pub fn init_params<R: Rng + ?Sized>(&mut self, scheme: InitScheme, rng: &mut R) {
        let layers = self.dims.len() - 1;
        for l in 0..layers {
            let (d_in, d_out) = (self.dims[l], self.dims[l + 1]);
            let var = match scheme {
                InitScheme::He => 2.0 / d_in as f64,
                InitScheme::Xavier => 2.0 / (d_in + d_out) as f64,
            };
            let normal = Normal::new(0.0, var.sqrt()).expect("finite variance");
            let (w, b, end) = self.layer_offsets(l);
            for p in &mut self.params[w..b] {
                *p = normal.sample(rng);
            }
            for p in &mut self.params[b..end] {
                *p = 0.0;
            }
        }
        self.version = fresh_version();
    }

    fn rows_of(&self, input: &[f64]) -> Result<usize> {
        let d = self.input_dim();
        if input.len() % d != 0 {
            return Err(Error::Shape { expected: d, got: input.len() % d });
        }
        Ok(input.len() / d)
    }

    /// Batch forward pass without recording.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let rows = self.rows_of(input)?;
        let layers = self.dims.len() - 1;
        let mut cur = input.to_vec();
        for l in 0..layers {
            cur = self.layer_forward(l, &cur, rows, l + 1 < layers);
        }
        Ok(cur)
    }

    /// Batch forward pass recording the activations needed by
    /// [`Mlp::backward`].
    pub fn forward_tape(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        let rows = self.rows_of(input)?;
        let layers = self.dims.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(input.to_vec());
        for l in 0..layers {
            let next = self.layer_forward(l, &acts[l], rows, l + 1 < layers);
            acts.push(next);
        }
        let out = acts[layers].clone();
        Ok((out, Tape { version: self.version, rows, acts }))
    }

    fn layer_forward(&self, l: usize, x: &[f64], rows: usize, hidden: bool) -> Vec<f64> {
        let (d_in, d_out) = (self.dims[l], self.dims[l + 1]);
        let (w, b) = self.layer(l);
        let mut out = Vec::with_capacity(rows * d_out);
        for _ in 0..rows {
            out.extend_from_slice(b);
        }
        gemm(rows, d_in, d_out, 1.0, x, false, w, false, 1.0, &mut out);
        if hidden && self.activation == Activation::Relu {
            for v in &mut out {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        out
    }

    /// Reverse pass. Parameter gradients are accumulated into `param_grad`
    /// (same layout as [`Mlp::params`]); the input gradient is returned.
    pub fn backward_into(&self, tape: &Tape, out_grad: &[f64], param_grad: &mut [f64]) -> Result<Vec<f64>> {
        if tape.version != self.version {
            return Err(Error::StaleTape);
        }
        if param_grad.len() != self.params.len() {
            return Err(Error::Shape { expected: self.params.len(), got: param_grad.len() });
        }
        let rows = tape.rows;
        let layers = self.dims.len() - 1;
        if out_grad.len() != rows * self.output_dim() {
            return Err(Error::Shape { expected: rows * self.output_dim(), got: out_grad.len() });
        }
        let mut g = out_grad.to_vec();
        for l in (0..layers).rev() {
            let (d_in, d_out) = (self.dims[l], self.dims[l + 1]);
            if l + 1 < layers && self.activation == Activation::Relu {
                for (gi, a) in g.iter_mut().zip(&tape.acts[l + 1]) {
                    if *a <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            let (w_off, b_off, end) = self.layer_offsets(l);
            gemm(d_in, rows, d_out, 1.0, &tape.acts[l], true, &g, false, 1.0, &mut param_grad[w_off..b_off]);
            let db = &mut param_grad[b_off..end];
            for r in 0..rows {
                for (d, gv) in db.iter_mut().zip(&g[r * d_out..(r + 1) * d_out]) {
                    *d += gv;
                }
            }
            let mut prev = alloc::vec![0.0; rows * d_in];
            gemm(rows, d_out, d_in, 1.0, &g, false, &self.params[w_off..b_off], true, 0.0, &mut prev);
            g = prev;
        }
        Ok(g)
    }

    pub fn backward(&self, tape: &Tape, out_grad: &[f64]) -> Result<MlpGrads> {
        let mut params = alloc::vec![0.0; self.params.len()];
        let input = self.backward_into(tape, out_grad, &mut params)?;
        Ok(MlpGrads { input, params })
    }
}

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self::with_hyper(num_params, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(num_params: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            first: alloc::vec![0.0; num_params],
            second: alloc::vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Rejects non-finite gradients before touching any
    /// state.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(Error::Shape { expected: self.first.len(), got: params.len() });
        }
        if grads.len() != params.len() {
            return Err(Error::Shape { expected: params.len(), got: grads.len() });
        }
        if let Some((index, value)) = grads.iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index, value: *value });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.first[i] = self.beta1 * self.first[i] + (1.0 - self.beta1) * g;
            self.second[i] = self.beta2 * self.second[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first[i] / c1;
            let v_hat = self.second[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn random_net(dims: &[usize], act: Activation, seed: u64) -> Mlp {
        let mut net = Mlp::new(dims, act).unwrap();
        let mut rng = seeded_rng(seed);
        net.init_params(InitScheme::for_activation(act), &mut rng);
        // Non-zero biases so their gradients are exercised too.
        let n = net.num_params();
        let noise: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let p: Vec<f64> = net.params().iter().zip(&noise).map(|(a, b)| a + b).collect();
        net.set_params(&p).unwrap();
        net
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::new(&[3, 5, 2], Activation::Relu).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), [0.0, 0.0]);
        assert_eq!(net.num_params(), 3 * 5 + 5 + 5 * 2 + 2);
    }

    #[test]
    fn identity_linear_net() {
        let mut net = Mlp::new(&[3, 3], Activation::Linear).unwrap();
        let mut p = alloc::vec![0.0; 12];
        for i in 0..3 {
            p[i * 3 + i] = 1.0;
        }
        net.set_params(&p).unwrap();
        let x = [0.3, -1.5, 2.0, 4.0, 5.0, 6.0];
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn batch_equals_stacked_rows() {
        let net = random_net(&[4, 16, 8, 3], Activation::Relu, 3);
        let mut rng = seeded_rng(9);
        let batch: Vec<f64> = (0..7 * 4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let all = net.forward(&batch).unwrap();
        for r in 0..7 {
            let one = net.forward(&batch[r * 4..(r + 1) * 4]).unwrap();
            for (a, b) in one.iter().zip(&all[r * 3..(r + 1) * 3]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_eq!(net.forward(&batch).unwrap(), all);
    }

    #[test]
    fn shape_errors() {
        let net = Mlp::new(&[3, 2], Activation::Relu).unwrap();
        assert!(matches!(net.forward(&[1.0, 2.0]), Err(Error::Shape { .. })));
        assert!(Mlp::new(&[3, 0, 2], Activation::Relu).is_err());
        assert!(Mlp::new(&[3], Activation::Relu).is_err());
    }

    #[test]
    fn linear_input_grad_is_transpose() {
        let mut net = Mlp::new(&[2, 3], Activation::Linear).unwrap();
        // W stored d_in x d_out; the map is y = W^T x.
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut p = w.to_vec();
        p.extend_from_slice(&[0.0; 3]);
        net.set_params(&p).unwrap();
        let (_, tape) = net.forward_tape(&[0.5, -1.0]).unwrap();
        let g = [1.0, -1.0, 2.0];
        let grads = net.backward(&tape, &g).unwrap();
        let expected = [1.0 - 2.0 + 6.0, 4.0 - 5.0 + 12.0];
        assert_eq!(grads.input, expected);
        let zero = net.backward(&tape, &[0.0; 3]).unwrap();
        assert!(zero.input.iter().chain(&zero.params).all(|v| *v == 0.0));
    }

    #[test]
    fn stale_tape_rejected() {
        let mut net = random_net(&[2, 4, 1], Activation::Relu, 1);
        let (_, tape) = net.forward_tape(&[0.1, 0.2]).unwrap();
        net.params_mut()[0] += 1.0;
        assert_eq!(net.backward(&tape, &[1.0]).unwrap_err(), Error::StaleTape);
    }

    fn fd_check(dims: &[usize], act: Activation, seed: u64) {
        let net = random_net(dims, act, seed);
        let mut rng = seeded_rng(seed + 100);
        let rows = 3;
        let x: Vec<f64> = (0..rows * dims[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..rows * net.output_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |net: &Mlp, x: &[f64]| -> f64 {
            net.forward(x).unwrap().iter().zip(&g).map(|(a, b)| a * b).sum()
        };
        let (_, tape) = net.forward_tape(&x).unwrap();
        let grads = net.backward(&tape, &g).unwrap();
        let h = 1e-5;
        let rel = |a: f64, b: f64| (a - b).abs() / (a.abs().max(b.abs()).max(1e-3));
        for probe in 0..100 {
            let i = (probe * 7919 + seed as usize) % net.num_params();
            let mut plus = net.clone();
            plus.params_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[i] -= h;
            let fd = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * h);
            assert!(rel(fd, grads.params[i]) < 1e-4, "param {i}: fd {fd} vs {}", grads.params[i]);
        }
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * h);
            assert!(rel(fd, grads.input[i]) < 1e-4);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        fd_check(&[2, 128, 64, 32, 2], Activation::Relu, 1);
        fd_check(&[3, 128, 64, 32, 3], Activation::Linear, 2);
        fd_check(&[2, 32, 32, 2], Activation::Relu, 3);
    }

    #[test]
    fn init_variance_matches_scheme() {
        let mut rng = seeded_rng(5);
        for (scheme, expected) in [(InitScheme::He, 2.0 / 128.0), (InitScheme::Xavier, 2.0 / 256.0)] {
            let mut net = Mlp::new(&[128, 128], Activation::Relu).unwrap();
            net.init_params(scheme, &mut rng);
            let (w, b) = net.layer(0);
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w.len() as f64;
            assert!((var / expected - 1.0).abs() < 0.1, "{scheme:?}: {var} vs {expected}");
            assert!(b.iter().all(|v| *v == 0.0));
        }
        let mut a = Mlp::new(&[4, 8, 2], Activation::Relu).unwrap();
        let mut b = a.clone();
        a.init_params(InitScheme::He, &mut seeded_rng(11));
        b.init_params(InitScheme::He, &mut seeded_rng(11));
        assert_eq!(a, b);
    }

    #[test]
    fn adam_first_step_is_lr_sign() {
        let mut adam = Adam::new(3, 0.001);
        let mut p = [1.0, 2.0, 3.0];
        adam.step(&mut p, &[0.5, -2.0, 1e-3]).unwrap();
        // m_hat = g and v_hat = g^2, so the step is lr * g / (|g| + eps).
        let expected = [1.0 - 0.001 * 0.5 / (0.5 + 1e-8), 2.0 + 0.001 * 2.0 / (2.0 + 1e-8), 3.0 - 0.001 * 1e-3 / (1e-3 + 1e-8)];
        for (a, b) in p.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(adam.steps_taken(), 1);
    }

    #[test]
    fn adam_zero_grads_and_errors() {
        let mut adam = Adam::new(2, 0.1);
        let mut p = [1.0, -1.0];
        for _ in 0..10 {
            adam.step(&mut p, &[0.0, 0.0]).unwrap();
        }
        assert_eq!(p, [1.0, -1.0]);
        let err = adam.step(&mut p, &[0.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { index: 1, .. }));
        assert!(adam.step(&mut p, &[0.0]).is_err());
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut adam = Adam::new(2, 0.01);
            let mut p = [0.3, -0.2];
            let mut history = Vec::new();
            for k in 0..20 {
                let g = [p[0] * 2.0 + k as f64 * 0.01, p[1] - 1.0];
                adam.step(&mut p, &g).unwrap();
                history.push(p);
            }
            history
        };
        assert_eq!(run(), run());
    }
}
