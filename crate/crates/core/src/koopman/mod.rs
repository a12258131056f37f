//! Invertible lifted dynamics with control.
//!
//! A state `x` is lifted to `z = [x; e(x); c(x)]` where `e` is a learned
//! encoder and `c` optional fixed constraint features. The lifted vector is
//! split into two halves `z1`, `z2` by a fixed index permutation and advanced
//! with additive coupling blocks:
//!
//! ```text
//! z1' = z1 + A2(z2)  + u1
//! z2' = z2 + A1(z1') + u2
//! ```
//!
//! where `[u1; u2]` is a linear image of the control. The inverse subtracts
//! the same translations in reverse order, so backward prediction is exact
//! for any weights. Recovery selects the first `n` lifted coordinates.

mod loss;
mod train;

use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::neural::{Activation, InitScheme, Mlp, Tape};
use crate::{seeded_rng, Error, Result};

pub use loss::{k_step_loss, KStepLoss};
pub use train::{prediction_errors, train, PredictionReport, TrainConfig, TrainReport};

/// A fixed nonlinear function of the state appended to the lifted vector.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum StateFeature {
    Sin { index: usize },
    Cos { index: usize },
    Product { i: usize, j: usize },
}

impl StateFeature {
    fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            StateFeature::Sin { index } => x[index].sin(),
            StateFeature::Cos { index } => x[index].cos(),
            StateFeature::Product { i, j } => x[i] * x[j],
        }
    }

    fn accumulate_grad(&self, x: &[f64], g: f64, gx: &mut [f64]) {
        match *self {
            StateFeature::Sin { index } => gx[index] += g * x[index].cos(),
            StateFeature::Cos { index } => gx[index] -= g * x[index].sin(),
            StateFeature::Product { i, j } => {
                gx[i] += g * x[j];
                gx[j] += g * x[i];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DikuConfig {
    pub n: usize,
    pub m: usize,
    /// Learned embedding dimension `d`.
    pub embed_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub coupling_hidden: Vec<usize>,
    /// Hidden activation of the coupling translation networks.
    pub coupling_activation: Activation,
    /// Number of coupling blocks per step; the control enters the first.
    pub blocks: usize,
    pub features: Vec<StateFeature>,
    /// Seeds the assignment of lifted coordinates to the two halves.
    pub split_seed: u64,
    /// Encoder input normalization: the encoder sees `(x - center) / half_width`.
    pub input_center: Vec<f64>,
    pub input_half_width: Vec<f64>,
    /// Output layers of the translation networks and the control map are
    /// drawn at this fraction of their usual scale, so an untrained step is
    /// close to the identity.
    #[cfg_attr(feature = "serde", serde(default = "unit_scale"))]
    pub init_output_scale: f64,
}

#[cfg(feature = "serde")]
fn unit_scale() -> f64 {
    1.0
}

/// Default [`DikuConfig::init_output_scale`] for builtin systems.
pub const INIT_OUTPUT_SCALE: f64 = 0.05;

/// Embedding dimensions pinned per builtin system.
pub fn default_embed_dim(system: &str) -> Option<usize> {
    Some(match system {
        "2d-l" => 2,
        "3d-pnl" => 5,
        "cartpole" => 12,
        "damping-pendulum" => 6,
        "acrobot" => 12,
        "planar-quadrotor" => 14,
        _ => return None,
    })
}

impl DikuConfig {
    /// Defaults for a system: `[128, 64, 32]` translation networks, ReLU
    /// except for the planar quadrotor, a `[64, 64]` encoder and one block.
    pub fn for_system(spec: &crate::dynamics::SystemSpec) -> Self {
        let embed_dim = default_embed_dim(&spec.name).unwrap_or(spec.n + (spec.n % 2));
        let coupling_activation = if spec.name == "planar-quadrotor" { Activation::Linear } else { Activation::Relu };
        Self {
            n: spec.n,
            m: spec.m,
            embed_dim,
            encoder_hidden: alloc::vec![64, 64],
            coupling_hidden: alloc::vec![128, 64, 32],
            coupling_activation,
            blocks: 1,
            features: Vec::new(),
            split_seed: 0,
            input_center: spec.x_lo.iter().zip(&spec.x_hi).map(|(l, h)| 0.5 * (l + h)).collect(),
            input_half_width: spec.x_lo.iter().zip(&spec.x_hi).map(|(l, h)| 0.5 * (h - l)).collect(),
            init_output_scale: INIT_OUTPUT_SCALE,
        }
    }

    pub fn lifted_dim(&self) -> usize {
        self.n + self.embed_dim + self.features.len()
    }

    pub fn validate(&self) -> Result<()> {
        let cx = self.lifted_dim();
        if self.n == 0 || self.m == 0 {
            return Err(Error::Config("state and control dimensions must be positive".into()));
        }
        if self.embed_dim == 0 || cx <= self.n || cx % 2 != 0 {
            return Err(Error::Config(alloc::format!(
                "lifted dimension {cx} must exceed n = {} and be even with a non-empty embedding",
                self.n
            )));
        }
        if !(self.init_output_scale >= 0.0 && self.init_output_scale.is_finite()) {
            return Err(Error::Config("initial output scale must be finite and non-negative".into()));
        }
        if self.blocks == 0 {
            return Err(Error::Config("at least one coupling block is required".into()));
        }
        if self.input_center.len() != self.n || self.input_half_width.len() != self.n {
            return Err(Error::Shape { expected: self.n, got: self.input_center.len() });
        }
        if self.input_half_width.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Config("encoder input half widths must be positive".into()));
        }
        for f in &self.features {
            let ok = match *f {
                StateFeature::Sin { index } | StateFeature::Cos { index } => index < self.n,
                StateFeature::Product { i, j } => i < self.n && j < self.n,
            };
            if !ok {
                return Err(Error::Config("state feature index out of range".into()));
            }
        }
        Ok(())
    }
}

/// Assigns lifted coordinates to halves: state coordinates alternate between
/// the halves, the remaining coordinates are shuffled with `seed` and fill the
/// free slots.
pub fn split_halves(n: usize, lifted: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let half = lifted / 2;
    let mut h1: Vec<usize> = (0..n).filter(|i| i % 2 == 0).collect();
    let mut h2: Vec<usize> = (0..n).filter(|i| i % 2 == 1).collect();
    let mut rest: Vec<usize> = (n..lifted).collect();
    rest.shuffle(&mut seeded_rng(seed));
    for idx in rest {
        if h1.len() < half {
            h1.push(idx);
        } else {
            h2.push(idx);
        }
    }
    (h1, h2)
}

/// The invertible lifted model.
#[derive(Debug, Clone, PartialEq)]
pub struct DikuModel {
    config: DikuConfig,
    encoder: Mlp,
    /// `A1` per block: maps the first half to a translation of the second.
    a1: Vec<Mlp>,
    /// `A2` per block: maps the second half to a translation of the first.
    a2: Vec<Mlp>,
    /// Control map stored `m x c_x`, so `u_hat = u * control`.
    control: Vec<f64>,
    half1: Vec<usize>,
    half2: Vec<usize>,
}

/// Gradients of a scalar objective with respect to the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DikuGrads {
    pub encoder: Vec<f64>,
    pub a1: Vec<Vec<f64>>,
    pub a2: Vec<Vec<f64>>,
    pub control: Vec<f64>,
}

impl DikuGrads {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.encoder.clone();
        for g in &self.a1 {
            out.extend_from_slice(g);
        }
        for g in &self.a2 {
            out.extend_from_slice(g);
        }
        out.extend_from_slice(&self.control);
        out
    }

    fn add(&mut self, other: &DikuGrads) {
        let add = |a: &mut Vec<f64>, b: &Vec<f64>| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.encoder, &other.encoder);
        for (a, b) in self.a1.iter_mut().zip(&other.a1) {
            add(a, b);
        }
        for (a, b) in self.a2.iter_mut().zip(&other.a2) {
            add(a, b);
        }
        add(&mut self.control, &other.control);
    }
}

/// Direction of a rollout in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Direction {
    Forward,
    Backward,
}

struct BlockTapes {
    /// Tape of the translation applied to `z1` (`A2`).
    t2: Tape,
    /// Tape of the translation applied to `z2` (`A1`).
    t1: Tape,
}

/// Everything a reverse pass through a batched rollout needs.
pub struct RolloutTrace {
    direction: Direction,
    rows: usize,
    x0: Vec<f64>,
    encoder_tape: Tape,
    steps: Vec<Vec<BlockTapes>>,
    controls: Vec<Vec<f64>>,
    /// Recovered states per slice, `rows x n` each; slice 0 is `x0`.
    pub states: Vec<Vec<f64>>,
}

/// Gradients returned by [`DikuModel::reverse`].
pub struct TraceGrads {
    pub params: DikuGrads,
    /// `rows x n`.
    pub x0: Vec<f64>,
    /// `rows x steps x m`, laid out like the rollout's control input.
    pub controls: Vec<f64>,
}

fn gather(z: &[f64], cx: usize, idx: &[usize]) -> Vec<f64> {
    let rows = z.len() / cx;
    let h = idx.len();
    let mut out = alloc::vec![0.0; rows * h];
    for r in 0..rows {
        for (k, &i) in idx.iter().enumerate() {
            out[r * h + k] = z[r * cx + i];
        }
    }
    out
}

fn scatter(z: &mut [f64], cx: usize, idx: &[usize], part: &[f64]) {
    let h = idx.len();
    let rows = part.len() / h;
    for r in 0..rows {
        for (k, &i) in idx.iter().enumerate() {
            z[r * cx + i] = part[r * h + k];
        }
    }
}

fn add_assign(a: &mut [f64], b: &[f64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

fn sub_assign(a: &mut [f64], b: &[f64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x -= y);
}

fn check_finite(v: &[f64], what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

impl DikuModel {
    /// Randomly initialized model: He/Xavier by activation, control map
    /// Xavier-scaled.
    pub fn new<R: Rng + ?Sized>(config: DikuConfig, rng: &mut R) -> Result<Self> {
        let mut model = Self::zeroed(config)?;
        model.encoder.init_params(InitScheme::He, rng);
        let scheme = InitScheme::for_activation(model.config.coupling_activation);
        let scale = model.config.init_output_scale;
        for net in model.a1.iter_mut().chain(model.a2.iter_mut()) {
            net.init_params(scheme, rng);
            net.scale_layer(net.dims().len() - 2, scale);
        }
        let cx = model.lifted_dim();
        let std = scale * (2.0 / (cx + model.config.m) as f64).sqrt();
        let normal = rand_distr::Normal::new(0.0, std).expect("finite");
        for v in &mut model.control {
            *v = rand_distr::Distribution::sample(&normal, rng);
        }
        Ok(model)
    }

    /// All networks and the control map set to zero: the lifted step is the
    /// identity.
    pub fn zeroed(config: DikuConfig) -> Result<Self> {
        config.validate()?;
        let cx = config.lifted_dim();
        let h = cx / 2;
        let mut enc_dims = alloc::vec![config.n];
        enc_dims.extend_from_slice(&config.encoder_hidden);
        enc_dims.push(config.embed_dim);
        let encoder = Mlp::new(&enc_dims, Activation::Relu)?;
        let mut cdims = alloc::vec![h];
        cdims.extend_from_slice(&config.coupling_hidden);
        cdims.push(h);
        let mut a1 = Vec::new();
        let mut a2 = Vec::new();
        for _ in 0..config.blocks {
            a1.push(Mlp::new(&cdims, config.coupling_activation)?);
            a2.push(Mlp::new(&cdims, config.coupling_activation)?);
        }
        let (half1, half2) = split_halves(config.n, cx, config.split_seed);
        let control = alloc::vec![0.0; config.m * cx];
        Ok(Self { config, encoder, a1, a2, control, half1, half2 })
    }

    /// Rebuilds a model from a configuration, explicit halves and a flat
    /// parameter vector.
    pub fn from_parts(config: DikuConfig, half1: Vec<usize>, half2: Vec<usize>, params: &[f64]) -> Result<Self> {
        let mut model = Self::zeroed(config)?;
        let cx = model.lifted_dim();
        let mut seen = alloc::vec![false; cx];
        if half1.len() != cx / 2 || half2.len() != cx / 2 {
            return Err(Error::Config("halves must each hold c_x / 2 indices".into()));
        }
        for &i in half1.iter().chain(&half2) {
            if i >= cx || seen[i] {
                return Err(Error::Config("halves must partition the lifted coordinates".into()));
            }
            seen[i] = true;
        }
        model.half1 = half1;
        model.half2 = half2;
        model.set_params_flat(params)?;
        Ok(model)
    }

    pub fn config(&self) -> &DikuConfig {
        &self.config
    }

    pub fn n(&self) -> usize {
        self.config.n
    }

    pub fn m(&self) -> usize {
        self.config.m
    }

    pub fn lifted_dim(&self) -> usize {
        self.config.lifted_dim()
    }

    pub fn halves(&self) -> (&[usize], &[usize]) {
        (&self.half1, &self.half2)
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn coupling(&self, block: usize) -> (&Mlp, &Mlp) {
        (&self.a1[block], &self.a2[block])
    }

    pub fn control_map(&self) -> &[f64] {
        &self.control
    }

    pub fn num_params(&self) -> usize {
        self.encoder.num_params()
            + self.a1.iter().chain(&self.a2).map(Mlp::num_params).sum::<usize>()
            + self.control.len()
    }

    /// Encoder, every `A1`, every `A2`, then the control map.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = self.encoder.params().to_vec();
        for net in self.a1.iter().chain(&self.a2) {
            out.extend_from_slice(net.params());
        }
        out.extend_from_slice(&self.control);
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Shape { expected: self.num_params(), got: params.len() });
        }
        let mut off = 0;
        let mut take = |net: &mut Mlp| {
            let k = net.num_params();
            net.set_params(&params[off..off + k]).expect("sized");
            off += k;
        };
        take(&mut self.encoder);
        for net in self.a1.iter_mut() {
            take(net);
        }
        for net in self.a2.iter_mut() {
            take(net);
        }
        let k = self.control.len();
        self.control.copy_from_slice(&params[off..off + k]);
        Ok(())
    }

    fn zero_grads(&self) -> DikuGrads {
        DikuGrads {
            encoder: alloc::vec![0.0; self.encoder.num_params()],
            a1: self.a1.iter().map(|n| alloc::vec![0.0; n.num_params()]).collect(),
            a2: self.a2.iter().map(|n| alloc::vec![0.0; n.num_params()]).collect(),
            control: alloc::vec![0.0; self.control.len()],
        }
    }

    fn rows(&self, len: usize, width: usize) -> Result<usize> {
        if width == 0 || len % width != 0 {
            return Err(Error::Shape { expected: width, got: len % width.max(1) });
        }
        Ok(len / width)
    }

    fn scaled_input(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        x.iter()
            .enumerate()
            .map(|(k, v)| (v - self.config.input_center[k % n]) / self.config.input_half_width[k % n])
            .collect()
    }

    fn assemble_lift(&self, x: &[f64], embed: &[f64]) -> Vec<f64> {
        let (n, d, cx) = (self.n(), self.config.embed_dim, self.lifted_dim());
        let rows = x.len() / n;
        let mut z = Vec::with_capacity(rows * cx);
        for r in 0..rows {
            let xr = &x[r * n..(r + 1) * n];
            z.extend_from_slice(xr);
            z.extend_from_slice(&embed[r * d..(r + 1) * d]);
            z.extend(self.config.features.iter().map(|f| f.eval(xr)));
        }
        z
    }

    /// Batch lift `rows x n -> rows x c_x` with `z = [x; e(x); c(x)]`.
    pub fn lift(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.rows(x.len(), self.n())?;
        let embed = self.encoder.forward(&self.scaled_input(x))?;
        Ok(self.assemble_lift(x, &embed))
    }

    /// Batch recovery: the first `n` coordinates of each lifted row.
    pub fn recover(&self, z: &[f64]) -> Vec<f64> {
        let (n, cx) = (self.n(), self.lifted_dim());
        z.chunks_exact(cx).flat_map(|row| row[..n].iter().copied()).collect()
    }

    fn control_lift(&self, u: &[f64], rows: usize) -> Vec<f64> {
        let cx = self.lifted_dim();
        let mut out = alloc::vec![0.0; rows * cx];
        crate::linalg::gemm(rows, self.m(), cx, 1.0, u, false, &self.control, false, 0.0, &mut out);
        out
    }

    fn step_impl(
        &self,
        z: &[f64],
        u: &[f64],
        direction: Direction,
        record: bool,
    ) -> Result<(Vec<f64>, Vec<BlockTapes>)> {
        let cx = self.lifted_dim();
        let rows = self.rows(z.len(), cx)?;
        if u.len() != rows * self.m() {
            return Err(Error::Shape { expected: rows * self.m(), got: u.len() });
        }
        let uh = self.control_lift(u, rows);
        let u1 = gather(&uh, cx, &self.half1);
        let u2 = gather(&uh, cx, &self.half2);
        let mut z1 = gather(z, cx, &self.half1);
        let mut z2 = gather(z, cx, &self.half2);
        let blocks = self.config.blocks;
        let mut tapes: Vec<Option<BlockTapes>> = (0..blocks).map(|_| None).collect();
        let eval = |net: &Mlp, input: &[f64]| -> Result<(Vec<f64>, Option<Tape>)> {
            if record {
                let (out, tape) = net.forward_tape(input)?;
                Ok((out, Some(tape)))
            } else {
                Ok((net.forward(input)?, None))
            }
        };
        match direction {
            Direction::Forward => {
                for b in 0..blocks {
                    let (t, tape2) = eval(&self.a2[b], &z2)?;
                    add_assign(&mut z1, &t);
                    if b == 0 {
                        add_assign(&mut z1, &u1);
                    }
                    let (s, tape1) = eval(&self.a1[b], &z1)?;
                    add_assign(&mut z2, &s);
                    if b == 0 {
                        add_assign(&mut z2, &u2);
                    }
                    if record {
                        tapes[b] = Some(BlockTapes { t2: tape2.unwrap(), t1: tape1.unwrap() });
                    }
                }
            }
            Direction::Backward => {
                for b in (0..blocks).rev() {
                    let (s, tape1) = eval(&self.a1[b], &z1)?;
                    sub_assign(&mut z2, &s);
                    if b == 0 {
                        sub_assign(&mut z2, &u2);
                    }
                    let (t, tape2) = eval(&self.a2[b], &z2)?;
                    sub_assign(&mut z1, &t);
                    if b == 0 {
                        sub_assign(&mut z1, &u1);
                    }
                    if record {
                        tapes[b] = Some(BlockTapes { t2: tape2.unwrap(), t1: tape1.unwrap() });
                    }
                }
            }
        }
        let mut out = alloc::vec![0.0; z.len()];
        scatter(&mut out, cx, &self.half1, &z1);
        scatter(&mut out, cx, &self.half2, &z2);
        check_finite(&out, "lifted step")?;
        Ok((out, tapes.into_iter().flatten().collect()))
    }

    /// One forward step on a batch of lifted states (`rows x c_x`) with
    /// controls `rows x m`.
    pub fn forward_step(&self, z: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.step_impl(z, u, Direction::Forward, false).map(|r| r.0)
    }

    /// Exact inverse of [`DikuModel::forward_step`] for the same control.
    pub fn backward_step(&self, z: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.step_impl(z, u, Direction::Backward, false).map(|r| r.0)
    }

    pub fn step(&self, z: &[f64], u: &[f64], direction: Direction) -> Result<Vec<f64>> {
        self.step_impl(z, u, direction, false).map(|r| r.0)
    }

    /// Lifts `x0` once and applies `steps` lifted steps. `controls` holds one
    /// `steps x m` block per row. Step `k` uses control `k` of each row, in
    /// either direction. Returns the recovered states of every slice
    /// including slice 0.
    pub fn propagate(&self, x0: &[f64], controls: &[f64], steps: usize, direction: Direction) -> Result<Vec<Vec<f64>>> {
        let (n, m) = (self.n(), self.m());
        let rows = self.rows(x0.len(), n)?;
        if controls.len() != rows * steps * m {
            return Err(Error::Shape { expected: rows * steps * m, got: controls.len() });
        }
        let mut z = self.lift(x0)?;
        let mut out = Vec::with_capacity(steps + 1);
        out.push(x0.to_vec());
        for k in 0..steps {
            let u = step_controls(controls, rows, steps, m, k);
            z = self.step(&z, &u, direction)?;
            out.push(self.recover(&z));
        }
        Ok(out)
    }

    /// Like [`DikuModel::propagate`] but records what [`DikuModel::reverse`]
    /// needs.
    pub fn trace(&self, x0: &[f64], controls: &[f64], steps: usize, direction: Direction) -> Result<RolloutTrace> {
        let (n, m) = (self.n(), self.m());
        let rows = self.rows(x0.len(), n)?;
        if controls.len() != rows * steps * m {
            return Err(Error::Shape { expected: rows * steps * m, got: controls.len() });
        }
        let (embed, encoder_tape) = self.encoder.forward_tape(&self.scaled_input(x0))?;
        let mut z = self.assemble_lift(x0, &embed);
        let mut trace = RolloutTrace {
            direction,
            rows,
            x0: x0.to_vec(),
            encoder_tape,
            steps: Vec::with_capacity(steps),
            controls: Vec::with_capacity(steps),
            states: Vec::with_capacity(steps + 1),
        };
        trace.states.push(x0.to_vec());
        for k in 0..steps {
            let u = step_controls(controls, rows, steps, m, k);
            let (next, tapes) = self.step_impl(&z, &u, direction, true)?;
            z = next;
            trace.states.push(self.recover(&z));
            trace.steps.push(tapes);
            trace.controls.push(u);
        }
        Ok(trace)
    }

    /// Reverse-mode pass through a recorded rollout. `state_grads[k]` is the
    /// gradient of the objective with respect to recovered slice `k`
    /// (`rows x n`); missing or empty entries count as zero.
    pub fn reverse(&self, trace: &RolloutTrace, state_grads: &[Vec<f64>]) -> Result<TraceGrads> {
        let (n, m, cx) = (self.n(), self.m(), self.lifted_dim());
        let rows = trace.rows;
        let steps = trace.steps.len();
        let mut grads = self.zero_grads();
        let mut control_grads = alloc::vec![0.0; rows * steps * m];
        let add_state = |g: &mut [f64], k: usize| {
            if let Some(gs) = state_grads.get(k) {
                if !gs.is_empty() {
                    for r in 0..rows {
                        for i in 0..n {
                            g[r * cx + i] += gs[r * n + i];
                        }
                    }
                }
            }
        };
        let mut gz = alloc::vec![0.0; rows * cx];
        add_state(&mut gz, steps);
        for k in (0..steps).rev() {
            let mut g1 = gather(&gz, cx, &self.half1);
            let mut g2 = gather(&gz, cx, &self.half2);
            let h = self.half1.len();
            let mut gu1 = alloc::vec![0.0; rows * h];
            let mut gu2 = alloc::vec![0.0; rows * h];
            let blocks = self.config.blocks;
            match trace.direction {
                Direction::Forward => {
                    for b in (0..blocks).rev() {
                        let tapes = &trace.steps[k][b];
                        // z2' = z2 + A1(z1') + u2
                        if b == 0 {
                            add_assign(&mut gu2, &g2);
                        }
                        let back1 = self.a1[b].backward_into(&tapes.t1, &g2, &mut grads.a1[b])?;
                        add_assign(&mut g1, &back1);
                        // z1' = z1 + A2(z2) + u1
                        if b == 0 {
                            add_assign(&mut gu1, &g1);
                        }
                        let back2 = self.a2[b].backward_into(&tapes.t2, &g1, &mut grads.a2[b])?;
                        add_assign(&mut g2, &back2);
                    }
                }
                Direction::Backward => {
                    for b in 0..blocks {
                        let tapes = &trace.steps[k][b];
                        // z1- = z1 - A2(z2-) - u1
                        let neg1: Vec<f64> = g1.iter().map(|v| -v).collect();
                        if b == 0 {
                            add_assign(&mut gu1, &neg1);
                        }
                        let back2 = self.a2[b].backward_into(&tapes.t2, &neg1, &mut grads.a2[b])?;
                        add_assign(&mut g2, &back2);
                        // z2- = z2 - A1(z1) - u2
                        let neg2: Vec<f64> = g2.iter().map(|v| -v).collect();
                        if b == 0 {
                            add_assign(&mut gu2, &neg2);
                        }
                        let back1 = self.a1[b].backward_into(&tapes.t1, &neg2, &mut grads.a1[b])?;
                        add_assign(&mut g1, &back1);
                    }
                }
            }
            // u_hat = u * control: the lifted control gradient maps back to
            // both the control map and the raw control.
            let mut guh = alloc::vec![0.0; rows * cx];
            scatter(&mut guh, cx, &self.half1, &gu1);
            scatter(&mut guh, cx, &self.half2, &gu2);
            let u = &trace.controls[k];
            crate::linalg::gemm(m, rows, cx, 1.0, u, true, &guh, false, 1.0, &mut grads.control);
            let mut gu = alloc::vec![0.0; rows * m];
            crate::linalg::gemm(rows, cx, m, 1.0, &guh, false, &self.control, true, 0.0, &mut gu);
            for r in 0..rows {
                let dst = (r * steps + k) * m;
                control_grads[dst..dst + m].copy_from_slice(&gu[r * m..(r + 1) * m]);
            }
            gz = alloc::vec![0.0; rows * cx];
            scatter(&mut gz, cx, &self.half1, &g1);
            scatter(&mut gz, cx, &self.half2, &g2);
            add_state(&mut gz, k);
        }
        // z0 = [x; e(scaled x); c(x)]
        let d = self.config.embed_dim;
        let mut gx = alloc::vec![0.0; rows * n];
        let mut ge = alloc::vec![0.0; rows * d];
        for r in 0..rows {
            let row = &gz[r * cx..(r + 1) * cx];
            gx[r * n..(r + 1) * n].copy_from_slice(&row[..n]);
            ge[r * d..(r + 1) * d].copy_from_slice(&row[n..n + d]);
            let xr = &trace.x0[r * n..(r + 1) * n];
            for (fi, f) in self.config.features.iter().enumerate() {
                f.accumulate_grad(xr, row[n + d + fi], &mut gx[r * n..(r + 1) * n]);
            }
        }
        let gscaled = self.encoder.backward_into(&trace.encoder_tape, &ge, &mut grads.encoder)?;
        for (k, g) in gscaled.iter().enumerate() {
            gx[k] += g / self.config.input_half_width[k % n];
        }
        Ok(TraceGrads { params: grads, x0: gx, controls: control_grads })
    }

    /// Predicted states `x_1..x_K` from `x0` under `controls` (`K x m`),
    /// lifting once at step 0.
    pub fn rollout_forward(&self, x0: &[f64], controls: &[f64]) -> Result<Vec<f64>> {
        let k = self.rows(controls.len(), self.m())?;
        let slices = self.propagate(x0, controls, k, Direction::Forward)?;
        Ok(slices[1..].concat())
    }

    /// Backward prediction from the final state `x_K` of a trajectory driven
    /// by `controls` (`K x m`, forward-time order; control `k` drives step
    /// `k -> k + 1`). Controls are consumed last to first. Returns
    /// `x_0..x_{K-1}` in time order.
    pub fn rollout_backward(&self, x_final: &[f64], controls: &[f64]) -> Result<Vec<f64>> {
        let m = self.m();
        let k = self.rows(controls.len(), m)?;
        let reversed: Vec<f64> = (0..k).rev().flat_map(|j| controls[j * m..(j + 1) * m].iter().copied()).collect();
        let slices = self.propagate(x_final, &reversed, k, Direction::Backward)?;
        Ok(slices[1..].iter().rev().flat_map(|s| s.iter().copied()).collect())
    }
}

/// Controls of step `k` for every row (`rows x m`) from per-row
/// `steps x m` blocks.
pub fn step_controls(controls: &[f64], rows: usize, steps: usize, m: usize, k: usize) -> Vec<f64> {
    let mut u = Vec::with_capacity(rows * m);
    for r in 0..rows {
        let off = (r * steps + k) * m;
        u.extend_from_slice(&controls[off..off + m]);
    }
    u
}

#[cfg(test)]
mod tests;
