//! Benchmark control systems, fixed-step RK4 integration and trajectory
//! datasets.
//!
//! The flows are standard textbook forms. Angles are measured from the
//! hanging-down configuration, so `theta = pi` is the upright equilibrium for
//! the cart-pole.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_traits::Float;
use rand::Rng;

use crate::{seeded_rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CartPoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_length: f64,
    pub gravity: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self { cart_mass: 1.0, pole_mass: 0.1, pole_length: 0.5, gravity: 9.81 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub damping: f64,
    pub gravity: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self { mass: 1.0, length: 4.0, damping: 2.0, gravity: 9.81 }
    }
}

/// Two-link acrobot, torque on the elbow. Inertias are about the joints.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AcrobotParams {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub lc1: f64,
    pub lc2: f64,
    pub i1: f64,
    pub i2: f64,
    pub gravity: f64,
}

impl Default for AcrobotParams {
    fn default() -> Self {
        Self {
            m1: 1.0,
            m2: 1.0,
            l1: 1.0,
            lc1: 0.5,
            lc2: 0.5,
            i1: 1.0 / 3.0,
            i2: 1.0 / 3.0,
            gravity: 9.81,
        }
    }
}

/// Planar quadrotor with two rotor thrusts `u = (left, right)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QuadrotorParams {
    pub mass: f64,
    pub inertia: f64,
    pub arm: f64,
    pub gravity: f64,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        Self { mass: 1.0, inertia: 0.1, arm: 0.25, gravity: 9.81 }
    }
}

/// Equations of motion of a benchmark system.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Model {
    /// `x1' = x2, x2' = u`.
    DoubleIntegrator,
    /// `x1' = x2, x2' = -x1 + x2 (1 - x1^2) + u1, x3' = x1 x2 + u2`.
    Polynomial3d,
    CartPole(CartPoleParams),
    DampingPendulum(PendulumParams),
    Acrobot(AcrobotParams),
    PlanarQuadrotor(QuadrotorParams),
}

impl Model {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            Model::DoubleIntegrator => (2, 1),
            Model::Polynomial3d => (3, 2),
            Model::CartPole(_) => (4, 1),
            Model::DampingPendulum(_) => (2, 1),
            Model::Acrobot(_) => (4, 1),
            Model::PlanarQuadrotor(_) => (6, 2),
        }
    }
}

/// A benchmark dynamical system with its admissible state and control boxes.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SystemSpec {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub dt: f64,
    pub model: Model,
}

/// Names accepted by [`SystemSpec::builtin`].
pub const BUILTIN_SYSTEMS: [&str; 6] =
    ["2d-l", "3d-pnl", "cartpole", "damping-pendulum", "acrobot", "planar-quadrotor"];

impl SystemSpec {
    /// The pinned benchmark systems, all with a 0.05 s step.
    pub fn builtin(name: &str) -> Result<Self> {
        let v = |s: &[f64]| s.to_vec();
        let (model, u_lo, u_hi, x_lo, x_hi) = match name {
            "2d-l" => (
                Model::DoubleIntegrator,
                v(&[-1.0]),
                v(&[1.0]),
                v(&[-5.0, -3.0]),
                v(&[5.0, 3.0]),
            ),
            "3d-pnl" => (
                Model::Polynomial3d,
                v(&[-1.0, -1.0]),
                v(&[1.0, 1.0]),
                v(&[-3.0, -3.0, -3.0]),
                v(&[3.0, 3.0, 3.0]),
            ),
            "cartpole" => (
                Model::CartPole(CartPoleParams::default()),
                v(&[-10.0]),
                v(&[10.0]),
                v(&[-3.0, -5.0, -2.0 * PI, -8.0]),
                v(&[3.0, 5.0, 2.0 * PI, 8.0]),
            ),
            "damping-pendulum" => (
                Model::DampingPendulum(PendulumParams::default()),
                v(&[-2.0]),
                v(&[2.0]),
                v(&[-2.0 * PI, -8.0]),
                v(&[2.0 * PI, 8.0]),
            ),
            "acrobot" => (
                Model::Acrobot(AcrobotParams::default()),
                v(&[-5.0]),
                v(&[5.0]),
                v(&[-2.0 * PI, -2.0 * PI, -10.0, -10.0]),
                v(&[2.0 * PI, 2.0 * PI, 10.0, 10.0]),
            ),
            "planar-quadrotor" => (
                Model::PlanarQuadrotor(QuadrotorParams::default()),
                v(&[0.0, 0.0]),
                v(&[10.0, 10.0]),
                v(&[-5.0, -5.0, -PI, -5.0, -5.0, -10.0]),
                v(&[5.0, 5.0, PI, 5.0, 5.0, 10.0]),
            ),
            other => return Err(Error::Config(alloc::format!("unknown system `{other}`"))),
        };
        let spec = Self::new(name, model, u_lo, u_hi, x_lo, x_hi, 0.05)?;
        Ok(spec)
    }

    pub fn new(
        name: &str,
        model: Model,
        u_lo: Vec<f64>,
        u_hi: Vec<f64>,
        x_lo: Vec<f64>,
        x_hi: Vec<f64>,
        dt: f64,
    ) -> Result<Self> {
        let (n, m) = model.dims();
        let spec = Self { name: name.to_string(), n, m, u_lo, u_hi, x_lo, x_hi, dt, model };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks dimensions, bound ordering and the step size.
    pub fn validate(&self) -> Result<()> {
        let (n, m) = self.model.dims();
        if self.n != n || self.m != m || n == 0 || m == 0 {
            return Err(Error::Config(alloc::format!(
                "{}: dimensions ({}, {}) do not match model ({n}, {m})",
                self.name, self.n, self.m
            )));
        }
        if self.u_lo.len() != m || self.u_hi.len() != m || self.x_lo.len() != n || self.x_hi.len() != n {
            return Err(Error::Config(alloc::format!("{}: bound lengths", self.name)));
        }
        let ordered = |lo: &[f64], hi: &[f64]| lo.iter().zip(hi).all(|(l, h)| l < h);
        if !ordered(&self.u_lo, &self.u_hi) || !ordered(&self.x_lo, &self.x_hi) {
            return Err(Error::Config(alloc::format!("{}: lower bounds must be below upper bounds", self.name)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(alloc::format!("{}: dt must be positive", self.name)));
        }
        Ok(())
    }

    /// Writes `f(x, u)` into `dx`.
    pub fn flow(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        match &self.model {
            Model::DoubleIntegrator => {
                dx[0] = x[1];
                dx[1] = u[0];
            }
            Model::Polynomial3d => {
                dx[0] = x[1];
                dx[1] = -x[0] + x[1] * (1.0 - x[0] * x[0]) + u[0];
                dx[2] = x[0] * x[1] + u[1];
            }
            Model::CartPole(p) => {
                let (s, c) = (x[2].sin(), x[2].cos());
                let w = x[3];
                let denom = p.cart_mass + p.pole_mass * s * s;
                dx[0] = x[1];
                dx[1] = (u[0] + p.pole_mass * s * (p.pole_length * w * w + p.gravity * c)) / denom;
                dx[2] = w;
                dx[3] = (-u[0] * c
                    - p.pole_mass * p.pole_length * w * w * c * s
                    - (p.cart_mass + p.pole_mass) * p.gravity * s)
                    / (p.pole_length * denom);
            }
            Model::DampingPendulum(p) => {
                let ml2 = p.mass * p.length * p.length;
                dx[0] = x[1];
                dx[1] = -(p.gravity / p.length) * x[0].sin() - p.damping / ml2 * x[1] + u[0] / ml2;
            }
            Model::Acrobot(p) => {
                let (q1, q2, w1, w2) = (x[0], x[1], x[2], x[3]);
                let (s1, s2, c2) = (q1.sin(), q2.sin(), q2.cos());
                let s12 = (q1 + q2).sin();
                let h = p.m2 * p.l1 * p.lc2;
                let m11 = p.i1 + p.i2 + p.m2 * p.l1 * p.l1 + 2.0 * h * c2;
                let m12 = p.i2 + h * c2;
                let m22 = p.i2;
                // Coriolis and gravity moved to the right-hand side.
                let r1 = 2.0 * h * s2 * w1 * w2 + h * s2 * w2 * w2
                    - p.m1 * p.gravity * p.lc1 * s1
                    - p.m2 * p.gravity * (p.l1 * s1 + p.lc2 * s12);
                let r2 = -h * s2 * w1 * w1 - p.m2 * p.gravity * p.lc2 * s12 + u[0];
                let det = m11 * m22 - m12 * m12;
                dx[0] = w1;
                dx[1] = w2;
                dx[2] = (m22 * r1 - m12 * r2) / det;
                dx[3] = (-m12 * r1 + m11 * r2) / det;
            }
            Model::PlanarQuadrotor(p) => {
                let th = x[2];
                let thrust = u[0] + u[1];
                dx[0] = x[3];
                dx[1] = x[4];
                dx[2] = x[5];
                dx[3] = -thrust * th.sin() / p.mass;
                dx[4] = thrust * th.cos() / p.mass - p.gravity;
                dx[5] = p.arm * (u[0] - u[1]) / p.inertia;
            }
        }
    }

    pub fn derivative(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut dx = alloc::vec![0.0; self.n];
        self.flow(x, u, &mut dx);
        dx
    }

    pub fn state_in_bounds(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.x_lo).zip(&self.x_hi).all(|((v, l), h)| v >= l && v <= h)
    }

    pub fn control_in_bounds(&self, u: &[f64]) -> bool {
        u.iter().zip(&self.u_lo).zip(&self.u_hi).all(|((v, l), h)| v >= l && v <= h)
    }

    pub fn clamp_control(&self, u: &mut [f64]) {
        for ((v, l), h) in u.iter_mut().zip(&self.u_lo).zip(&self.u_hi) {
            *v = v.clamp(*l, *h);
        }
    }

    pub fn sample_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.x_lo.iter().zip(&self.x_hi).map(|(l, h)| rng.gen_range(*l..=*h)).collect()
    }

    pub fn sample_control<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.u_lo.iter().zip(&self.u_hi).map(|(l, h)| rng.gen_range(*l..=*h)).collect()
    }

    /// Euclidean norm of the state box diagonal.
    pub fn state_range_norm(&self) -> f64 {
        self.x_lo.iter().zip(&self.x_hi).map(|(l, h)| (h - l) * (h - l)).sum::<f64>().sqrt()
    }
}

/// One classical RK4 step of length `h` holding `u` constant.
pub fn step_rk4(spec: &SystemSpec, x: &[f64], u: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut out = alloc::vec![0.0; spec.n];
    step_rk4_into(spec, x, u, h, &mut out)?;
    Ok(out)
}

pub fn step_rk4_into(spec: &SystemSpec, x: &[f64], u: &[f64], h: f64, out: &mut [f64]) -> Result<()> {
    let n = spec.n;
    let mut k1 = [0.0; 8];
    let mut k2 = [0.0; 8];
    let mut k3 = [0.0; 8];
    let mut k4 = [0.0; 8];
    let mut tmp = [0.0; 8];
    debug_assert!(n <= 8);
    spec.flow(x, u, &mut k1[..n]);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    spec.flow(&tmp[..n], u, &mut k2[..n]);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    spec.flow(&tmp[..n], u, &mut k3[..n]);
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    spec.flow(&tmp[..n], u, &mut k4[..n]);
    for i in 0..n {
        out[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        if !out[i].is_finite() {
            return Err(Error::IntegrationBlowup { system: spec.name.clone(), step: 0 });
        }
    }
    Ok(())
}

/// A simulated trajectory, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub n: usize,
    pub m: usize,
    /// `len() x n`.
    pub states: Vec<f64>,
    /// `(len() - 1) x m`.
    pub controls: Vec<f64>,
    pub dt: f64,
    /// Set when the state left the admissible box and the tail was dropped.
    pub truncated: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.n..(k + 1) * self.n]
    }

    pub fn control(&self, k: usize) -> &[f64] {
        &self.controls[k * self.m..(k + 1) * self.m]
    }
}

/// Integrates `controls` (row-major, `k x m`) from `x0`. Stops before the
/// first state that leaves the state box and flags the trajectory.
pub fn simulate(spec: &SystemSpec, x0: &[f64], controls: &[f64], h: f64) -> Result<Trajectory> {
    let (n, m) = (spec.n, spec.m);
    if x0.len() != n {
        return Err(Error::Shape { expected: n, got: x0.len() });
    }
    if controls.len() % m != 0 {
        return Err(Error::Shape { expected: m, got: controls.len() % m });
    }
    if !spec.state_in_bounds(x0) {
        return Err(Error::Config("initial state outside state bounds".to_string()));
    }
    let steps = controls.len() / m;
    let mut traj = Trajectory {
        n,
        m,
        states: Vec::with_capacity((steps + 1) * n),
        controls: Vec::with_capacity(steps * m),
        dt: h,
        truncated: false,
    };
    traj.states.extend_from_slice(x0);
    let mut next = alloc::vec![0.0; n];
    for k in 0..steps {
        let u = &controls[k * m..(k + 1) * m];
        let x = &traj.states[k * n..(k + 1) * n];
        step_rk4_into(spec, x, u, h, &mut next).map_err(|_| Error::IntegrationBlowup {
            system: spec.name.clone(),
            step: k,
        })?;
        if !spec.state_in_bounds(&next) {
            traj.truncated = true;
            break;
        }
        traj.states.extend_from_slice(&next);
        traj.controls.extend_from_slice(u);
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub system: String,
    pub n: usize,
    pub m: usize,
    pub dt: f64,
    pub horizon: usize,
    pub seed: u64,
    pub train: Vec<Trajectory>,
    pub validation: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Trajectory] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn counts(&self) -> SplitCounts {
        SplitCounts { train: self.train.len(), validation: self.validation.len(), test: self.test.len() }
    }
}

/// Uniform initial states over the state box and i.i.d. uniform controls per
/// step. Each split draws from its own generator derived from `seed`.
pub fn generate_dataset(spec: &SystemSpec, counts: SplitCounts, horizon: usize, seed: u64) -> Result<Dataset> {
    if counts.train == 0 || counts.validation == 0 || counts.test == 0 {
        return Err(Error::Config("split counts must be positive".to_string()));
    }
    let split_set = |split_index: u64, count: usize| -> Result<Vec<Trajectory>> {
        let mut rng = seeded_rng(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(split_index + 1)));
        (0..count)
            .map(|_| {
                let x0 = spec.sample_state(&mut rng);
                let controls: Vec<f64> = (0..horizon).flat_map(|_| spec.sample_control(&mut rng)).collect();
                simulate(spec, &x0, &controls, spec.dt)
            })
            .collect()
    };
    Ok(Dataset {
        system: spec.name.clone(),
        n: spec.n,
        m: spec.m,
        dt: spec.dt,
        horizon,
        seed,
        train: split_set(0, counts.train)?,
        validation: split_set(1, counts.validation)?,
        test: split_set(2, counts.test)?,
    })
}
