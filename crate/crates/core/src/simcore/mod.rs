//! Fixed-step simulation of the delay closed loops.
//!
//! Classical RK4 on a uniform grid `dt = h / m`. The control is evaluated at
//! every RK stage: the newest sample is the stage's own `x1 + e`, older samples
//! are read from a delay line holding `x1` at half-step resolution. Nodes are
//! the integrator's own values; half-step points are cubic Hermite values from
//! the two neighbouring nodes and their exact derivatives, filled in as soon as
//! a step completes. Delayed reads therefore always land on stored entries.
//!
//! With [`ControlUpdate::SampleHold`] the control is instead computed from node
//! samples at multiples of `h` and held constant until the next one.

pub mod plant;
pub mod signal;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::delayop::{ControlUpdate, OutputFeedback};
use crate::linalg::norm2;

pub use plant::{CascadeModel, CascadePlant, ChainPlant, SectorGain};
pub use signal::Signal;

/// Default integration steps per delay.
pub const DEFAULT_STEPS_PER_DELAY: usize = 32;
/// Smallest allowed number of integration steps per delay.
pub const MIN_STEPS_PER_DELAY: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid signal: {0}")]
    InvalidSignal(String),
    #[error("dt = {dt} does not divide h = {h} into at least 4 steps")]
    GridMismatch { h: f64, dt: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid horizon or step: {0}")]
    InvalidHorizon(String),
    #[error("input gain {value} left the sector [{alpha}, {beta}] at t = {t}")]
    SectorViolation { t: f64, value: f64, alpha: f64, beta: f64 },
    #[error("invalid initial history: {0}")]
    History(String),
}

/// Initial history `x0(theta)`, one signal per state component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub components: Vec<Signal>,
}

impl History {
    pub fn zero(n: usize) -> Self {
        Self { components: vec![Signal::Zero; n] }
    }

    pub fn constant(x0: &[f64]) -> Self {
        Self { components: x0.iter().map(|&v| Signal::constant(v)).collect() }
    }

    /// `x1 = 0` up to `-0.1`, then `10 theta + 1`; every other component `1`.
    pub fn ramp_to_one(n: usize) -> Self {
        let mut components = vec![Signal::constant(1.0); n];
        components[0] = Signal::PiecewiseLinear { points: vec![[-0.1, 0.0], [0.0, 1.0]] };
        Self { components }
    }

    pub fn at(&self, theta: f64) -> Vec<f64> {
        self.components.iter().map(|s| s.eval(theta, &[])).collect()
    }

    pub fn validate(&self, n: usize) -> Result<(), SimError> {
        if self.components.len() != n {
            return Err(SimError::History(format!(
                "{} components for a state of dimension {n}",
                self.components.len()
            )));
        }
        for s in &self.components {
            s.validate()?;
            if s.is_state_dependent() {
                return Err(SimError::History("state-sign is not allowed in a history".into()));
            }
        }
        Ok(())
    }
}

/// Exogenous inputs. Empty `v` or `d` means all zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Inputs {
    #[serde(default)]
    pub v: Vec<Signal>,
    #[serde(default)]
    pub e: Signal,
    #[serde(default)]
    pub d: Vec<Signal>,
}

impl Inputs {
    pub fn zero() -> Self {
        Self::default()
    }

    fn validate(&self, n: usize) -> Result<(), SimError> {
        if !self.v.is_empty() && self.v.len() != n {
            return Err(SimError::Dimension(format!("{} disturbance signals for n = {n}", self.v.len())));
        }
        for s in self.v.iter().chain(self.d.iter()).chain(std::iter::once(&self.e)) {
            s.validate()?;
        }
        if self.e.is_state_dependent() || self.v.iter().any(Signal::is_state_dependent) {
            return Err(SimError::InvalidSignal("only d may depend on the state".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub t_end: f64,
    pub dt: f64,
    /// Stop early once `|x|` exceeds this value.
    #[serde(default)]
    pub blowup: Option<f64>,
}

impl SimOptions {
    pub fn new(t_end: f64, dt: f64) -> Self {
        Self { t_end, dt, blowup: None }
    }

    /// `dt = h / steps_per_delay`.
    pub fn per_delay(t_end: f64, h: f64, steps_per_delay: usize) -> Self {
        Self::new(t_end, h / steps_per_delay as f64)
    }

    pub fn with_blowup(mut self, limit: f64) -> Self {
        self.blowup = Some(limit);
        self
    }

    fn steps(&self) -> Result<usize, SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite() && self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(SimError::InvalidHorizon(format!("t_end = {}, dt = {}", self.t_end, self.dt)));
        }
        Ok((self.t_end / self.dt - 1e-9).ceil().max(0.0) as usize)
    }
}

/// A simulated run on the uniform grid `times[i] = i * dt`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub dt: f64,
    /// Delay step of the feedback, `0` without delays.
    pub h: f64,
    pub times: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    /// Empty rows for chain runs.
    pub z: Vec<Vec<f64>>,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    /// First time a non-finite state appeared; the run stops there.
    pub diverged: Option<f64>,
    /// First time `|x|` exceeded the blow-up limit; the run stops there.
    pub blown_up: Option<f64>,
    /// `sup |x(theta)|` over the initial history on the integration grid.
    pub history_sup: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    pub fn kz(&self) -> usize {
        self.z.first().map_or(0, Vec::len)
    }

    pub fn x_norm(&self, i: usize) -> f64 {
        norm2(&self.x[i])
    }

    /// Index of the grid node closest to `t`.
    pub fn index_at(&self, t: f64) -> usize {
        ((t / self.dt).round().max(0.0) as usize).min(self.len().saturating_sub(1))
    }

    /// State at `t` by linear interpolation between grid nodes.
    pub fn x_at(&self, t: f64) -> Vec<f64> {
        let last = self.len() - 1;
        let pos = (t / self.dt).clamp(0.0, last as f64);
        let i = (pos.floor() as usize).min(last.saturating_sub(1));
        let w = pos - i as f64;
        if last == 0 {
            return self.x[0].clone();
        }
        self.x[i].iter().zip(&self.x[i + 1]).map(|(a, b)| a + w * (b - a)).collect()
    }

    pub fn completed(&self) -> bool {
        self.diverged.is_none() && self.blown_up.is_none()
    }
}

enum Control<'a> {
    Delay(&'a OutputFeedback),
    State(&'a [f64]),
    Open,
}

enum Dynamics<'a> {
    Chain(&'a ChainPlant),
    Cascade(&'a CascadePlant),
    OpenLoop,
}

struct Sim<'a> {
    n: usize,
    kz: usize,
    dynamics: Dynamics<'a>,
    control: Control<'a>,
    inputs: &'a Inputs,
    dt: f64,
    /// Steps per delay (0 without delays).
    m: usize,
    /// `x1` at half-step resolution starting at `-(n-1) h`.
    line: Vec<f64>,
    offset: usize,
    /// Control held over the current delay interval (sample-and-hold only).
    held: f64,
}

struct Scratch {
    v: Vec<f64>,
    d: Vec<f64>,
    g: Vec<f64>,
}

impl<'a> Sim<'a> {
    fn fill_inputs(&self, t: f64, t0: f64, x: &[f64], sc: &mut Scratch) {
        for (i, slot) in sc.v.iter_mut().enumerate() {
            *slot = self.inputs.v.get(i).map_or(0.0, |s| s.eval_in_step(t, t0, x));
        }
        for (i, slot) in sc.d.iter_mut().enumerate() {
            *slot = self.inputs.d[i].eval_in_step(t, t0, x);
        }
    }

    /// Control at half-step index `q` (relative to `t = 0`) for stage state `s`.
    fn control(&self, q: i64, t: f64, t0: f64, s: &[f64]) -> f64 {
        match self.control {
            Control::Open => 0.0,
            Control::State(k) => k.iter().zip(s).map(|(a, b)| a * b).sum(),
            Control::Delay(fb) if fb.update == ControlUpdate::SampleHold => self.held,
            Control::Delay(fb) => self.sampled_control(fb, q, t, t0, s),
        }
    }

    fn sampled_control(&self, fb: &OutputFeedback, q: i64, t: f64, t0: f64, s: &[f64]) -> f64 {
        let mut u = fb.weights[0] * (s[0] + self.inputs.e.eval_in_step(t, t0, s));
        for (j, w) in fb.weights.iter().enumerate().skip(1) {
            let idx = q - 2 * (j * self.m) as i64 + self.offset as i64;
            let x1 = self.line[idx as usize];
            debug_assert!(!x1.is_nan(), "delay line read ahead of the integrator");
            let tj = t - j as f64 * fb.step;
            u += w * (x1 + self.inputs.e.eval_in_step(tj, t0 - j as f64 * fb.step, s));
        }
        u
    }

    /// Right-hand side at stage time `t` of the step with midpoint `t0`;
    /// returns the control used.
    fn rhs(&self, q: i64, t: f64, t0: f64, s: &[f64], out: &mut [f64], sc: &mut Scratch) -> Result<f64, SimError> {
        let n = self.n;
        let (x, z) = s.split_at(n);
        self.fill_inputs(t, t0, x, sc);
        let u = self.control(q, t, t0, s);
        match self.dynamics {
            Dynamics::OpenLoop => {
                for i in 0..n {
                    out[i] = if i + 1 < n { x[i + 1] } else { 0.0 } + sc.v[i];
                }
            }
            Dynamics::Chain(p) => {
                let a = p.input_gain(t, &sc.d, x)?;
                for i in 0..n {
                    out[i] = if i + 1 < n { x[i + 1] } else { a * u } + sc.v[i];
                }
            }
            Dynamics::Cascade(p) => {
                let a = plant::sector_checked(p.model.a(&sc.d, z, x), p.alpha, p.beta, t)?;
                p.model.g(&sc.d, z, x, &mut sc.g);
                p.model.f(&sc.d, z, x, &mut out[n..]);
                for i in 0..n {
                    out[i] = sc.g[i] + if i + 1 < n { x[i + 1] } else { a * u } + sc.v[i];
                }
            }
        }
        Ok(u)
    }

    /// `dx1/dt` at `t` inside the step with midpoint `t0`; needs `n >= 2`.
    fn x1_rate(&self, t: f64, t0: f64, s: &[f64], sc: &mut Scratch) -> f64 {
        let (x, z) = s.split_at(self.n);
        self.fill_inputs(t, t0, x, sc);
        let g1 = match self.dynamics {
            Dynamics::Cascade(p) => {
                p.model.g(&sc.d, z, x, &mut sc.g);
                sc.g[0]
            }
            _ => 0.0,
        };
        x[1] + g1 + sc.v[0]
    }

    fn run(mut self, history: &History, z0: &[f64], opts: &SimOptions) -> Result<Trajectory, SimError> {
        let (n, kz, dt, m) = (self.n, self.kz, self.dt, self.m);
        let steps = opts.steps()?;
        let dim = n + kz;

        // history on the half-step grid, then NaN until integrated
        self.offset = 2 * (n - 1) * m;
        if m > 0 {
            self.line = vec![f64::NAN; self.offset + 2 * steps + 1];
            for idx in 0..=self.offset {
                let theta = (idx as f64 - self.offset as f64) * 0.5 * dt;
                self.line[idx] = history.components[0].eval(theta, &[]);
            }
        }
        let history_sup = (0..=(n - 1) * m).map(|i| norm2(&history.at(-(i as f64) * dt))).fold(0.0, f64::max);

        let mut s: Vec<f64> = history.at(0.0);
        s.extend_from_slice(z0);
        let mut sc = Scratch { v: vec![0.0; n], d: vec![0.0; self.inputs.d.len()], g: vec![0.0; n] };

        let mut traj = Trajectory {
            dt,
            h: if m > 0 { m as f64 * dt } else { 0.0 },
            times: Vec::with_capacity(steps + 1),
            x: Vec::with_capacity(steps + 1),
            z: Vec::with_capacity(steps + 1),
            u: Vec::with_capacity(steps + 1),
            y: Vec::with_capacity(steps + 1),
            diverged: None,
            blown_up: None,
            history_sup,
        };

        let mut k1 = vec![0.0; dim];
        let mut k2 = vec![0.0; dim];
        let mut k3 = vec![0.0; dim];
        let mut k4 = vec![0.0; dim];
        let mut tmp = vec![0.0; dim];

        let mut k = 0usize;
        loop {
            let t = k as f64 * dt;
            let q = 2 * k as i64;
            let th = t + 0.5 * dt;
            if let Control::Delay(fb) = self.control {
                if fb.update == ControlUpdate::SampleHold && k % m == 0 {
                    self.held = self.sampled_control(fb, q, t, th, &s);
                }
            }
            let u = self.rhs(q, t, th, &s, &mut k1, &mut sc)?;
            traj.times.push(t);
            traj.x.push(s[..n].to_vec());
            traj.z.push(s[n..].to_vec());
            traj.u.push(u);
            traj.y.push(s[0] + self.inputs.e.eval(t, &s[..n]));
            if k == steps {
                break;
            }

            let tn = t + dt;
            for i in 0..dim {
                tmp[i] = s[i] + 0.5 * dt * k1[i];
            }
            self.rhs(q + 1, th, th, &tmp, &mut k2, &mut sc)?;
            for i in 0..dim {
                tmp[i] = s[i] + 0.5 * dt * k2[i];
            }
            self.rhs(q + 1, th, th, &tmp, &mut k3, &mut sc)?;
            for i in 0..dim {
                tmp[i] = s[i] + dt * k3[i];
            }
            self.rhs(q + 2, tn, th, &tmp, &mut k4, &mut sc)?;
            for i in 0..dim {
                tmp[i] = s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }

            if tmp.iter().any(|v| !v.is_finite()) {
                traj.diverged = Some(tn);
                break;
            }
            if m > 0 {
                let d0 = self.x1_rate(t, th, &s, &mut sc);
                let d1 = self.x1_rate(tn, th, &tmp, &mut sc);
                let base = self.offset + 2 * k;
                self.line[base + 1] = 0.5 * (s[0] + tmp[0]) + dt * (d0 - d1) / 8.0;
                self.line[base + 2] = tmp[0];
            }
            std::mem::swap(&mut s, &mut tmp);
            k += 1;
            if let Some(limit) = opts.blowup {
                if norm2(&s[..n]) > limit {
                    let t = k as f64 * dt;
                    traj.times.push(t);
                    traj.x.push(s[..n].to_vec());
                    traj.z.push(s[n..].to_vec());
                    traj.u.push(f64::NAN);
                    traj.y.push(s[0] + self.inputs.e.eval(t, &s[..n]));
                    traj.blown_up = Some(t);
                    break;
                }
            }
        }
        Ok(traj)
    }
}

fn delay_steps(fb: &OutputFeedback, dt: f64) -> Result<usize, SimError> {
    let ratio = fb.step / dt;
    let m = ratio.round();
    if !(dt > 0.0) || (m * dt - fb.step).abs() > 1e-9 * fb.step || (m as usize) < MIN_STEPS_PER_DELAY {
        return Err(SimError::GridMismatch { h: fb.step, dt });
    }
    Ok(m as usize)
}

fn check_state(name: &str, got: usize, n: usize) -> Result<(), SimError> {
    if got != n {
        return Err(SimError::Dimension(format!("{name} has {got} entries, expected {n}")));
    }
    Ok(())
}

/// Chain closed loop with the delayed output feedback `fb`.
pub fn simulate_chain(
    plant: &ChainPlant,
    fb: &OutputFeedback,
    history: &History,
    inputs: &Inputs,
    opts: &SimOptions,
) -> Result<Trajectory, SimError> {
    let n = plant.n;
    check_state("feedback", fb.order(), n)?;
    if n < 2 {
        return Err(SimError::Dimension("delayed feedback needs n >= 2".into()));
    }
    history.validate(n)?;
    inputs.validate(n)?;
    let m = delay_steps(fb, opts.dt)?;
    Sim {
        n,
        kz: 0,
        dynamics: Dynamics::Chain(plant),
        control: Control::Delay(fb),
        inputs,
        dt: opts.dt,
        m,
        line: Vec::new(),
        offset: 0,
        held: 0.0,
    }
    .run(history, &[], opts)
}

/// Cascade closed loop with the (scaled) delayed output feedback `fb`.
pub fn simulate_cascade(
    plant: &CascadePlant,
    fb: &OutputFeedback,
    z0: &[f64],
    history: &History,
    inputs: &Inputs,
    opts: &SimOptions,
) -> Result<Trajectory, SimError> {
    let n = plant.model.n();
    check_state("feedback", fb.order(), n)?;
    check_state("z0", z0.len(), plant.model.kz())?;
    history.validate(n)?;
    inputs.validate(n)?;
    let m = delay_steps(fb, opts.dt)?;
    Sim {
        n,
        kz: plant.model.kz(),
        dynamics: Dynamics::Cascade(plant),
        control: Control::Delay(fb),
        inputs,
        dt: opts.dt,
        m,
        line: Vec::new(),
        offset: 0,
        held: 0.0,
    }
    .run(history, z0, opts)
}

/// Chain closed loop with the static state feedback `u = k'x`.
pub fn simulate_state_feedback(
    plant: &ChainPlant,
    k: &[f64],
    x0: &[f64],
    inputs: &Inputs,
    opts: &SimOptions,
) -> Result<Trajectory, SimError> {
    let n = plant.n;
    check_state("k", k.len(), n)?;
    check_state("x0", x0.len(), n)?;
    inputs.validate(n)?;
    Sim {
        n,
        kz: 0,
        dynamics: Dynamics::Chain(plant),
        control: Control::State(k),
        inputs,
        dt: opts.dt,
        m: 0,
        line: Vec::new(),
        offset: 0,
        held: 0.0,
    }
    .run(&History::constant(x0), &[], opts)
}

/// Driven chain `x_i' = x_{i+1} + u_i`, `x_n' = u_n` without feedback.
pub fn open_loop_chain(n: usize, u: &[Signal], x0: &[f64], opts: &SimOptions) -> Result<Trajectory, SimError> {
    check_state("x0", x0.len(), n)?;
    let inputs = Inputs { v: u.to_vec(), ..Inputs::default() };
    inputs.validate(n)?;
    Sim {
        n,
        kz: 0,
        dynamics: Dynamics::OpenLoop,
        control: Control::Open,
        inputs: &inputs,
        dt: opts.dt,
        m: 0,
        line: Vec::new(),
        offset: 0,
        held: 0.0,
    }
    .run(&History::constant(x0), &[], opts)
}
