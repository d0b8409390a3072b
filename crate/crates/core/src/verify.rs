//! Empirical checks of the closed-loop estimates and the stability boundary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::delayop::{ControlUpdate, DelayOpError, DelayOperator, EstimatorConstants, OutputFeedback};
use crate::gains::{GainCertificate, ScaledDesign, StepCertificate};
use crate::linalg::norm2;
use crate::simcore::{self, ChainPlant, History, Inputs, Signal, SimError, SimOptions, Trajectory};

/// Relative slack on every inequality check.
pub const REL_TOL: f64 = 1e-9;
/// Horizon of the stability classifier.
pub const CLASSIFIER_T_END: f64 = 200.0;
/// Decay factor (relative to the history norm) counted as stable.
pub const CLASSIFIER_DECAY: f64 = 1e-2;
/// Norm counted as blow-up.
pub const CLASSIFIER_BLOWUP: f64 = 1e6;
/// Absolute tolerance of the boundary bisection.
pub const BISECTION_TOL: f64 = 5e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("step certificate is not valid at h = {0}")]
    InvalidCertificate(f64),
    #[error("bad bracket: h_lo = {lo} is {lo_class:?}, h_hi = {hi} is {hi_class:?}")]
    BadBracket { lo: f64, hi: f64, lo_class: Stability, hi_class: Stability },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    DelayOp(#[from] DelayOpError),
}

/// Outcome of a trajectory-versus-bound check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub pass: bool,
    /// `max LHS/RHS` over the grid (`0` where the bound is infinite).
    pub max_ratio: f64,
    pub worst_time: f64,
    pub points: usize,
}

impl BoundReport {
    fn new() -> Self {
        Self { pass: true, max_ratio: 0.0, worst_time: 0.0, points: 0 }
    }

    fn record(&mut self, t: f64, lhs: f64, rhs: f64) {
        let ratio = if rhs.is_infinite() {
            0.0
        } else if rhs > 0.0 {
            lhs / rhs
        } else if lhs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        if ratio > self.max_ratio || ratio.is_nan() {
            self.max_ratio = ratio;
            self.worst_time = t;
        }
        self.points += 1;
        self.pass = self.max_ratio <= 1.0 + REL_TOL;
    }

    /// Associative merge for parallel runs.
    pub fn merge(mut self, other: Self) -> Self {
        if other.max_ratio > self.max_ratio {
            self.max_ratio = other.max_ratio;
            self.worst_time = other.worst_time;
        }
        self.points += other.points;
        self.pass = self.pass && other.pass;
        self
    }
}

/// Recursive `S(t) = max(exp(-mu dt) S(t - dt), |v(t)|)` over a uniform grid.
pub fn weighted_sup(values: &[f64], mu: f64, dt: f64) -> Vec<f64> {
    let decay = (-mu * dt).exp();
    let mut s = 0.0f64;
    values
        .iter()
        .map(|v| {
            s = (decay * s).max(v.abs());
            s
        })
        .collect()
}

/// Direct `sup_{tau <= t} exp(-mu (t - tau)) |v(tau)|`, quadratic cost.
pub fn weighted_sup_direct(values: &[f64], mu: f64, dt: f64) -> Vec<f64> {
    (0..values.len())
        .map(|i| (0..=i).map(|j| (-mu * (i - j) as f64 * dt).exp() * values[j].abs()).fold(0.0, f64::max))
        .collect()
}

/// `gain * sup`, with `inf * 0 = 0`.
fn term(gain: f64, sup: f64) -> f64 {
    if sup == 0.0 {
        0.0
    } else {
        gain * sup
    }
}

/// `d` never enters the bounds; only `v` and `e` are sampled.
fn state_independent(inputs: &Inputs) -> Result<(), VerifyError> {
    if inputs.e.is_state_dependent() || inputs.v.iter().any(Signal::is_state_dependent) {
        return Err(VerifyError::Config("v and e must not depend on the state".into()));
    }
    Ok(())
}

/// Weighted suprema of `e` on the grid, seeded over `[-(n-1)h, 0]`.
fn noise_sup(traj: &Trajectory, e: &Signal, rate: f64) -> Vec<f64> {
    let m = (traj.h / traj.dt).round() as usize;
    let back = (traj.n() - 1) * m;
    let mut vals: Vec<f64> = (0..back).map(|i| e.eval((i as f64 - back as f64) * traj.dt, &[])).collect();
    vals.extend(traj.times.iter().map(|&t| e.eval(t, &[])));
    weighted_sup(&vals, rate, traj.dt).split_off(back)
}

/// Checks the fading-memory estimate
/// `|x(t)| <= Q0 e^{-mu t} |x0| + sum Q_i S_{v_i}(t) + Qe S_e(t)` on the grid.
pub fn check_fading_memory(
    traj: &Trajectory,
    cert: &StepCertificate,
    gc: &GainCertificate,
    inputs: &Inputs,
) -> Result<BoundReport, VerifyError> {
    let g = cert.gains.as_ref().ok_or(VerifyError::InvalidCertificate(cert.h))?;
    if (traj.h - cert.h).abs() > 1e-12 * cert.h {
        return Err(VerifyError::Config(format!(
            "trajectory step {} does not match certificate step {}",
            traj.h, cert.h
        )));
    }
    if traj.n() != gc.n {
        return Err(VerifyError::Config("state dimension mismatch".into()));
    }
    state_independent(inputs)?;
    let n = gc.n;
    let v_sups: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let vals: Vec<f64> = traj.times.iter().map(|&t| inputs.v.get(i).map_or(0.0, |s| s.eval(t, &[]))).collect();
            weighted_sup(&vals, gc.mu, traj.dt)
        })
        .collect();
    let e_sup = noise_sup(traj, &inputs.e, gc.mu);

    let mut report = BoundReport::new();
    for (k, &t) in traj.times.iter().enumerate() {
        let mut rhs = term(g.q0 * (-gc.mu * t).exp(), traj.history_sup);
        for i in 0..n {
            rhs += term(g.q[i], v_sups[i][k]);
        }
        rhs += term(g.qe, e_sup[k]);
        report.record(t, traj.x_norm(k), rhs);
    }
    Ok(report)
}

/// Checks the state-feedback estimate
/// `|x(t)| <= M0 e^{-mu t} |x(0)| + sum M_i S_{v_i}(t)` on the grid.
pub fn check_state_feedback_estimate(
    traj: &Trajectory,
    gc: &GainCertificate,
    inputs: &Inputs,
) -> Result<BoundReport, VerifyError> {
    if traj.n() != gc.n {
        return Err(VerifyError::Config("state dimension mismatch".into()));
    }
    state_independent(inputs)?;
    let v_sups: Vec<Vec<f64>> = (0..gc.n)
        .map(|i| {
            let vals: Vec<f64> = traj.times.iter().map(|&t| inputs.v.get(i).map_or(0.0, |s| s.eval(t, &[]))).collect();
            weighted_sup(&vals, gc.mu, traj.dt)
        })
        .collect();
    let x0 = traj.x_norm(0);
    let mut report = BoundReport::new();
    for (k, &t) in traj.times.iter().enumerate() {
        let mut rhs = gc.m0 * (-gc.mu * t).exp() * x0;
        for i in 0..gc.n {
            rhs += gc.m[i] * v_sups[i][k];
        }
        report.record(t, traj.x_norm(k), rhs);
    }
    Ok(report)
}

/// Checks the cascade envelope
/// `|x| + V(z) <= e^{-mu~ r t} Q (p(r) |x0| + a(|z0|)) + p(r) K S_v / r + p(r) M S_e`.
pub fn check_cascade_envelope(
    traj: &Trajectory,
    design: &ScaledDesign,
    inputs: &Inputs,
    v_func: impl Fn(&[f64]) -> f64,
    a_func: impl Fn(f64) -> f64,
) -> Result<BoundReport, VerifyError> {
    if (traj.h - design.h).abs() > 1e-12 * design.h {
        return Err(VerifyError::Config(format!("trajectory step {} does not match design step {}", traj.h, design.h)));
    }
    if traj.kz() == 0 {
        return Err(VerifyError::Config("trajectory has no z component".into()));
    }
    state_independent(inputs)?;
    let rate = design.mu_tilde * design.r;
    let v_norm: Vec<f64> =
        traj.times.iter().map(|&t| norm2(&inputs.v.iter().map(|s| s.eval(t, &[])).collect::<Vec<_>>())).collect();
    let v_sup = weighted_sup(&v_norm, rate, traj.dt);
    let e_sup = noise_sup(traj, &inputs.e, rate);
    let z0 = norm2(&traj.z[0]);
    let initial = design.q * (design.p_r * traj.history_sup + a_func(z0));

    let mut report = BoundReport::new();
    for (k, &t) in traj.times.iter().enumerate() {
        let rhs = term(initial, (-rate * t).exp())
            + term(design.p_r * design.k / design.r, v_sup[k])
            + term(design.p_r * design.m, e_sup[k]);
        let lhs = traj.x_norm(k) + v_func(&traj.z[k]);
        report.record(t, lhs, rhs);
    }
    Ok(report)
}

/// Monte-Carlo report for the estimator error bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorReport {
    pub pass: bool,
    pub runs: usize,
    pub points: usize,
    pub violations: usize,
    /// Largest `error / bound` seen (`0` when every bound is `0`).
    pub worst_ratio: f64,
    /// Largest error where the bound is `0` (round-off only).
    pub worst_zero_bound_error: f64,
}

/// Integration steps per delay in the estimator check.
const ESTIMATOR_STEPS: usize = 32;
/// Input pieces per delay in the estimator check.
const ESTIMATOR_PIECES: usize = 4;
/// Estimator checks per run start after `(n-1) h` and cover this many delays.
const ESTIMATOR_DELAYS: usize = 20;

/// Round-off allowance where the bound is zero: samples of size `s` pass
/// through weights of size `h^{1-n}` and accumulate over the run.
fn zero_bound_floor(n: usize, h: f64, scale: f64) -> f64 {
    1e-10 * h.powi(1 - n as i32) * (1.0 + scale)
}

/// Checks `|x(t) - D_h(x1 history)| <= sum_j K_j h^{j+1-n} sup |u_j|` on `runs`
/// random open-loop chains with piecewise-constant inputs, `|u_j| <= amplitude`.
pub fn check_estimator_bound(
    n: usize,
    h: f64,
    runs: usize,
    constants: &EstimatorConstants,
    seed: u64,
    amplitude: f64,
) -> Result<EstimatorReport, VerifyError> {
    if constants.n != n {
        return Err(VerifyError::Config(format!("constants for order {} used at order {n}", constants.n)));
    }
    let op = DelayOperator::new(n, h)?;
    let m = ESTIMATOR_STEPS;
    let dt = h / m as f64;
    let piece = m / ESTIMATOR_PIECES;
    let total = (n - 1 + ESTIMATOR_DELAYS) * m;
    let weights: Vec<f64> = (1..=n).map(|j| constants.kj(j) * h.powi(j as i32 + 1 - n as i32)).collect();

    let per_run = (0..runs)
        .into_par_iter()
        .map(|run| -> Result<EstimatorReport, VerifyError> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(run as u64));
            let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let times: Vec<f64> = (0..total / piece).map(|p| (p * piece) as f64 * dt).collect();
            let u: Vec<Signal> = (0..n)
                .map(|_| Signal::PiecewiseConstant {
                    times: times.clone(),
                    values: times.iter().map(|_| amplitude * rng.gen_range(-1.0..=1.0)).collect(),
                })
                .collect();
            let traj = simcore::open_loop_chain(n, &u, &x0, &SimOptions::new(total as f64 * dt, dt))?;
            // per-step input values (held over each step)
            let held: Vec<Vec<f64>> =
                u.iter().map(|s| (0..total).map(|k| s.eval((k as f64 + 0.5) * dt, &[]).abs()).collect()).collect();

            let mut rep = EstimatorReport {
                pass: true,
                runs: 1,
                points: 0,
                violations: 0,
                worst_ratio: 0.0,
                worst_zero_bound_error: 0.0,
            };
            let mut samples = vec![0.0; n];
            for k in (n - 1) * m..=total {
                for (j, slot) in samples.iter_mut().enumerate() {
                    *slot = traj.x[k - j * m][0];
                }
                let est = op.apply(&samples)?;
                let err = norm2(&traj.x[k].iter().zip(&est).map(|(a, b)| a - b).collect::<Vec<_>>());
                let window = k - (n - 1) * m..k;
                let bound: f64 = (0..n)
                    .map(|j| {
                        let sup = held[j][window.clone()].iter().copied().fold(0.0, f64::max);
                        weights[j] * sup
                    })
                    .sum();
                rep.points += 1;
                if bound > 0.0 {
                    rep.worst_ratio = rep.worst_ratio.max(err / bound);
                    if err > bound * (1.0 + REL_TOL) {
                        rep.violations += 1;
                    }
                } else {
                    rep.worst_zero_bound_error = rep.worst_zero_bound_error.max(err);
                    let scale = samples.iter().map(|v| v.abs()).fold(0.0, f64::max);
                    if err > zero_bound_floor(n, h, scale) {
                        rep.violations += 1;
                    }
                }
            }
            rep.pass = rep.violations == 0;
            Ok(rep)
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(per_run.into_iter().fold(
        EstimatorReport {
            pass: true,
            runs: 0,
            points: 0,
            violations: 0,
            worst_ratio: 0.0,
            worst_zero_bound_error: 0.0,
        },
        |a, b| EstimatorReport {
            pass: a.pass && b.pass,
            runs: a.runs + b.runs,
            points: a.points + b.points,
            violations: a.violations + b.violations,
            worst_ratio: a.worst_ratio.max(b.worst_ratio),
            worst_zero_bound_error: a.worst_zero_bound_error.max(b.worst_zero_bound_error),
        },
    ))
}

/// Classifier outcome for one step size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Stability {
    Stable,
    Marginal,
    Unstable,
}

/// Unforced chain closed loop used by the boundary search.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSetup {
    pub plant: ChainPlant,
    pub k: Vec<f64>,
    pub history: History,
    pub inputs: Inputs,
    pub steps_per_delay: usize,
    pub update: ControlUpdate,
}

impl ChainSetup {
    /// Stable if `|x(200)| < 1e-2 sup|history|`, unstable if `|x|` exceeds `1e6`
    /// or the run diverges, marginal otherwise.
    pub fn classify(&self, h: f64) -> Result<Stability, VerifyError> {
        let fb = OutputFeedback::from_gain(&self.k, &DelayOperator::new(self.plant.n, h)?).with_update(self.update);
        let opts = SimOptions::per_delay(CLASSIFIER_T_END, h, self.steps_per_delay).with_blowup(CLASSIFIER_BLOWUP);
        let traj = simcore::simulate_chain(&self.plant, &fb, &self.history, &self.inputs, &opts)?;
        if !traj.completed() {
            return Ok(Stability::Unstable);
        }
        let last = traj.x_norm(traj.len() - 1);
        Ok(if last < CLASSIFIER_DECAY * traj.history_sup { Stability::Stable } else { Stability::Marginal })
    }
}

/// Bisection on the classifier to absolute `5e-3`; marginal counts as unstable.
/// Returns the midpoint of the final bracket.
pub fn empirical_max_step(setup: &ChainSetup, h_lo: f64, h_hi: f64) -> Result<f64, VerifyError> {
    if !(h_lo > 0.0 && h_lo < h_hi && h_hi <= 1.0) {
        return Err(VerifyError::Config(format!("bracket [{h_lo}, {h_hi}] must satisfy 0 < lo < hi <= 1")));
    }
    let lo_class = setup.classify(h_lo)?;
    let hi_class = setup.classify(h_hi)?;
    if lo_class != Stability::Stable || hi_class == Stability::Stable {
        return Err(VerifyError::BadBracket { lo: h_lo, hi: h_hi, lo_class, hi_class });
    }
    let (mut lo, mut hi) = (h_lo, h_hi);
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if setup.classify(mid)? == Stability::Stable {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Largest grid point below which every grid point is stable (`0` if the
/// first point is not), classified in parallel.
pub fn scan_max_step(setup: &ChainSetup, grid: &[f64]) -> Result<f64, VerifyError> {
    let classes = grid.par_iter().map(|&h| setup.classify(h)).collect::<Result<Vec<_>, _>>()?;
    Ok(grid.iter().zip(&classes).take_while(|(_, c)| **c == Stability::Stable).last().map_or(0.0, |(h, _)| *h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delayop::estimator_constants;

    #[test]
    fn weighted_sup_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let len = rng.gen_range(50..400);
            let mu = rng.gen_range(0.01..3.0);
            let dt = rng.gen_range(1e-3..0.1);
            let vals: Vec<f64> = (0..len).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let a = weighted_sup(&vals, mu, dt);
            let b = weighted_sup_direct(&vals, mu, dt);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-9 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn report_ratios() {
        let mut r = BoundReport::new();
        r.record(0.0, 0.0, 0.0);
        r.record(0.1, 1.0, f64::INFINITY);
        assert_eq!(r.max_ratio, 0.0);
        r.record(0.2, 1.0, 2.0);
        assert!(r.pass && r.max_ratio == 0.5);
        r.record(0.3, 3.0, 2.0);
        assert!(!r.pass && r.worst_time == 0.3);
    }

    #[test]
    fn term_treats_zero_sup_as_zero() {
        assert_eq!(term(f64::INFINITY, 0.0), 0.0);
        assert_eq!(term(f64::INFINITY, 1e-300), f64::INFINITY);
    }

    #[test]
    fn estimator_bound_zero_input_is_exact() {
        let c = estimator_constants(3).unwrap();
        let r = check_estimator_bound(3, 0.1, 4, &c, 1, 0.0).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.worst_ratio, 0.0);
        assert!(r.worst_zero_bound_error < 1e-9);
    }

    #[test]
    fn estimator_bound_detects_wrong_constants() {
        let tiny = EstimatorConstants { n: 3, k0: 1.0, k0_generic: 1.0, k: vec![1e-6; 3] };
        let r = check_estimator_bound(3, 0.1, 4, &tiny, 2, 1.0).unwrap();
        assert!(!r.pass && r.violations > 0);
    }

    #[test]
    fn bracket_must_straddle() {
        let setup = ChainSetup {
            plant: ChainPlant::nominal(3),
            k: vec![-3.0, -5.0, -3.0],
            history: History::ramp_to_one(3),
            inputs: Inputs::zero(),
            steps_per_delay: 32,
            update: ControlUpdate::Continuous,
        };
        assert!(matches!(empirical_max_step(&setup, 0.01, 0.05), Err(VerifyError::BadBracket { .. })));
    }
}
