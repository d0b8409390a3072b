//! Gain certification, step-size conditions and the high-gain scaling design.
//!
//! Closed-loop gain constants grow like `exp(1/h)` as the step shrinks, so they
//! are carried both as natural logarithms and as `f64` values that may be
//! `+inf` when the logarithm exceeds the `f64` range.

use serde::Serialize;
use thiserror::Error;

use crate::delayop::{ControlUpdate, DelayOpError, EstimatorConstants, OutputFeedback};
use crate::linalg::{self, LinalgError, Matrix};

/// Tolerance on the largest eigenvalue of a vertex residual.
pub const VERTEX_TOL: f64 = 1e-9;
/// Symmetry tolerance for a supplied Lyapunov matrix.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Relative bisection tolerance for [`max_certified_step`].
pub const STEP_REL_TOL: f64 = 1e-6;
/// Smallest step considered by [`max_certified_step`].
pub const STEP_FLOOR: f64 = 1e-12;
/// Grid size for the monotonicity check of the step conditions.
pub const MONOTONE_GRID: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GainError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid Lyapunov matrix: {0}")]
    InvalidLyapunov(String),
    #[error("vertex a = {vertex} is not stabilizing at the requested rate (residual {residual:e})")]
    NotStabilizing { vertex: f64, residual: f64 },
    #[error("decay rate {mu} leaves no margin below the Lyapunov rate {rate}")]
    NoDecayMargin { mu: f64, rate: f64 },
    #[error("no step h >= 1e-12 satisfies both step conditions")]
    Infeasible,
    #[error("step conditions are not increasing in h below {h_max}")]
    NotMonotone { h_max: f64 },
    #[error("base step b = {b} does not satisfy the step conditions")]
    InvalidBaseStep { b: f64 },
    #[error("scaling r = {r} must exceed R(b) = {rb:e}")]
    ScalingTooSmall { r: f64, rb: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    DelayOp(#[from] DelayOpError),
}

/// The `n`-chain shift matrix `A` (ones on the superdiagonal).
pub fn chain_matrix(n: usize) -> Matrix {
    let mut a = Matrix::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        a[(i, i + 1)] = 1.0;
    }
    a
}

/// `A + a * e_n * k'`.
pub fn closed_loop_matrix(k: &[f64], a: f64) -> Matrix {
    let n = k.len();
    let mut m = chain_matrix(n);
    for (j, kj) in k.iter().enumerate() {
        m[(n - 1, j)] += a * kj;
    }
    m
}

/// Robust state-feedback certificate: `|x(t)| <= M0 e^{-mu t}|x0| + sum M_i sup e^{-mu(t-s)}|v_i(s)|`
/// for every input gain in `[alpha, beta]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainCertificate {
    pub n: usize,
    pub k: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub m0: f64,
    /// `M_1 .. M_n`.
    pub m: Vec<f64>,
    #[serde(skip)]
    pub lyap: Matrix,
    /// Worst-vertex decay rate of `sqrt(x' P x)`.
    pub lyap_rate: f64,
}

impl GainCertificate {
    pub fn k_norm(&self) -> f64 {
        linalg::norm2(&self.k)
    }

    pub fn mn(&self) -> f64 {
        self.m[self.n - 1]
    }

    pub fn with_m0(mut self, m0: f64) -> Self {
        self.m0 = m0;
        self
    }

    /// Overrides `M_i` (1-based).
    pub fn with_mi(mut self, i: usize, value: f64) -> Self {
        self.m[i - 1] = value;
        self
    }
}

fn residual_max_eig(p: &Matrix, acl: &Matrix, mu: f64) -> Result<f64, GainError> {
    let s = (p * acl).add(&(&acl.transpose() * p)).add(&p.scale(2.0 * mu));
    let eig = linalg::symmetric_eigenvalues(&s.symmetrize())?;
    Ok(*eig.last().unwrap())
}

/// Decay rate of `sqrt(x' P x)` guaranteed at both vertices.
pub fn lyapunov_rate(p: &Matrix, k: &[f64], alpha: f64, beta: f64) -> Result<f64, GainError> {
    let l = linalg::cholesky(p).map_err(|e| GainError::InvalidLyapunov(e.to_string()))?;
    let l_inv = linalg::invert(&l)?;
    let mut rate = f64::INFINITY;
    for a in [alpha, beta] {
        let acl = closed_loop_matrix(k, a);
        let s = (p * &acl).add(&(&acl.transpose() * p));
        let t = &(&l_inv * &s) * &l_inv.transpose();
        let top = *linalg::symmetric_eigenvalues(&t.symmetrize())?.last().unwrap();
        rate = rate.min(-top / 2.0);
    }
    Ok(rate)
}

fn check_common(n: usize, k: &[f64], alpha: f64, beta: f64) -> Result<(), GainError> {
    if n == 0 || k.len() != n {
        return Err(GainError::Dimension(format!("n = {n}, k has {} entries", k.len())));
    }
    if !(alpha > 0.0 && alpha <= beta && beta.is_finite()) {
        return Err(GainError::InvalidParameter(format!(
            "sector bounds need 0 < alpha <= beta, got [{alpha}, {beta}]"
        )));
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(GainError::InvalidParameter("non-finite gain".into()));
    }
    Ok(())
}

/// Checks the common quadratic Lyapunov vertex condition and derives `M0 .. Mn`.
///
/// `M0 = sqrt(lmax/lmin)`. With `rho` the worst-vertex rate of `W = sqrt(x'Px)`,
/// `|dW/dx_i| <= sqrt(P_ii)` gives `M_i = sqrt(P_ii / lmin) / (rho - mu)`.
pub fn verify_gain(
    n: usize,
    k: &[f64],
    alpha: f64,
    beta: f64,
    lyap: &Matrix,
    mu: f64,
) -> Result<GainCertificate, GainError> {
    check_common(n, k, alpha, beta)?;
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(GainError::InvalidParameter(format!("decay rate must be positive, got {mu}")));
    }
    if lyap.rows() != n || lyap.cols() != n {
        return Err(GainError::Dimension(format!(
            "Lyapunov matrix is {}x{}, expected {n}x{n}",
            lyap.rows(),
            lyap.cols()
        )));
    }
    if !lyap.is_symmetric(SYMMETRY_TOL) {
        return Err(GainError::InvalidLyapunov("not symmetric".into()));
    }
    linalg::cholesky(lyap).map_err(|e| GainError::InvalidLyapunov(e.to_string()))?;

    for a in [alpha, beta] {
        let residual = residual_max_eig(lyap, &closed_loop_matrix(k, a), mu)?;
        if residual > VERTEX_TOL {
            return Err(GainError::NotStabilizing { vertex: a, residual });
        }
    }
    let rate = lyapunov_rate(lyap, k, alpha, beta)?;
    if rate - mu <= VERTEX_TOL {
        return Err(GainError::NoDecayMargin { mu, rate });
    }
    let eig = linalg::symmetric_eigenvalues(lyap)?;
    let (lmin, lmax) = (eig[0], eig[n - 1]);
    let m0 = (lmax / lmin).sqrt();
    let m = (0..n).map(|i| (lyap[(i, i)] / lmin).sqrt() / (rate - mu)).collect();
    Ok(GainCertificate { n, k: k.to_vec(), alpha, beta, mu, m0, m, lyap: lyap.clone(), lyap_rate: rate })
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Gains placing every nominal closed-loop pole at `-1`:
/// `k_i = -C(n, i-1)`, i.e. characteristic polynomial `(s + 1)^n`.
pub fn default_gain(n: usize) -> Vec<f64> {
    (1..=n).map(|i| -binomial(n, i - 1)).collect()
}

/// Certifies `k` with `P` solving the Lyapunov equation of the midpoint
/// closed loop (`Q = I`) and `mu` set to half the resulting vertex rate.
pub fn design_certificate(n: usize, k: &[f64], alpha: f64, beta: f64) -> Result<GainCertificate, GainError> {
    check_common(n, k, alpha, beta)?;
    let mid = closed_loop_matrix(k, 0.5 * (alpha + beta));
    let p = linalg::solve_lyapunov(&mid, &Matrix::identity(n))?;
    if linalg::cholesky(&p).is_err() {
        return Err(GainError::NotStabilizing { vertex: 0.5 * (alpha + beta), residual: f64::INFINITY });
    }
    let rate = lyapunov_rate(&p, k, alpha, beta)?;
    if rate <= 0.0 {
        let vertex = [alpha, beta]
            .into_iter()
            .find(|&a| residual_max_eig(&p, &closed_loop_matrix(k, a), 0.0).map_or(true, |r| r > 0.0))
            .unwrap_or(beta);
        return Err(GainError::NotStabilizing { vertex, residual: -2.0 * rate });
    }
    verify_gain(n, k, alpha, beta, &p, 0.5 * rate)
}

/// `ln(e^a + e^b)` without overflow.
fn ln_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

fn ln_sum(terms: impl IntoIterator<Item = f64>) -> f64 {
    terms.into_iter().fold(f64::NEG_INFINITY, ln_add)
}

/// Closed-loop gain constants for one step, as logarithms and as values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosedLoopGains {
    pub c: f64,
    pub l_rem: f64,
    pub q0: f64,
    /// `Q_1 .. Q_n`.
    pub q: Vec<f64>,
    pub qe: f64,
    pub ln_l_rem: f64,
    pub ln_q0: f64,
    pub ln_q: Vec<f64>,
    pub ln_qe: f64,
}

impl ClosedLoopGains {
    pub fn is_finite(&self) -> bool {
        self.q0.is_finite() && self.qe.is_finite() && self.q.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepCertificate {
    pub h: f64,
    pub cond1: f64,
    pub cond2: f64,
    /// Present iff the step is valid.
    pub gains: Option<ClosedLoopGains>,
}

impl StepCertificate {
    pub fn is_valid(&self) -> bool {
        self.gains.is_some()
    }
}

fn check_pair(gc: &GainCertificate, ec: &EstimatorConstants) -> Result<(), GainError> {
    if ec.n != gc.n {
        return Err(GainError::Dimension(format!("estimator order {} vs gain dimension {}", ec.n, gc.n)));
    }
    Ok(())
}

fn conditions(gc: &GainCertificate, ec: &EstimatorConstants, h: f64) -> (f64, f64) {
    let n = gc.n as f64;
    let bk = gc.beta * gc.k_norm();
    let e = (gc.mu * (n - 1.0) * h).exp();
    let cond1 = bk * h * ec.kn() * e;
    let cond2 =
        if cond1 < 1.0 { h * ec.kn() * gc.mn() * bk * bk * e / ((1.0 - cond1) * (1.0 - cond1)) } else { f64::INFINITY };
    (cond1, cond2)
}

fn step_valid(gc: &GainCertificate, ec: &EstimatorConstants, h: f64) -> bool {
    let (c1, c2) = conditions(gc, ec, h);
    h > 0.0 && h <= 1.0 && c1 < 1.0 && c2 < 1.0
}

/// Evaluates both step conditions at `h` and, when both hold, the
/// closed-loop constants `c`, `L`, `Q0 .. Qn`, `Qe`.
pub fn step_certificate(gc: &GainCertificate, ec: &EstimatorConstants, h: f64) -> Result<StepCertificate, GainError> {
    check_pair(gc, ec)?;
    let (cond1, cond2) = conditions(gc, ec, h);
    if !step_valid(gc, ec, h) {
        return Ok(StepCertificate { h, cond1, cond2, gains: None });
    }
    let n = gc.n;
    let nf = n as f64;
    let bk = gc.beta * gc.k_norm();
    let kn = ec.kn();
    let mn = gc.mn();
    let e = (gc.mu * (nf - 1.0) * h).exp();
    let c = h * kn * e / ((1.0 - cond1) * (1.0 - cond1));
    let ln_d = (-cond2).ln_1p();
    let h_pow = h.powf(1.0 - nf);

    let ln_l = (ec.k0 * h_pow).ln_1p() + 2.0 * (nf + bk * h_pow * ec.k0 + gc.mu) * (nf - 1.0) * h;
    let ln_front = (mn * bk).ln() - ln_d;

    let ln_q0 = ln_add(gc.m0.ln(), ln_front + ln_add((c * gc.m0 * bk).ln(), nf.ln() + ln_l));
    let ln_q: Vec<f64> = (1..=n)
        .map(|i| {
            let mi = gc.m[i - 1];
            let inner = ln_add(
                c.ln() + ln_add((ec.kj(i) * h.powi(i as i32 - n as i32)).ln(), (kn * bk * mi).ln()),
                ln_l + kn.ln(),
            );
            ln_add(mi.ln(), ln_front - kn.ln() + inner)
        })
        .collect();
    let ln_qe = (mn * h_pow * ec.k0 * bk).ln()
        + ln_add(e.ln(), bk.ln() - ln_d + ln_add((c * (mn * bk * e + 1.0)).ln(), ln_l + e.ln()));

    let gains = ClosedLoopGains {
        c,
        l_rem: ln_l.exp(),
        q0: ln_q0.exp(),
        q: ln_q.iter().map(|v| v.exp()).collect(),
        qe: ln_qe.exp(),
        ln_l_rem: ln_l,
        ln_q0,
        ln_q,
        ln_qe,
    };
    Ok(StepCertificate { h, cond1, cond2, gains: Some(gains) })
}

/// True iff both condition left-sides strictly increase over `MONOTONE_GRID`
/// uniform points in `(0, h_max]`.
pub fn conditions_increasing(gc: &GainCertificate, ec: &EstimatorConstants, h_max: f64) -> bool {
    let mut prev = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for i in 1..=MONOTONE_GRID {
        let h = h_max * i as f64 / MONOTONE_GRID as f64;
        let cur = conditions(gc, ec, h);
        if !(cur.0 > prev.0 && cur.1 > prev.1) {
            return false;
        }
        prev = cur;
    }
    true
}

/// Largest `h* <= 1` such that every `h <= h*` satisfies both step conditions,
/// by bisection to relative `1e-6`.
pub fn max_certified_step(gc: &GainCertificate, ec: &EstimatorConstants) -> Result<f64, GainError> {
    check_pair(gc, ec)?;
    let h_star = if step_valid(gc, ec, 1.0) {
        1.0
    } else if !step_valid(gc, ec, STEP_FLOOR) {
        return Err(GainError::Infeasible);
    } else {
        let (mut lo, mut hi) = (STEP_FLOOR, 1.0);
        while hi - lo > STEP_REL_TOL * lo {
            // geometric midpoints while the bracket spans decades
            let mid = if hi > 4.0 * lo { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
            if step_valid(gc, ec, mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    if !conditions_increasing(gc, ec, h_star) {
        return Err(GainError::NotMonotone { h_max: h_star });
    }
    Ok(h_star)
}

/// Constants of the minimum-phase hypotheses on the `z`-subsystem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CascadeHypotheses {
    /// ISS gain of `z` with respect to `x`.
    pub gamma: f64,
    /// Growth bound on the couplings `g_i`.
    pub l_hyp: f64,
    /// Decay rate of the `z`-subsystem.
    pub cz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaledDesign {
    pub b: f64,
    pub r: f64,
    pub rb: f64,
    pub ln_rb_minus_one: f64,
    /// Effective step `b / r`.
    pub h: f64,
    pub l_hyp: f64,
    pub gamma: f64,
    pub cz: f64,
    pub mu_tilde: f64,
    pub p_r: f64,
    /// Envelope constants `Q`, `K`, `M`.
    pub q: f64,
    pub k: f64,
    pub m: f64,
    pub feedback_coeffs: Vec<f64>,
    pub base: StepCertificate,
}

impl ScaledDesign {
    pub fn feedback(&self) -> OutputFeedback {
        OutputFeedback { step: self.h, weights: self.feedback_coeffs.clone(), update: ControlUpdate::Continuous }
    }
}

/// `R(b) = 1 + L(Qn gamma + sum Q_i)` from the certificate at step `b`;
/// returns `(R(b), ln(R(b) - 1))`.
pub fn scaling_threshold(base: &ClosedLoopGains, hyp: &CascadeHypotheses) -> (f64, f64) {
    let n = base.ln_q.len();
    let ln_sum_q = ln_sum(base.ln_q.iter().copied());
    let ln_inner = if hyp.gamma > 0.0 { ln_add(base.ln_q[n - 1] + hyp.gamma.ln(), ln_sum_q) } else { ln_sum_q };
    let ln_rb1 = hyp.l_hyp.ln() + ln_inner;
    (1.0 + ln_rb1.exp(), ln_rb1)
}

/// High-gain design for the cascade with base step `b` and scaling `r > R(b)`.
pub fn scaled_design(
    gc: &GainCertificate,
    ec: &EstimatorConstants,
    b: f64,
    hyp: CascadeHypotheses,
    r: f64,
) -> Result<ScaledDesign, GainError> {
    if !(hyp.gamma >= 0.0 && hyp.l_hyp >= 0.0 && hyp.cz > 0.0) {
        return Err(GainError::InvalidParameter(format!("hypothesis constants {hyp:?}")));
    }
    let base = step_certificate(gc, ec, b)?;
    let Some(g) = base.gains.clone() else {
        return Err(GainError::InvalidBaseStep { b });
    };
    let (rb, ln_rb1) = scaling_threshold(&g, &hyp);
    if !(r > rb) {
        return Err(GainError::ScalingTooSmall { r, rb });
    }
    let n = gc.n;
    let fb = OutputFeedback::scaled(&gc.k, b, r)?;
    let qn = g.q[n - 1];
    let sum_q: f64 = g.q.iter().sum();
    Ok(ScaledDesign {
        b,
        r,
        rb,
        ln_rb_minus_one: ln_rb1,
        h: fb.step,
        l_hyp: hyp.l_hyp,
        gamma: hyp.gamma,
        cz: hyp.cz,
        mu_tilde: (hyp.cz / r).min(gc.mu),
        p_r: r.powi(n as i32) / (r + 1.0 - rb),
        q: (1.0 + hyp.gamma) * g.q0 + 1.0 + (1.0 + hyp.gamma) * hyp.l_hyp * qn,
        k: (1.0 + hyp.gamma) * sum_q,
        m: g.qe * (1.0 + hyp.gamma),
        feedback_coeffs: fb.weights,
        base,
    })
}

/// ISS gain and decay of the `z`-subsystem from a dissipation inequality
/// `grad W f <= -2 c p W + K |x|^p`: returns `((K/(c p))^(1/p), c)`.
pub fn check_a1_via_w(c: f64, p: f64, k: f64) -> Result<(f64, f64), GainError> {
    if !(c > 0.0 && p > 0.0 && k > 0.0) {
        return Err(GainError::InvalidParameter(format!("c, p, K must be positive: {c}, {p}, {k}")));
    }
    Ok(((k / (c * p)).powf(1.0 / p), c))
}
