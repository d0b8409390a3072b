use serde::{Deserialize, Serialize};

use super::SimError;

/// Exogenous time signals: disturbances `v`, measurement noise `e`,
/// uncertainties `d`, open-loop inputs and initial histories.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Signal {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    /// `amplitude * sin(omega * t + phase)`.
    Sinusoid {
        amplitude: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Linear interpolation between `[t, value]` breakpoints, constant outside.
    PiecewiseLinear {
        points: Vec<[f64; 2]>,
    },
    /// `values[i]` on `[times[i], times[i+1])`; `values[0]` before `times[0]`.
    /// Inside an integration step the value at the step midpoint is held, so
    /// breakpoints on grid nodes switch exactly between steps.
    PiecewiseConstant {
        times: Vec<f64>,
        values: Vec<f64>,
    },
    /// `sgn(x_component)` with 1-based `component` and `sgn(0) = 0`.
    StateSign {
        component: usize,
    },
    /// Linear interpolation on a time/value grid, constant outside.
    Table {
        times: Vec<f64>,
        values: Vec<f64>,
    },
}

fn strictly_increasing(times: &[f64]) -> bool {
    times.iter().all(|t| t.is_finite()) && times.windows(2).all(|w| w[1] > w[0])
}

fn interp(times: &[f64], values: &[f64], t: f64) -> f64 {
    let last = times.len() - 1;
    if t <= times[0] {
        return values[0];
    }
    if t >= times[last] {
        return values[last];
    }
    let i = times.partition_point(|&s| s <= t) - 1;
    let w = (t - times[i]) / (times[i + 1] - times[i]);
    values[i] + w * (values[i + 1] - values[i])
}

impl Signal {
    pub fn constant(value: f64) -> Self {
        Signal::Constant { value }
    }

    pub fn sin(amplitude: f64, omega: f64) -> Self {
        Signal::Sinusoid { amplitude, omega, phase: 0.0 }
    }

    pub fn cos(amplitude: f64, omega: f64) -> Self {
        Signal::Sinusoid { amplitude, omega, phase: std::f64::consts::FRAC_PI_2 }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |why: &str| Err(SimError::InvalidSignal(why.to_string()));
        match self {
            Signal::Zero | Signal::StateSign { .. } => {}
            Signal::Constant { value } => {
                if !value.is_finite() {
                    return bad("non-finite constant");
                }
            }
            Signal::Sinusoid { amplitude, omega, phase } => {
                if !(amplitude.is_finite() && omega.is_finite() && phase.is_finite()) {
                    return bad("non-finite sinusoid parameter");
                }
            }
            Signal::PiecewiseLinear { points } => {
                let times: Vec<f64> = points.iter().map(|p| p[0]).collect();
                if points.is_empty() || !strictly_increasing(&times) {
                    return bad("piecewise-linear breakpoints must be strictly increasing");
                }
                if points.iter().any(|p| !p[1].is_finite()) {
                    return bad("non-finite breakpoint value");
                }
            }
            Signal::PiecewiseConstant { times, values } | Signal::Table { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return bad("times and values must be non-empty and of equal length");
                }
                if !strictly_increasing(times) {
                    return bad("times must be strictly increasing");
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return bad("non-finite value");
                }
            }
        }
        if let Signal::StateSign { component: 0 } = self {
            return bad("state-sign component is 1-based");
        }
        Ok(())
    }

    pub fn is_state_dependent(&self) -> bool {
        matches!(self, Signal::StateSign { .. })
    }

    /// Value at `t` with state `x`.
    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        self.eval_in_step(t, t, x)
    }

    /// Value at `t` inside an integration step with midpoint `hold`.
    pub fn eval_in_step(&self, t: f64, hold: f64, x: &[f64]) -> f64 {
        match self {
            Signal::Zero => 0.0,
            Signal::Constant { value } => *value,
            Signal::Sinusoid { amplitude, omega, phase } => amplitude * (omega * t + phase).sin(),
            Signal::PiecewiseLinear { points } => {
                let last = points.len() - 1;
                if t <= points[0][0] {
                    return points[0][1];
                }
                if t >= points[last][0] {
                    return points[last][1];
                }
                let i = points.partition_point(|p| p[0] <= t) - 1;
                let (a, b) = (points[i], points[i + 1]);
                a[1] + (t - a[0]) / (b[0] - a[0]) * (b[1] - a[1])
            }
            Signal::PiecewiseConstant { times, values } => {
                let i = times.partition_point(|&s| s <= hold);
                values[i.saturating_sub(1)]
            }
            Signal::StateSign { component } => {
                let v = x.get(component - 1).copied().unwrap_or(0.0);
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Signal::Table { times, values } => interp(times, values, t),
        }
    }

    /// `sup |signal|` over a closed interval for signals that do not depend on
    /// the state, sampled at the given resolution plus every breakpoint inside.
    pub fn sup_abs_on(&self, t0: f64, t1: f64, resolution: f64) -> f64 {
        let mut pts: Vec<f64> = Vec::new();
        let steps = (((t1 - t0) / resolution).ceil() as usize).max(1);
        for i in 0..=steps {
            pts.push(t0 + (t1 - t0) * i as f64 / steps as f64);
        }
        match self {
            Signal::PiecewiseLinear { points } => pts.extend(points.iter().map(|p| p[0])),
            Signal::PiecewiseConstant { times, .. } | Signal::Table { times, .. } => pts.extend(times.iter().copied()),
            _ => {}
        }
        pts.into_iter().filter(|t| *t >= t0 && *t <= t1).map(|t| self.eval(t, &[]).abs()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_kinds() {
        assert_eq!(Signal::Zero.eval(3.0, &[]), 0.0);
        assert_eq!(Signal::constant(2.5).eval(-1.0, &[]), 2.5);
        let c = Signal::cos(1.0, 1.0);
        assert!((c.eval(0.3, &[]) - 0.3f64.cos()).abs() < 1e-15);
        let s = Signal::sin(1.5, 1.0);
        assert!((s.eval(0.3, &[]) - 1.5 * 0.3f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn piecewise_linear_history() {
        let x1 = Signal::PiecewiseLinear { points: vec![[-0.2, 0.0], [-0.1, 0.0], [0.0, 1.0]] };
        x1.validate().unwrap();
        assert_eq!(x1.eval(-0.15, &[]), 0.0);
        assert!((x1.eval(-0.05, &[]) - 0.5).abs() < 1e-15);
        assert_eq!(x1.eval(0.0, &[]), 1.0);
        assert_eq!(x1.eval(-3.0, &[]), 0.0);
        assert_eq!(x1.eval(3.0, &[]), 1.0);
    }

    #[test]
    fn piecewise_constant_holds_step_value() {
        let u = Signal::PiecewiseConstant { times: vec![0.0, 1.0], values: vec![2.0, -1.0] };
        assert_eq!(u.eval(0.5, &[]), 2.0);
        assert_eq!(u.eval(1.0, &[]), -1.0);
        // stage evaluated at the step's right end still sees the held value
        assert_eq!(u.eval_in_step(1.0, 0.95, &[]), 2.0);
        assert_eq!(u.eval(-1.0, &[]), 2.0);
    }

    #[test]
    fn state_sign() {
        let d = Signal::StateSign { component: 2 };
        assert_eq!(d.eval(0.0, &[5.0, -0.1, 1.0]), -1.0);
        assert_eq!(d.eval(0.0, &[5.0, 0.0, 1.0]), 0.0);
        assert_eq!(d.eval(0.0, &[5.0, 3.0, 1.0]), 1.0);
        assert!(Signal::StateSign { component: 0 }.validate().is_err());
    }

    #[test]
    fn table_and_validation() {
        let t = Signal::Table { times: vec![0.0, 2.0], values: vec![0.0, 4.0] };
        assert_eq!(t.eval(0.5, &[]), 1.0);
        assert!(Signal::Table { times: vec![0.0, 0.0], values: vec![1.0, 2.0] }.validate().is_err());
        assert!(Signal::PiecewiseLinear { points: vec![[1.0, 0.0], [0.5, 1.0]] }.validate().is_err());
        assert!(Signal::PiecewiseConstant { times: vec![0.0], values: vec![] }.validate().is_err());
    }

    #[test]
    fn sup_abs_sees_breakpoints() {
        let s = Signal::PiecewiseLinear { points: vec![[0.0, 0.0], [0.3337, 7.0], [1.0, 0.0]] };
        assert_eq!(s.sup_abs_on(0.0, 1.0, 0.25), 7.0);
    }

    #[test]
    fn serde_tagging() {
        let s = Signal::Sinusoid { amplitude: 1.0, omega: 2.0, phase: 0.0 };
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"kind\":\"sinusoid\""), "{text}");
        let back: Signal = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        let ss: Signal = serde_json::from_str(r#"{"kind":"state-sign","component":2}"#).unwrap();
        assert_eq!(ss, Signal::StateSign { component: 2 });
    }
}
