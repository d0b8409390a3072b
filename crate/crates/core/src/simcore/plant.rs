use serde::{Deserialize, Serialize};

use super::SimError;

/// Slack on the sector check for round-off in the gain expressions.
const SECTOR_SLACK: f64 = 1e-12;

/// The uncertain input gain `a(d, x)` of the chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SectorGain {
    Constant {
        value: f64,
    },
    /// `center + amplitude * sin(x_component)`, 1-based component.
    StateSinusoid {
        center: f64,
        amplitude: f64,
        component: usize,
    },
    /// `center + amplitude * d_1(t)`.
    Disturbance {
        center: f64,
        amplitude: f64,
    },
}

impl SectorGain {
    pub fn eval(&self, d: &[f64], x: &[f64]) -> f64 {
        match self {
            SectorGain::Constant { value } => *value,
            SectorGain::StateSinusoid { center, amplitude, component } => center + amplitude * x[component - 1].sin(),
            SectorGain::Disturbance { center, amplitude } => center + amplitude * d.first().copied().unwrap_or(0.0),
        }
    }
}

/// `x_i' = x_{i+1} + v_i`, `x_n' = a(d, x) u + v_n`, with `alpha <= a <= beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainPlant {
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gain: SectorGain,
}

impl ChainPlant {
    /// Integrator chain with `a = 1`.
    pub fn nominal(n: usize) -> Self {
        Self { n, alpha: 1.0, beta: 1.0, gain: SectorGain::Constant { value: 1.0 } }
    }

    pub fn input_gain(&self, t: f64, d: &[f64], x: &[f64]) -> Result<f64, SimError> {
        sector_checked(self.gain.eval(d, x), self.alpha, self.beta, t)
    }
}

pub(crate) fn sector_checked(a: f64, alpha: f64, beta: f64, t: f64) -> Result<f64, SimError> {
    if a >= alpha - SECTOR_SLACK && a <= beta + SECTOR_SLACK {
        Ok(a)
    } else {
        Err(SimError::SectorViolation { t, value: a, alpha, beta })
    }
}

/// Built-in minimum-phase cascades
/// `z' = f(d, z, x)`, `x_i' = g_i + x_{i+1} + v_i`, `x_n' = g_n + a u + v_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CascadeModel {
    /// `z' = -z - z^3 + d1 x2`, `x3' = d2 z^2 + u`, `n = 3`.
    Example32,
    /// `z' = -z + x1`, `x2' = eps z + u`, `n = 2`.
    LinearFixture { coupling: f64 },
}

impl CascadeModel {
    pub fn n(&self) -> usize {
        match self {
            CascadeModel::Example32 => 3,
            CascadeModel::LinearFixture { .. } => 2,
        }
    }

    pub fn kz(&self) -> usize {
        1
    }

    pub fn f(&self, d: &[f64], z: &[f64], x: &[f64], out: &mut [f64]) {
        let d1 = d.first().copied().unwrap_or(0.0);
        match self {
            CascadeModel::Example32 => out[0] = -z[0] - z[0].powi(3) + d1 * x[1],
            CascadeModel::LinearFixture { .. } => out[0] = -z[0] + x[0],
        }
    }

    pub fn g(&self, d: &[f64], z: &[f64], _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        match self {
            CascadeModel::Example32 => out[2] = d.get(1).copied().unwrap_or(0.0) * z[0] * z[0],
            CascadeModel::LinearFixture { coupling } => out[1] = coupling * z[0],
        }
    }

    pub fn a(&self, _d: &[f64], _z: &[f64], _x: &[f64]) -> f64 {
        1.0
    }

    /// `V(z)` of the ISS hypothesis on the `z`-subsystem.
    pub fn v_func(&self, z: &[f64]) -> f64 {
        match self {
            CascadeModel::Example32 => 0.5 * z[0] * z[0],
            CascadeModel::LinearFixture { .. } => z[0].abs(),
        }
    }

    /// Class-K bound `a(|z|) >= V(z)`.
    pub fn a_func(&self, s: f64) -> f64 {
        match self {
            CascadeModel::Example32 => 0.5 * s * s,
            CascadeModel::LinearFixture { .. } => s,
        }
    }

    /// `(gamma, L, c_z)` of the minimum-phase hypotheses.
    pub fn hypotheses(&self) -> (f64, f64, f64) {
        match self {
            // W = z^4/4: grad W f <= -z^4 + |x|^2/2, so c = 1, p = 2, K = 1/2
            CascadeModel::Example32 => (0.5, 2.0, 1.0),
            // W = z^2: grad W f <= -z^2 + |x|^2, so c = 1/4, p = 2, K = 1
            CascadeModel::LinearFixture { coupling } => (2f64.sqrt(), coupling.abs(), 0.25),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadePlant {
    pub model: CascadeModel,
    pub alpha: f64,
    pub beta: f64,
}

impl CascadePlant {
    pub fn new(model: CascadeModel) -> Self {
        Self { model, alpha: 1.0, beta: 1.0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sector_check() {
        let p = ChainPlant {
            n: 2,
            alpha: 0.5,
            beta: 1.5,
            gain: SectorGain::StateSinusoid { center: 1.0, amplitude: 0.5, component: 1 },
        };
        assert!(p.input_gain(0.0, &[], &[1.0, 0.0]).is_ok());
        let wide = ChainPlant { gain: SectorGain::Constant { value: 2.0 }, ..p };
        assert!(matches!(
            wide.input_gain(0.7, &[], &[0.0, 0.0]),
            Err(SimError::SectorViolation { t, .. }) if t == 0.7
        ));
    }

    #[test]
    fn example32_rhs() {
        let m = CascadeModel::Example32;
        let mut fz = [0.0];
        m.f(&[1.0, 1.0], &[2.0], &[0.0, 3.0, 0.0], &mut fz);
        assert_eq!(fz[0], -2.0 - 8.0 + 3.0);
        let mut g = [9.0; 3];
        m.g(&[1.0, 1.0], &[2.0], &[0.0; 3], &mut g);
        assert_eq!(g, [0.0, 0.0, 4.0]);
        m.f(&[1.0, 1.0], &[0.0], &[0.0; 3], &mut fz);
        assert_eq!(fz[0], 0.0);
    }

    #[test]
    fn hypothesis_bounds_hold_on_samples() {
        // |g_n| <= L (V(z) + |x|) and V(z) <= a(|z|)
        for model in [CascadeModel::Example32, CascadeModel::LinearFixture { coupling: 0.3 }] {
            let (_, l, _) = model.hypotheses();
            let n = model.n();
            for i in 0..200 {
                let z = [(i as f64 - 100.0) / 17.0];
                let x = vec![0.1 * i as f64; n];
                let mut g = vec![0.0; n];
                model.g(&[1.0, 1.0], &z, &x, &mut g);
                let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!(g[n - 1].abs() <= l * (model.v_func(&z) + xn) + 1e-12);
                assert!(model.v_func(&z) <= model.a_func(z[0].abs()));
            }
        }
    }
}
