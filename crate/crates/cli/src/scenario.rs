//! Scenario files: a TOML description of plant, design, initial data,
//! exogenous signals and run length.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use delayfb::delayop::{estimator_constants, ControlUpdate, DelayOperator, EstimatorConstants, OutputFeedback};
use delayfb::gains::{self, GainCertificate};
use delayfb::linalg::Matrix;
use delayfb::presets;
use delayfb::simcore::{
    self, CascadeModel, CascadePlant, ChainPlant, History, Inputs, SectorGain, Signal, SimOptions, Trajectory,
};
use delayfb::verify::ChainSetup;
use serde::{Deserialize, Serialize};

const EXAMPLE31: &str = include_str!("../scenarios/example31.toml");
const EXAMPLE31_FORCED: &str = include_str!("../scenarios/example31-forced.toml");
const EXAMPLE32: &str = include_str!("../scenarios/example32.toml");

/// Names accepted by `--scenario` in place of a path.
pub const BUILTIN: [&str; 3] = ["example31", "example31-forced", "example32"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub plant: PlantConfig,
    pub design: DesignConfig,
    pub simulation: SimulationConfig,
    pub initial: InitialConfig,
    #[serde(default)]
    pub inputs: InputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PlantConfig {
    Chain {
        n: usize,
        #[serde(default = "one")]
        alpha: f64,
        #[serde(default = "one")]
        beta: f64,
        #[serde(default = "unit_gain")]
        gain: SectorGain,
    },
    Cascade {
        model: CascadeModel,
    },
}

fn one() -> f64 {
    1.0
}

fn unit_gain() -> SectorGain {
    SectorGain::Constant { value: 1.0 }
}

/// A literal value or a named choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Choice<T> {
    Value(T),
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    /// Gain vector or `"default"`.
    pub gain: Choice<Vec<f64>>,
    /// Lyapunov matrix rows, `"example31-preset"` or `"auto"`.
    pub lyapunov: Choice<Vec<Vec<f64>>>,
    /// Decay rate; required with an explicit matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    /// Overrides of the computed `M0` and `Mn`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mn: Option<f64>,
    /// `"generic"` or `"third-order-preset"`.
    #[serde(default = "generic")]
    pub estimator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kn: Option<f64>,
    /// Delay step or `"certify"`.
    pub h: Choice<f64>,
    #[serde(default)]
    pub update: ControlUpdate,
}

fn generic() -> String {
    "generic".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub t_end: f64,
    pub dt_div: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blowup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    /// One signal per state component on `[-(n-1)h, 0]`.
    pub history: Vec<Signal>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub z0: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    #[serde(default)]
    pub v: Vec<Signal>,
    #[serde(default)]
    pub e: Signal,
    #[serde(default)]
    pub d: Vec<Signal>,
}

/// Run-time overrides from the command line.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub h: Option<f64>,
    pub t_end: Option<f64>,
    pub dt_div: Option<usize>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Built-in name or path to a TOML file.
    pub fn load(name_or_path: &str) -> Result<Self> {
        let text = match name_or_path {
            "example31" => EXAMPLE31.to_string(),
            "example31-forced" => EXAMPLE31_FORCED.to_string(),
            "example32" => EXAMPLE32.to_string(),
            path => std::fs::read_to_string(Path::new(path))
                .with_context(|| format!("cannot read scenario '{path}' (built-ins: {})", BUILTIN.join(", ")))?,
        };
        Self::from_toml(&text).with_context(|| format!("invalid scenario '{name_or_path}'"))
    }

    pub fn n(&self) -> usize {
        match &self.plant {
            PlantConfig::Chain { n, .. } => *n,
            PlantConfig::Cascade { model } => model.n(),
        }
    }

    pub fn kz(&self) -> usize {
        match &self.plant {
            PlantConfig::Chain { .. } => 0,
            PlantConfig::Cascade { model } => model.kz(),
        }
    }

    pub fn sector(&self) -> (f64, f64) {
        match &self.plant {
            PlantConfig::Chain { alpha, beta, .. } => (*alpha, *beta),
            PlantConfig::Cascade { .. } => (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if !(2..=delayfb::delayop::MAX_ORDER).contains(&n) {
            bail!("plant order {n} outside 2..={}", delayfb::delayop::MAX_ORDER);
        }
        let (alpha, beta) = self.sector();
        if !(alpha > 0.0 && alpha <= beta && beta.is_finite()) {
            bail!("sector [{alpha}, {beta}] must satisfy 0 < alpha <= beta");
        }
        if let Choice::Value(k) = &self.design.gain {
            if k.len() != n {
                bail!("gain has {} entries, plant order is {n}", k.len());
            }
        }
        if let Choice::Named(g) = &self.design.gain {
            if g != "default" {
                bail!("gain must be a vector or \"default\", got \"{g}\"");
            }
        }
        match &self.design.lyapunov {
            Choice::Named(l) if l != "example31-preset" && l != "auto" => {
                bail!("lyapunov must be a matrix, \"example31-preset\" or \"auto\", got \"{l}\"")
            }
            Choice::Value(_) if self.design.mu.is_none() => bail!("an explicit lyapunov matrix needs mu"),
            _ => {}
        }
        if self.design.estimator != "generic" && self.design.estimator != "third-order-preset" {
            bail!("estimator must be \"generic\" or \"third-order-preset\"");
        }
        if let Choice::Named(h) = &self.design.h {
            if h != "certify" {
                bail!("h must be a number or \"certify\", got \"{h}\"");
            }
        }
        if self.initial.history.len() != n {
            bail!("history has {} components, plant order is {n}", self.initial.history.len());
        }
        if self.initial.z0.len() != self.kz() {
            bail!("z0 has {} components, expected {}", self.initial.z0.len(), self.kz());
        }
        if self.inputs.v.len() > n {
            bail!("more disturbance signals than states");
        }
        let signals = self
            .initial
            .history
            .iter()
            .chain(&self.inputs.v)
            .chain(&self.inputs.d)
            .chain(std::iter::once(&self.inputs.e));
        for s in signals {
            s.validate().map_err(|e| anyhow!("{e}"))?;
        }
        if self.initial.history.iter().any(Signal::is_state_dependent) {
            bail!("history signals cannot depend on the state");
        }
        if !(self.simulation.t_end > 0.0 && self.simulation.t_end.is_finite()) {
            bail!("t_end must be positive");
        }
        if self.simulation.dt_div < simcore::MIN_STEPS_PER_DELAY {
            bail!("dt_div must be at least {}", simcore::MIN_STEPS_PER_DELAY);
        }
        Ok(())
    }

    pub fn gain(&self) -> Vec<f64> {
        match &self.design.gain {
            Choice::Value(k) => k.clone(),
            Choice::Named(_) => gains::default_gain(self.n()),
        }
    }

    pub fn certificate(&self) -> Result<GainCertificate> {
        let (n, k) = (self.n(), self.gain());
        let (alpha, beta) = self.sector();
        let mut gc = match &self.design.lyapunov {
            Choice::Value(rows) => {
                let p = Matrix::from_rows(rows).map_err(|e| anyhow!("lyapunov matrix: {e}"))?;
                gains::verify_gain(n, &k, alpha, beta, &p, self.design.mu.unwrap_or_default())?
            }
            Choice::Named(name) if name == "example31-preset" => gains::verify_gain(
                n,
                &k,
                alpha,
                beta,
                &presets::example31_lyap(),
                self.design.mu.unwrap_or(presets::EXAMPLE31_MU),
            )?,
            Choice::Named(_) => {
                let gc = gains::design_certificate(n, &k, alpha, beta)?;
                match self.design.mu {
                    Some(mu) => gains::verify_gain(n, &k, alpha, beta, &gc.lyap, mu)?,
                    None => gc,
                }
            }
        };
        if let Some(m0) = self.design.m0 {
            gc = gc.with_m0(m0);
        }
        if let Some(mn) = self.design.mn {
            gc = gc.with_mi(n, mn);
        }
        Ok(gc)
    }

    pub fn estimator(&self) -> Result<EstimatorConstants> {
        let mut ec = if self.design.estimator == "third-order-preset" {
            if self.n() != 3 {
                bail!("the third-order estimator preset needs n = 3");
            }
            EstimatorConstants::third_order_preset()
        } else {
            estimator_constants(self.n())?
        };
        if let Some(k0) = self.design.k0 {
            ec = ec.with_k0(k0);
        }
        if let Some(kn) = self.design.kn {
            ec = ec.with_kn(kn);
        }
        Ok(ec)
    }

    /// Step from the override, the file, or the certified maximum.
    pub fn step(&self, over: &Overrides) -> Result<f64> {
        let h = match (over.h, &self.design.h) {
            (Some(h), _) | (None, &Choice::Value(h)) => h,
            (None, Choice::Named(_)) => gains::max_certified_step(&self.certificate()?, &self.estimator()?)?,
        };
        if !(h > 0.0 && h <= 1.0) {
            bail!("step h = {h} must lie in (0, 1]");
        }
        Ok(h)
    }

    pub fn steps_per_delay(&self, over: &Overrides) -> usize {
        over.dt_div.unwrap_or(self.simulation.dt_div)
    }

    pub fn history(&self) -> History {
        History { components: self.initial.history.clone() }
    }

    pub fn inputs(&self) -> Inputs {
        Inputs { v: self.inputs.v.clone(), e: self.inputs.e.clone(), d: self.inputs.d.clone() }
    }

    pub fn feedback(&self, h: f64) -> Result<OutputFeedback> {
        let op = DelayOperator::new(self.n(), h)?;
        Ok(OutputFeedback::from_gain(&self.gain(), &op).with_update(self.design.update))
    }

    pub fn options(&self, h: f64, over: &Overrides) -> Result<SimOptions> {
        let m = self.steps_per_delay(over);
        if m < simcore::MIN_STEPS_PER_DELAY {
            bail!("dt divisor must be at least {}", simcore::MIN_STEPS_PER_DELAY);
        }
        let t_end = over.t_end.unwrap_or(self.simulation.t_end);
        let opts = SimOptions::per_delay(t_end, h, m);
        Ok(match self.simulation.blowup {
            Some(b) => opts.with_blowup(b),
            None => opts,
        })
    }

    /// Closed-loop run with gain `k` at step `h`.
    pub fn simulate_with(&self, k: &[f64], h: f64, over: &Overrides) -> Result<Trajectory> {
        let op = DelayOperator::new(self.n(), h)?;
        let fb = OutputFeedback::from_gain(k, &op).with_update(self.design.update);
        let opts = self.options(h, over)?;
        let (history, inputs) = (self.history(), self.inputs());
        let traj = match &self.plant {
            PlantConfig::Chain { n, alpha, beta, gain } => {
                let plant = ChainPlant { n: *n, alpha: *alpha, beta: *beta, gain: gain.clone() };
                simcore::simulate_chain(&plant, &fb, &history, &inputs, &opts)?
            }
            PlantConfig::Cascade { model } => {
                let plant = CascadePlant::new(model.clone());
                simcore::simulate_cascade(&plant, &fb, &self.initial.z0, &history, &inputs, &opts)?
            }
        };
        Ok(traj)
    }

    pub fn simulate(&self, h: f64, over: &Overrides) -> Result<Trajectory> {
        self.simulate_with(&self.gain(), h, over)
    }

    /// Boundary-search setup; only chain plants have one.
    pub fn chain_setup(&self, over: &Overrides) -> Result<ChainSetup> {
        match &self.plant {
            PlantConfig::Chain { n, alpha, beta, gain } => Ok(ChainSetup {
                plant: ChainPlant { n: *n, alpha: *alpha, beta: *beta, gain: gain.clone() },
                k: self.gain(),
                history: self.history(),
                inputs: self.inputs(),
                steps_per_delay: self.steps_per_delay(over),
                update: self.design.update,
            }),
            PlantConfig::Cascade { .. } => bail!("the step boundary search needs a chain plant"),
        }
    }
}
