//! The two reference setups: a third-order chain (`example31`) and a
//! third-order chain driven through a scalar nonlinear zero dynamics
//! (`example32`).

use crate::delayop::{ControlUpdate, DelayOpError, DelayOperator, EstimatorConstants, OutputFeedback};
use crate::gains::{self, CascadeHypotheses, GainCertificate, GainError};
use crate::linalg::Matrix;
use crate::simcore::{CascadeModel, CascadePlant, ChainPlant, History, Inputs, Signal, DEFAULT_STEPS_PER_DELAY};
use crate::verify::ChainSetup;

pub const EXAMPLE31_GAIN: [f64; 3] = [-3.0, -5.0, -3.0];
pub const EXAMPLE31_MU: f64 = 0.25;

/// `P` of `V = x1^2/2 + (x2 + x1)^2/2 + (x3 + 2 x2 + 2 x1)^2/2`.
pub fn example31_lyap() -> Matrix {
    let t = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![1.0, 1.0, 0.0], vec![2.0, 2.0, 1.0]]).expect("static rows");
    (&t.transpose() * &t).scale(0.5)
}

/// Verified certificate with the reference values `M0 = sqrt(190)`, `M3 = 2 sqrt(5)`.
pub fn example31_certificate() -> Result<GainCertificate, GainError> {
    Ok(gains::verify_gain(3, &EXAMPLE31_GAIN, 1.0, 1.0, &example31_lyap(), EXAMPLE31_MU)?
        .with_m0(190f64.sqrt())
        .with_mi(3, 2.0 * 5f64.sqrt()))
}

pub fn example31_constants() -> EstimatorConstants {
    EstimatorConstants::third_order_preset()
}

/// Update mode of the reference simulations: the control is recomputed at
/// the sampling instants `t = kh` and held in between.
pub const EXAMPLE_UPDATE: ControlUpdate = ControlUpdate::SampleHold;

/// Three-sample feedback with the reference gain at step `h`.
pub fn example31_feedback(h: f64) -> Result<OutputFeedback, DelayOpError> {
    Ok(OutputFeedback::from_gain(&EXAMPLE31_GAIN, &DelayOperator::new(3, h)?).with_update(EXAMPLE_UPDATE))
}

/// Unforced closed loop used for the empirical step boundary.
pub fn example31_setup() -> ChainSetup {
    ChainSetup {
        plant: example31_plant(),
        k: EXAMPLE31_GAIN.to_vec(),
        history: example31_history(),
        inputs: Inputs::zero(),
        steps_per_delay: DEFAULT_STEPS_PER_DELAY,
        update: EXAMPLE_UPDATE,
    }
}

pub fn example31_plant() -> ChainPlant {
    ChainPlant::nominal(3)
}

/// `x1 = 0` on `[-0.2, -0.1]`, `10 theta + 1` on `[-0.1, 0]`, `x2 = x3 = 1`.
pub fn example31_history() -> History {
    History::ramp_to_one(3)
}

/// `v2 = cos t`, `v3 = 1.5 sin t`.
pub fn example31_forcing() -> Inputs {
    Inputs { v: vec![Signal::Zero, Signal::cos(1.0, 1.0), Signal::sin(1.5, 1.0)], ..Inputs::default() }
}

pub fn example32_plant() -> CascadePlant {
    CascadePlant::new(CascadeModel::Example32)
}

/// `d1 = sgn(x2)`, `d2 = 1`.
pub fn example32_inputs() -> Inputs {
    Inputs { d: vec![Signal::StateSign { component: 2 }, Signal::constant(1.0)], ..Inputs::default() }
}

pub const EXAMPLE32_Z0: [f64; 1] = [2.0];

/// `gamma = 1/2`, `L = 2`, `c_z = 1` from `W = z^4/4` with `c = 1`, `p = 2`, `K = 1/2`.
pub fn example32_hypotheses() -> CascadeHypotheses {
    let (gamma, cz) = gains::check_a1_via_w(1.0, 2.0, 0.5).expect("positive constants");
    CascadeHypotheses { gamma, l_hyp: 2.0, cz }
}
