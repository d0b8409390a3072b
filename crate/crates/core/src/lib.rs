//! Delay-based output feedback for chains of integrators with sector-bounded
//! input gain, plus the numerical certification and simulation around it.

pub mod delayop;
pub mod gains;
pub mod linalg;
pub mod presets;
pub mod simcore;
pub mod verify;

pub use delayop::{
    build_delay_operator, estimator_constants, ControlUpdate, DelayOperator, EstimatorConstants, OutputFeedback,
};
pub use gains::{
    default_gain, design_certificate, max_certified_step, scaled_design, step_certificate, verify_gain,
    CascadeHypotheses, ClosedLoopGains, GainCertificate, GainError, ScaledDesign, StepCertificate,
};
pub use linalg::{LinalgError, Matrix};
pub use simcore::{
    simulate_cascade, simulate_chain, CascadeModel, CascadePlant, ChainPlant, History, Inputs, SectorGain, Signal,
    SimError, SimOptions, Trajectory,
};
pub use verify::{
    check_estimator_bound, check_fading_memory, empirical_max_step, BoundReport, ChainSetup, VerifyError,
};
