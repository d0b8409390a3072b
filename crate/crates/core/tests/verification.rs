use delayfb::delayop::{estimator_constants, ControlUpdate, DelayOperator, OutputFeedback};
use delayfb::gains::{
    default_gain, design_certificate, max_certified_step, scaled_design, step_certificate, CascadeHypotheses,
    GainCertificate, StepCertificate,
};
use delayfb::presets::*;
use delayfb::simcore::{self, CascadeModel, CascadePlant, ChainPlant, History, Inputs, Signal, SimOptions};
use delayfb::verify::{self, *};
use proptest::prelude::*;

fn order_two() -> (GainCertificate, StepCertificate, OutputFeedback) {
    let gc = design_certificate(2, &default_gain(2), 1.0, 1.0).unwrap();
    let ec = estimator_constants(2).unwrap();
    let h = 0.5 * max_certified_step(&gc, &ec).unwrap();
    let cert = step_certificate(&gc, &ec, h).unwrap();
    let fb = OutputFeedback::from_gain(&gc.k, &DelayOperator::new(2, h).unwrap());
    (gc, cert, fb)
}

fn unforced_order_two(fb: &OutputFeedback, history: &History) -> simcore::Trajectory {
    let opts = SimOptions::per_delay(2.0, fb.step, 8);
    simcore::simulate_chain(&ChainPlant::nominal(2), fb, history, &Inputs::zero(), &opts).unwrap()
}

#[test]
fn fading_memory_zero_trajectory_has_zero_ratio() {
    let (gc, cert, fb) = order_two();
    let traj = unforced_order_two(&fb, &History::zero(2));
    let r = check_fading_memory(&traj, &cert, &gc, &Inputs::zero()).unwrap();
    assert!(r.pass);
    assert_eq!(r.max_ratio, 0.0);
}

#[test]
fn fading_memory_negative_control() {
    let (gc, cert, fb) = order_two();
    let traj = unforced_order_two(&fb, &History::constant(&[1.0, -0.5]));
    let r = check_fading_memory(&traj, &cert, &gc, &Inputs::zero()).unwrap();
    assert!(r.pass && r.max_ratio > 0.0, "{r:?}");
    // only the Q0 term is active: shrink it until the measured ratio doubles
    let mut weak = cert.clone();
    weak.gains.as_mut().unwrap().q0 *= 0.5 * r.max_ratio;
    let bad = check_fading_memory(&traj, &weak, &gc, &Inputs::zero()).unwrap();
    assert!(!bad.pass);
    assert!((bad.max_ratio - 2.0).abs() < 1e-9, "{bad:?}");
}

#[test]
fn fading_memory_rejects_mismatched_step() {
    let (gc, cert, _) = order_two();
    let other = OutputFeedback::from_gain(&gc.k, &DelayOperator::new(2, 2.0 * cert.h).unwrap());
    let traj = unforced_order_two(&other, &History::zero(2));
    assert!(matches!(check_fading_memory(&traj, &cert, &gc, &Inputs::zero()), Err(VerifyError::Config(_))));
}

#[test]
fn fading_memory_at_reference_step_is_vacuous_but_passes() {
    let gc = example31_certificate().unwrap();
    let cert = step_certificate(&gc, &example31_constants(), 4e-4).unwrap();
    assert!(cert.is_valid());
    let fb = OutputFeedback::from_gain(&gc.k, &DelayOperator::new(3, 4e-4).unwrap());
    let traj = simcore::simulate_chain(
        &example31_plant(),
        &fb,
        &History::constant(&[1.0, 1.0, 1.0]),
        &Inputs::zero(),
        &SimOptions::per_delay(0.5, 4e-4, 4),
    )
    .unwrap();
    let r = check_fading_memory(&traj, &cert, &gc, &Inputs::zero()).unwrap();
    assert!(r.pass && r.max_ratio < 1.0);
}

#[test]
fn state_feedback_estimate_holds_for_reference_certificate() {
    let gc = example31_certificate().unwrap();
    for (x0, inputs) in [
        (vec![1.0, 1.0, 1.0], Inputs::zero()),
        (vec![-2.0, 0.5, 3.0], example31_forcing()),
        (vec![0.0, 0.0, 0.0], example31_forcing()),
    ] {
        let traj =
            simcore::simulate_state_feedback(&example31_plant(), &gc.k, &x0, &inputs, &SimOptions::new(20.0, 1e-3))
                .unwrap();
        let r = check_state_feedback_estimate(&traj, &gc, &inputs).unwrap();
        assert!(r.pass, "{x0:?}: {r:?}");
    }
}

fn fixture_design(coupling: f64) -> delayfb::gains::ScaledDesign {
    let gc = design_certificate(2, &default_gain(2), 1.0, 1.0).unwrap();
    let ec = estimator_constants(2).unwrap();
    let b = 0.5 * max_certified_step(&gc, &ec).unwrap();
    let (gamma, l_hyp, cz) = CascadeModel::LinearFixture { coupling }.hypotheses();
    let hyp = CascadeHypotheses { gamma, l_hyp, cz };
    let probe = scaled_design(&gc, &ec, b, hyp, f64::MAX);
    let rb = probe.unwrap().rb;
    scaled_design(&gc, &ec, b, hyp, 2.0 * rb).unwrap()
}

fn fixture_run(
    design: &delayfb::gains::ScaledDesign,
    z0: f64,
    history: &History,
    inputs: &Inputs,
) -> simcore::Trajectory {
    let plant = CascadePlant::new(CascadeModel::LinearFixture { coupling: 1e-13 });
    let opts = SimOptions::per_delay(3.0, design.h, 8);
    simcore::simulate_cascade(&plant, &design.feedback(), &[z0], history, inputs, &opts).unwrap()
}

#[test]
fn cascade_envelope_on_linear_fixture() {
    let design = fixture_design(1e-13);
    assert!(design.rb.is_finite() && design.r > design.rb);
    let model = CascadeModel::LinearFixture { coupling: 1e-13 };
    let v = |z: &[f64]| model.v_func(z);
    let a = |s: f64| model.a_func(s);

    let traj = fixture_run(&design, 1.0, &History::constant(&[0.5, -0.5]), &Inputs::zero());
    let r = check_cascade_envelope(&traj, &design, &Inputs::zero(), v, a).unwrap();
    assert!(r.pass, "{r:?}");

    let zero = fixture_run(&design, 0.0, &History::zero(2), &Inputs::zero());
    let r0 = check_cascade_envelope(&zero, &design, &Inputs::zero(), v, a).unwrap();
    assert_eq!(r0.max_ratio, 0.0);

    let noisy = Inputs { e: Signal::constant(0.01), ..Inputs::zero() };
    let traj = fixture_run(&design, 1.0, &History::constant(&[0.5, -0.5]), &noisy);
    let r = check_cascade_envelope(&traj, &design, &noisy, v, a).unwrap();
    assert!(r.pass && r.max_ratio <= 1.0, "{r:?}");
}

#[test]
fn reference_cascade_has_no_finite_scaling() {
    let gc = example31_certificate().unwrap();
    let err = scaled_design(&gc, &example31_constants(), 4e-4, example32_hypotheses(), 1e300).unwrap_err();
    assert!(matches!(err, delayfb::gains::GainError::ScalingTooSmall { rb, .. } if rb.is_infinite()));
}

#[test]
fn estimator_bound_generic_constants() {
    for n in [2, 3] {
        let r = check_estimator_bound(n, 0.1, 100, &estimator_constants(n).unwrap(), 5, 1.0).unwrap();
        assert!(r.pass && r.violations == 0, "n={n}: {r:?}");
    }
}

fn order_two_setup() -> ChainSetup {
    ChainSetup {
        plant: ChainPlant::nominal(2),
        k: vec![-1.0, -2.0],
        history: History::constant(&[1.0, 0.0]),
        inputs: Inputs::zero(),
        steps_per_delay: 16,
        // with the control recomputed continuously this loop is stable up to h = 1
        update: ControlUpdate::SampleHold,
    }
}

#[test]
fn order_two_boundary_matches_grid_scan() {
    let setup = order_two_setup();
    let h = empirical_max_step(&setup, 0.05, 1.0).unwrap();
    let grid: Vec<f64> = (1..=200).map(|i| i as f64 * 0.005).collect();
    let scanned = scan_max_step(&setup, &grid).unwrap();
    assert!((h - scanned).abs() <= BISECTION_TOL + 0.005, "bisection {h}, scan {scanned}");
}

#[test]
fn bad_bracket_reported() {
    let err = empirical_max_step(&example31_setup(), 0.01, 0.05).unwrap_err();
    assert!(matches!(err, VerifyError::BadBracket { hi_class: Stability::Stable, .. }));
}

#[test]
fn reference_boundary_with_both_update_modes() {
    let held = empirical_max_step(&example31_setup(), 0.05, 0.5).unwrap();
    assert!((0.19..=0.23).contains(&held), "{held}");
    let continuous = ChainSetup { update: ControlUpdate::Continuous, ..example31_setup() };
    let c = empirical_max_step(&continuous, 0.05, 0.5).unwrap();
    assert!((0.30..=0.33).contains(&c), "{c}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn narrowing_bracket_keeps_answer_inside(lo in 0.05f64..0.15, hi in 0.25f64..0.5) {
        let setup = example31_setup();
        let wide = empirical_max_step(&setup, 0.05, 0.5).unwrap();
        let narrow = empirical_max_step(&setup, lo, hi).unwrap();
        prop_assert!(narrow >= lo && narrow <= hi);
        prop_assert!((narrow - wide).abs() <= 2.0 * BISECTION_TOL);
    }
}

#[test]
fn reports_serialize() {
    let r = verify::check_estimator_bound(2, 0.5, 2, &estimator_constants(2).unwrap(), 1, 1.0).unwrap();
    assert!(r.runs == 2 && r.points > 0);
}
