use nalgebra::DMatrix;
use proptest::prelude::*;
use pulseshaper::integrate::{flow_endpoint, integrate_field, integrate_flow, IntegratorSettings, VectorField};
use pulseshaper::model::{builtin_lorenz, builtin_repressilator8, builtin_toxin_antitoxin};
use pulseshaper::Pulse;

struct Decay;

impl VectorField for Decay {
    fn dim(&self) -> usize {
        1
    }
    fn eval(&self, y: &[f64], dy: &mut [f64]) {
        dy[0] = -y[0];
    }
    fn jacobian(&self, _y: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, -1.0)
    }
}

fn decay_error(stiff: bool, rtol: f64, atol: f64) -> f64 {
    let settings = IntegratorSettings { stiff, ..IntegratorSettings::default() }.with_tolerances(rtol, atol);
    let traj = integrate_field(&Decay, &[1.0], 1.0, &settings).unwrap();
    (traj.final_state()[0] - (-1f64).exp()).abs()
}

#[test]
fn tightening_tolerances_by_1e4_gains_1e3_in_accuracy() {
    for stiff in [false, true] {
        let loose = decay_error(stiff, 1e-5, 1e-7);
        let tight = decay_error(stiff, 1e-9, 1e-11);
        assert!(loose >= 1e3 * tight, "stiff = {stiff}: {loose:e} vs {tight:e}");
    }
}

#[test]
fn stiff_stepper_handles_toxin_antitoxin() {
    let m = builtin_toxin_antitoxin();
    let (source, _) = m.default_guesses();
    let settings = IntegratorSettings::for_model(&m);
    assert!(settings.stiff);
    let traj = integrate_flow(&m, source.as_slice(), Some(&Pulse::new(10.0, 10.0).unwrap()), 100.0, &settings)
        .unwrap();
    assert!(traj.stats.accepted + traj.stats.rejected < 1_000_000);
    assert_eq!(traj.final_time(), 100.0);
}

#[test]
fn repeated_runs_are_bit_identical() {
    let m = builtin_lorenz();
    let settings = IntegratorSettings::for_model(&m);
    let p = Pulse::new(3.0, 2.0).unwrap();
    let a = integrate_flow(&m, &[1.0, 0.5, 1.0], Some(&p), 30.0, &settings).unwrap();
    let b = integrate_flow(&m, &[1.0, 0.5, 1.0], Some(&p), 30.0, &settings).unwrap();
    assert_eq!(a.times, b.times);
    assert_eq!(a.states, b.states);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn pulsed_flow_splits_at_tau(mu in 0.0..20.0f64, tau in 0.1..10.0f64, extra in 0.5..10.0f64) {
        let m = builtin_repressilator8();
        let (x0, _) = m.default_guesses();
        let settings = IntegratorSettings::for_model(&m).with_tolerances(1e-9, 1e-11);
        let t_end = tau + extra;
        let whole = flow_endpoint(&m, x0.as_slice(), Some(&Pulse::new(mu, tau).unwrap()), t_end, &settings).unwrap();

        // Constant input on [0, tau], then the free flow for the remaining time.
        let mid = flow_endpoint(&m, x0.as_slice(), Some(&Pulse::new(mu, tau).unwrap()), tau, &settings).unwrap();
        let end = flow_endpoint(&m, mid.as_slice(), None, extra, &settings).unwrap();
        let tol = 10.0 * (settings.atol + settings.rtol * whole.amax());
        prop_assert!((&whole - &end).amax() <= tol, "split mismatch {}", (&whole - &end).amax());
    }
}
