use proptest::prelude::*;
use pulseshaper::integrate::{flow_endpoint, integrate_field, DeviationField};
use pulseshaper::koopman::S1Status;
use pulseshaper::switching::SwitchingProblem;
use pulseshaper::{ModelFamily, Pulse, SystemModel, C64};

fn repressilator() -> SwitchingProblem {
    SwitchingProblem::new(&SystemModel::builtin(ModelFamily::Repressilator8)).unwrap()
}

/// Pulses well inside the switching region, with moderate `|r|`.
const INTERIOR: [(f64, f64); 10] = [
    (6.0, 12.0),
    (8.0, 10.0),
    (9.0, 14.0),
    (10.0, 9.0),
    (12.0, 11.0),
    (14.0, 8.0),
    (15.0, 16.0),
    (16.0, 10.0),
    (18.0, 7.5),
    (20.0, 12.0),
];

/// `|s1|` at time `t` of the pulsed trajectory from the source, or `None`
/// while the state is outside the target basin.
fn s1_along(problem: &SwitchingProblem, pulse: &Pulse, t: f64) -> Option<f64> {
    let model = problem.model();
    let settings = problem.pulse_settings();
    let x0 = problem.attractors().source.location.as_slice();
    let x = if t <= pulse.tau {
        flow_endpoint(model, x0, Some(&Pulse::new(pulse.mu, t).unwrap()), t, settings).unwrap()
    } else {
        let end = flow_endpoint(model, x0, Some(pulse), pulse.tau, settings).unwrap();
        flow_endpoint(model, end.as_slice(), None, t - pulse.tau, settings).unwrap()
    };
    let out = problem.evaluator().eval_s1(x.as_slice());
    (out.status == S1Status::Ok).then(|| out.value.unwrap().norm())
}

#[test]
fn simulated_entry_time_matches_the_prediction() {
    let problem = repressilator();
    let eps = problem.eps();
    let inside = |pulse: &Pulse, t: f64| s1_along(&problem, pulse, t).is_some_and(|v| v <= eps);
    for (mu, tau) in INTERIOR {
        let pulse = Pulse::new(mu, tau).unwrap();
        let sample = problem.eval_r(&pulse);
        let t_eps = sample.t_eps.unwrap();
        assert!(t_eps > 0.0, "({mu}, {tau}): T = {t_eps}");

        // Scan the whole trajectory for the first entry, then refine.
        let step = 0.25;
        let mut t = 0.0;
        while !inside(&pulse, t + step) {
            t += step;
            assert!(t < tau + 2.0 * t_eps + 10.0, "({mu}, {tau}): never enters");
        }
        let (mut lo, mut hi) = (t, t + step);
        while hi - lo > 1e-4 {
            let mid = 0.5 * (lo + hi);
            if inside(&pulse, mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let predicted = tau + t_eps;
        assert!(
            (hi - predicted).abs() <= 0.05 * t_eps.max(1.0),
            "({mu}, {tau}): entry at {hi}, predicted {predicted}"
        );
    }
}

#[test]
fn endpoint_form_matches_the_time_shifted_laplace_average() {
    let problem = repressilator();
    let fp = &problem.attractors().target;
    let lambda = fp.lambda1;
    let rate = lambda.re.abs();
    // Window late enough that the nonlinear transient has died out.
    let window = (12.0 / rate, 18.0 / rate);
    for &(mu, tau) in INTERIOR.iter().step_by(2) {
        let pulse = Pulse::new(mu, tau).unwrap();
        let r = problem.eval_r(&pulse).r.unwrap();

        let x0 = problem.attractors().source.location.as_slice();
        let end = flow_endpoint(problem.model(), x0, Some(&pulse), tau, problem.pulse_settings()).unwrap();
        let origin = fp.location.as_slice();
        let y0: Vec<f64> = end.iter().zip(origin).map(|(a, b)| a - b).collect();
        let field = DeviationField::new(problem.model(), origin);
        let traj = integrate_field(&field, &y0, window.1, problem.evaluator().settings()).unwrap();

        // Trapezoid mean of g(phi(t)) e^{-lambda1 t} over the window; t is
        // measured from the end of the pulse.
        let integrand: Vec<(f64, C64)> = traj
            .times
            .iter()
            .zip(&traj.states)
            .filter(|(t, _)| **t >= window.0)
            .map(|(t, y)| {
                let g: C64 = fp.w1.iter().zip(y.iter()).map(|(w, v)| w * *v).sum();
                (*t, g * (-lambda * *t).exp())
            })
            .collect();
        assert!(integrand.len() >= 10);
        let span = integrand.last().unwrap().0 - integrand[0].0;
        let mean: C64 = integrand.windows(2).map(|p| (p[0].1 + p[1].1) * (0.5 * (p[1].0 - p[0].0))).sum::<C64>() / span;
        assert!((mean - r).norm() <= 1e-4 * r.norm(), "({mu}, {tau}): Laplace {mean} vs endpoint {r}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 30, max_global_rejects: 300, ..ProptestConfig::default() })]

    #[test]
    fn r_grows_along_the_pulse_order(
        mu in 4.0..20.0f64,
        tau in 5.0..20.0f64,
        dmu in 0.0..5.0f64,
        dtau in 0.0..5.0f64,
    ) {
        let problem = repressilator();
        let a = problem.eval_r(&Pulse::new(mu, tau).unwrap());
        let b = problem.eval_r(&Pulse::new(mu + dmu, tau + dtau).unwrap());
        let (Some(ra), Some(rb)) = (a.r, b.r) else {
            return Err(TestCaseError::reject("pair outside the switching set"));
        };
        prop_assert!(ra.re <= rb.re + 1e-6, "r({mu}, {tau}) = {ra} > r({}, {}) = {rb}", mu + dmu, tau + dtau);
    }
}

#[test]
fn zero_length_pulses_never_switch() {
    let problem = repressilator();
    for mu in [0.0, 1.0, 20.0] {
        let s = problem.eval_r(&Pulse::new(mu, 0.0).unwrap());
        assert_eq!(s.status, S1Status::NotInBasin);
        assert!(s.r.is_none() && s.t_eps.is_none());
    }
}
