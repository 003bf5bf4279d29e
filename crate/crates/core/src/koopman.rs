//! The dominant Koopman eigenfunction `s1` of a stable fixed point, its
//! basin, and isostable timing.
//!
//! `s1(x)` is evaluated from the observable `g(x) = w1^T (x - x_fp)` along
//! the unforced flow. Because `w1` is orthogonal to every other right
//! eigenvector, `g(phi(t, x)) e^{-lambda1 t}` converges to `s1(x)` at the
//! rate `e^{Re lambda1 t}` of the quadratic terms. Integration runs in
//! deviation coordinates so that the tiny late-time deviations keep full
//! relative precision.

use std::fmt;
use std::io::{self, Write};
use std::ops::ControlFlow;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::fmt_f64;
use crate::integrate::{
    advance, integrate_to_convergence, DeviationField, IntegrationError, IntegratorSettings,
};
use crate::model::SystemModel;
use crate::spectral::{Attractors, FixedPointData};
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// `g(phi(T, x)) e^{-lambda1 T}` at checkpoint times.
    TerminalRescale,
    /// Mean of `g(phi(t, x)) e^{-lambda1 t}` over each checkpoint window.
    RunningAverage,
}

impl Estimator {
    /// Terminal rescaling for real `lambda1`, window averages otherwise.
    pub fn default_for(lambda1: C64) -> Self {
        if lambda1.im == 0.0 {
            Estimator::TerminalRescale
        } else {
            Estimator::RunningAverage
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum S1Status {
    Ok,
    NotInBasin,
    Undecided,
    Escaped,
}

impl S1Status {
    pub fn as_str(self) -> &'static str {
        match self {
            S1Status::Ok => "ok",
            S1Status::NotInBasin => "not_in_basin",
            S1Status::Undecided => "undecided",
            S1Status::Escaped => "escaped",
        }
    }
}

impl fmt::Display for S1Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One eigenfunction evaluation. `value` is present exactly when the status
/// is [`S1Status::Ok`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct S1Outcome {
    pub status: S1Status,
    pub value: Option<C64>,
    /// Flow time integrated before the decision.
    pub elapsed: f64,
}

impl S1Outcome {
    fn ok(value: C64, elapsed: f64) -> Self {
        Self { status: S1Status::Ok, value: Some(value), elapsed }
    }

    fn without_value(status: S1Status, elapsed: f64) -> Self {
        Self { status, value: None, elapsed }
    }
}

/// Growth between checkpoints beyond which the estimate is declared
/// divergent.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Evaluates `s1` of one attractor. Immutable after construction, so one
/// evaluator can serve many threads.
#[derive(Debug, Clone)]
pub struct EigenfunctionEvaluator {
    model: SystemModel,
    fp: FixedPointData,
    estimator: Estimator,
    t_checkpoint: f64,
    t_max: f64,
    rel_tol: f64,
    settings: IntegratorSettings,
    /// Other attractors as (location, capture radius).
    competitors: Vec<(DVector<f64>, f64)>,
}

impl EigenfunctionEvaluator {
    /// Evaluator for the basin of `fp`, which must be a stable hyperbolic
    /// fixed point of `model`.
    pub fn new(model: &SystemModel, fp: FixedPointData) -> Result<Self> {
        check_dim(model.dim(), fp.dim())?;
        if !fp.is_stable {
            return Err(Error::InvalidArgument("eigenfunction needs a stable fixed point".into()));
        }
        let rate = fp.lambda1.re.abs();
        let scale = 1.0 + fp.location.amax();
        let settings = IntegratorSettings {
            rtol: 1e-10,
            atol: 1e-14 * scale,
            stiff: model.is_stiff(),
            norm_relative: true,
            // Once the deviation is small, atol dominates the error test and
            // no longer sees truncation error in the slow mode; bound the step
            // by the slow time scale instead.
            h_max: 0.05 / rate,
            ..IntegratorSettings::default()
        };
        Ok(Self {
            model: model.clone(),
            estimator: Estimator::default_for(fp.lambda1),
            t_checkpoint: 5.0 / rate,
            t_max: 60.0 / rate,
            rel_tol: 1e-6,
            settings,
            competitors: Vec::new(),
            fp,
        })
    }

    /// Evaluator for the target basin, with the source registered as a
    /// competitor so that trajectories captured by it are rejected early.
    pub fn for_target(model: &SystemModel, attractors: &Attractors) -> Result<Self> {
        let mut ev = Self::new(model, attractors.target.clone())?;
        ev.add_competitor(attractors.source.location.clone());
        Ok(ev)
    }

    pub fn add_competitor(&mut self, location: DVector<f64>) {
        let radius = 1e-3 * (1.0 + location.norm());
        self.competitors.push((location, radius));
    }

    pub fn with_estimator(mut self, estimator: Estimator) -> Self {
        self.estimator = estimator;
        self
    }

    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn with_t_max(mut self, t_max: f64) -> Self {
        self.t_max = t_max;
        self
    }

    pub fn with_checkpoint(mut self, t_checkpoint: f64) -> Self {
        self.t_checkpoint = t_checkpoint;
        self
    }

    pub fn with_settings(mut self, settings: IntegratorSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn model(&self) -> &SystemModel {
        &self.model
    }

    pub fn fixed_point(&self) -> &FixedPointData {
        &self.fp
    }

    pub fn lambda1(&self) -> C64 {
        self.fp.lambda1
    }

    pub fn estimator(&self) -> Estimator {
        self.estimator
    }

    pub fn t_checkpoint(&self) -> f64 {
        self.t_checkpoint
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn rel_tol(&self) -> f64 {
        self.rel_tol
    }

    pub fn settings(&self) -> &IntegratorSettings {
        &self.settings
    }

    /// The observable `g(x) = w1^T (x - x_fp)`.
    pub fn observable(&self, x: &[f64]) -> C64 {
        self.observable_dev(&deviation(x, &self.fp.location))
    }

    fn observable_dev(&self, y: &[f64]) -> C64 {
        self.fp.w1.iter().zip(y).map(|(w, v)| w * *v).sum()
    }

    fn captured_by_competitor(&self, y: &[f64]) -> bool {
        self.competitors.iter().any(|(c, r)| {
            let d2: f64 = c
                .iter()
                .zip(y)
                .zip(self.fp.location.iter())
                .map(|((ci, yi), xi)| {
                    let d = xi + yi - ci;
                    d * d
                })
                .sum();
            d2.sqrt() <= *r
        })
    }

    /// `s1(x)`, or the reason it could not be computed.
    pub fn eval_s1(&self, x: &[f64]) -> S1Outcome {
        if x.len() != self.model.dim() || x.iter().any(|v| !v.is_finite()) {
            return S1Outcome::without_value(S1Status::Undecided, 0.0);
        }
        if !self.model.in_domain(x) {
            return S1Outcome::without_value(S1Status::Escaped, 0.0);
        }
        let y0 = deviation(x, &self.fp.location);
        if y0.iter().all(|v| *v == 0.0) {
            return S1Outcome::ok(C64::new(0.0, 0.0), 0.0);
        }
        let origin = self.fp.location.as_slice();
        let field = DeviationField::new(&self.model, origin);
        let lambda = self.fp.lambda1;
        let floor = 1e-11 * (1.0 + self.fp.location.amax());

        let mut y = y0;
        let mut t = 0.0;
        let mut h = None;
        let mut previous: Option<C64> = None;
        // Trapezoid state of the running average: last (t, integrand).
        let mut last_sample = (0.0, self.observable_dev(&y));
        while t < self.t_max {
            let t_next = (t + self.t_checkpoint).min(self.t_max);
            let mut window_integral = C64::new(0.0, 0.0);
            let mut captured = false;
            let running = self.estimator == Estimator::RunningAverage;
            let result = advance(&field, t, &y, t_next, &self.settings, h, &mut |ts, ys| {
                if running {
                    let value = self.observable_dev(ys) * (-lambda * ts).exp();
                    window_integral += (value + last_sample.1) * (0.5 * (ts - last_sample.0));
                    last_sample = (ts, value);
                }
                if self.captured_by_competitor(ys) {
                    captured = true;
                    return ControlFlow::Break(());
                }
                ControlFlow::Continue(())
            });
            let adv = match result {
                Ok(adv) => adv,
                Err(IntegrationError::Escaped { t, .. }) => {
                    return S1Outcome::without_value(S1Status::Escaped, t)
                }
                Err(_) => return S1Outcome::without_value(S1Status::Undecided, t),
            };
            if captured {
                return S1Outcome::without_value(S1Status::NotInBasin, adv.t);
            }
            let window = t_next - t;
            t = adv.t;
            y = adv.y;
            h = Some(adv.h_next);

            let size = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let estimate = match self.estimator {
                Estimator::TerminalRescale => self.observable_dev(&y) * (-lambda * t).exp(),
                Estimator::RunningAverage => window_integral / window,
            };
            if size < floor {
                // Deviations are at rounding level; the last estimate made
                // above the floor is the best available.
                return S1Outcome::ok(previous.unwrap_or(estimate), t);
            }
            let magnitude = estimate.norm();
            // Lingering near a saddle inflates |s1| legitimately over many
            // checkpoints; only a jump within one checkpoint is divergence.
            if previous.is_some_and(|p| magnitude > DIVERGENCE_FACTOR * p.norm()) {
                return S1Outcome::without_value(S1Status::NotInBasin, t);
            }
            if let Some(p) = previous {
                if (estimate - p).norm() <= self.rel_tol * magnitude.max(p.norm()) {
                    return S1Outcome::ok(estimate, t);
                }
            }
            previous = Some(estimate);
        }
        S1Outcome::without_value(S1Status::Undecided, t)
    }

    /// Evaluates many points concurrently; output order matches input order.
    pub fn eval_batch(&self, points: &[DVector<f64>]) -> Vec<S1Outcome> {
        points.par_iter().map(|x| self.eval_s1(x.as_slice())).collect()
    }
}

fn deviation(x: &[f64], origin: &DVector<f64>) -> Vec<f64> {
    x.iter().zip(origin.iter()).map(|(a, b)| a - b).collect()
}

/// Writes `x1,...,xn,re_s1,im_s1,status` rows.
pub fn write_batch_csv<W: Write>(
    mut w: W,
    points: &[DVector<f64>],
    outcomes: &[S1Outcome],
) -> io::Result<()> {
    let n = points.first().map_or(0, |p| p.len());
    let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    header.extend(["re_s1", "im_s1", "status"].map(String::from));
    writeln!(w, "{}", header.join(","))?;
    for (p, o) in points.iter().zip(outcomes) {
        let mut row: Vec<String> = p.iter().map(|v| fmt_f64(*v)).collect();
        let (re, im) = o.value.map_or((f64::NAN, f64::NAN), |z| (z.re, z.im));
        row.push(fmt_f64(re));
        row.push(fmt_f64(im));
        row.push(o.status.to_string());
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basin {
    Target,
    Source,
    Escaped,
    Undecided,
}

/// Which attractor the unforced flow from a point reaches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasinLabel {
    pub basin: Basin,
    /// Capture time for `Target`/`Source`, escape time for `Escaped`.
    pub witness_time: Option<f64>,
}

/// Default horizon of basin classification runs.
pub const DEFAULT_CLASSIFY_T_MAX: f64 = 500.0;

/// Classifies `x` by integrating the unforced flow into a capture ball.
/// Integrator failures become labels, never errors.
pub fn classify_basin(
    model: &SystemModel,
    attractors: &Attractors,
    x: &[f64],
    t_max: f64,
    settings: &IntegratorSettings,
) -> BasinLabel {
    let points = [attractors.target.location.clone(), attractors.source.location.clone()];
    match integrate_to_convergence(model, x, &points, None, t_max, settings) {
        Ok(run) => match run.captured {
            Some(0) => BasinLabel { basin: Basin::Target, witness_time: run.capture_time },
            Some(_) => BasinLabel { basin: Basin::Source, witness_time: run.capture_time },
            None => BasinLabel { basin: Basin::Undecided, witness_time: None },
        },
        Err(IntegrationError::Escaped { t, .. }) => {
            BasinLabel { basin: Basin::Escaped, witness_time: Some(t) }
        }
        Err(_) => BasinLabel { basin: Basin::Undecided, witness_time: None },
    }
}

/// Time separating the isostables `|s1| = alpha1` and `|s1| = alpha2`:
/// `ln(alpha1 / alpha2) / |Re lambda1|`.
pub fn isostable_time(alpha1: f64, alpha2: f64, lambda1_re: f64) -> Result<f64> {
    if !(alpha1 > 0.0 && alpha2 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "isostable levels must be positive, got {alpha1} and {alpha2}"
        )));
    }
    if !(lambda1_re < 0.0) {
        return Err(Error::InvalidArgument(format!("Re lambda1 = {lambda1_re} must be negative")));
    }
    Ok((alpha1 / alpha2).ln() / lambda1_re.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::integrate_flow;
    use crate::model::{builtin_lorenz, builtin_repressilator8};
    use crate::spectral::DEFAULT_NEWTON_TOL;
    use approx::assert_abs_diff_eq;

    fn repressilator() -> (SystemModel, Attractors, EigenfunctionEvaluator) {
        let m = builtin_repressilator8();
        let att = Attractors::locate(&m, DEFAULT_NEWTON_TOL).unwrap();
        let ev = EigenfunctionEvaluator::for_target(&m, &att).unwrap();
        (m, att, ev)
    }

    #[test]
    fn isostable_time_examples() {
        assert_abs_diff_eq!(isostable_time(0.1, 0.01, -1.0).unwrap(), 10f64.ln(), epsilon = 1e-15);
        assert_eq!(isostable_time(0.3, 0.3, -0.7).unwrap(), 0.0);
        assert_abs_diff_eq!(isostable_time(0.01, 0.1, -2.0).unwrap(), -1.151292546, epsilon = 1e-9);
        assert!(isostable_time(0.0, 0.1, -1.0).is_err());
        assert!(isostable_time(0.1, 0.1, 0.5).is_err());
    }

    #[test]
    fn fixed_point_maps_to_zero() {
        let (_, att, ev) = repressilator();
        let out = ev.eval_s1(att.target.location.as_slice());
        assert_eq!(out.status, S1Status::Ok);
        assert_eq!(out.value, Some(C64::new(0.0, 0.0)));
        assert_eq!(ev.observable(att.target.location.as_slice()), C64::new(0.0, 0.0));
    }

    #[test]
    fn first_order_normalization() {
        let (_, att, ev) = repressilator();
        let delta = 1e-4;
        let x = &att.target.location + att.target.v1_real() * delta;
        let out = ev.eval_s1(x.as_slice());
        let s = out.value.unwrap();
        assert!((s.re / delta - 1.0).abs() < 1e-3, "{s}");
        assert_eq!(s.im, 0.0);
    }

    #[test]
    fn other_attractor_is_not_in_basin() {
        let (_, att, ev) = repressilator();
        let out = ev.eval_s1(att.source.location.as_slice());
        assert_eq!(out.status, S1Status::NotInBasin);
        assert!(out.value.is_none());
        // Without the competitor the estimate only grows by e^5 per
        // checkpoint, so nothing decides before the horizon runs out.
        let bare = EigenfunctionEvaluator::new(ev.model(), att.target.clone()).unwrap();
        let out = bare.eval_s1(att.source.location.as_slice());
        assert_eq!(out.status, S1Status::Undecided);
    }

    #[test]
    fn semigroup_on_a_pulsed_point() {
        let (m, att, ev) = repressilator();
        let p = crate::model::Pulse::new(10.0, 20.0).unwrap();
        let x = integrate_flow(&m, att.source.location.as_slice(), Some(&p), 20.0, &IntegratorSettings::default())
            .unwrap()
            .final_state()
            .clone();
        let s0 = ev.eval_s1(x.as_slice()).value.unwrap();
        let s = IntegratorSettings { rtol: 1e-11, atol: 1e-13, ..Default::default() };
        for t in [1.0, 2.0, 5.0] {
            let xt = integrate_flow(&m, x.as_slice(), None, t, &s).unwrap().final_state().clone();
            let st = ev.eval_s1(xt.as_slice()).value.unwrap();
            let predicted = s0 * (ev.lambda1() * t).exp();
            assert!((st - predicted).norm() <= 1e-4 * s0.norm().max(1.0), "t={t}: {st} vs {predicted}");
        }
    }

    #[test]
    fn estimators_agree_for_real_lambda() {
        let (m, att, ev) = repressilator();
        let p = crate::model::Pulse::new(20.0, 15.0).unwrap();
        let x = crate::integrate::flow_endpoint(&m, att.source.location.as_slice(), Some(&p), 15.0, &Default::default())
            .unwrap();
        let a = ev.eval_s1(x.as_slice()).value.unwrap();
        let avg = ev.clone().with_estimator(Estimator::RunningAverage);
        let b = avg.eval_s1(x.as_slice()).value.unwrap();
        assert!((a - b).norm() <= 1e-4 * a.norm(), "{a} vs {b}");
    }

    #[test]
    fn lorenz_complex_eigenfunction() {
        let m = builtin_lorenz();
        let att = Attractors::locate(&m, 1e-12).unwrap();
        let ev = EigenfunctionEvaluator::for_target(&m, &att).unwrap();
        assert_eq!(ev.estimator(), Estimator::RunningAverage);
        let x = &att.target.location + DVector::from_vec(vec![0.3, -0.2, 0.4]);
        let s0 = ev.eval_s1(x.as_slice());
        assert_eq!(s0.status, S1Status::Ok);
        let s0 = s0.value.unwrap();
        assert!(s0.im.abs() > 0.0);
        let s = IntegratorSettings { rtol: 1e-11, atol: 1e-13, ..Default::default() };
        let xt = integrate_flow(&m, x.as_slice(), None, 1.0, &s).unwrap().final_state().clone();
        let st = ev.eval_s1(xt.as_slice()).value.unwrap();
        let predicted = s0 * ev.lambda1().exp();
        assert!((st - predicted).norm() <= 1e-4 * s0.norm().max(1.0), "{st} vs {predicted}");
        assert_eq!(ev.eval_s1(att.source.location.as_slice()).status, S1Status::NotInBasin);
        assert_eq!(ev.eval_s1(&[60.0, 0.0, 0.0]).status, S1Status::Escaped);
    }

    #[test]
    fn basin_classification() {
        let (m, att, _) = repressilator();
        let s = IntegratorSettings::default();
        let label = classify_basin(&m, &att, att.target.location.as_slice(), 500.0, &s);
        assert_eq!(label, BasinLabel { basin: Basin::Target, witness_time: Some(0.0) });
        let p = crate::model::Pulse::new(10.0, 10.0).unwrap();
        let x = crate::integrate::flow_endpoint(&m, att.source.location.as_slice(), Some(&p), 10.0, &s).unwrap();
        assert_eq!(classify_basin(&m, &att, x.as_slice(), 500.0, &s).basin, Basin::Target);
        let label = classify_basin(&m, &att, att.source.location.as_slice(), 500.0, &s);
        assert_eq!(label.basin, Basin::Source);
    }

    #[test]
    fn batch_csv() {
        let (_, att, ev) = repressilator();
        let pts = vec![att.target.location.clone(), att.source.location.clone()];
        let out = ev.eval_batch(&pts);
        let mut buf = Vec::new();
        write_batch_csv(&mut buf, &pts, &out).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x1,x2,x3,x4,x5,x6,x7,x8,re_s1,im_s1,status");
        assert!(lines[1].ends_with(",ok"));
        assert!(lines[2].ends_with(",nan,nan,not_in_basin"));
    }
}
