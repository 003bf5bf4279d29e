//! Time integration of models under pulse inputs.
//!
//! Two adaptive steppers share one driver contract ([`advance`]): the
//! Dormand–Prince 5(4) pair for non-stiff fields and a stiffly accurate,
//! L-stable ESDIRK 4(3) scheme for stiff ones. Pulsed runs are split at
//! `t = tau`, so the input discontinuity always falls on a step boundary.

mod dopri5;
mod esdirk;

use std::io::{self, Write};
use std::ops::ControlFlow;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::fmt_f64;
use crate::model::{Pulse, SystemModel};

pub use dopri5::DOPRI5_TABLEAU;
pub use esdirk::ESDIRK_TABLEAU;

/// Runge–Kutta coefficients with an embedded error estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ButcherTableau<const S: usize> {
    pub c: [f64; S],
    /// Row-major stage coefficients; diagonal entries are nonzero for
    /// implicit schemes.
    pub a: [[f64; S]; S],
    pub b: [f64; S],
    /// Weights of the embedded lower-order solution.
    pub b_hat: [f64; S],
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum IntegrationError {
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("maximum number of steps ({steps}) exceeded at t = {t}")]
    MaxSteps { t: f64, steps: usize },
    #[error("state escaped the domain box at t = {t}")]
    Escaped { t: f64, state: Vec<f64> },
    #[error("non-finite derivative at t = {t}")]
    NonFinite { t: f64 },
    #[error("invalid integrator settings: {0}")]
    InvalidSettings(String),
    #[error("invalid integration request: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorSettings {
    pub rtol: f64,
    pub atol: f64,
    /// First trial step; chosen automatically when `None`.
    pub h_init: Option<f64>,
    pub h_min: f64,
    pub h_max: f64,
    pub stiff: bool,
    pub max_steps: usize,
    /// Scale the error of every component by the max-norm of the state
    /// instead of its own magnitude. Used for deviation coordinates, where
    /// individual components pass through zero.
    pub norm_relative: bool,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            h_init: None,
            h_min: 1e-14,
            h_max: 10.0,
            stiff: false,
            max_steps: 1_000_000,
            norm_relative: false,
        }
    }
}

impl IntegratorSettings {
    /// Defaults with the stepper chosen by the model's stiffness flag.
    pub fn for_model(model: &SystemModel) -> Self {
        Self { stiff: model.is_stiff(), ..Self::default() }
    }

    pub fn with_tolerances(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = atol;
        self
    }

    pub fn validate(&self) -> Result<(), IntegrationError> {
        let bad = |m: &str| Err(IntegrationError::InvalidSettings(m.to_string()));
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return bad("rtol and atol must be positive");
        }
        if !(self.h_min > 0.0 && self.h_min <= self.h_max) {
            return bad("need 0 < h_min <= h_max");
        }
        if let Some(h) = self.h_init {
            if !(h > 0.0) {
                return bad("h_init must be positive");
            }
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive");
        }
        Ok(())
    }

    pub(crate) fn error_scale(&self, y: &[f64], y_new: &[f64], out: &mut [f64]) {
        if self.norm_relative {
            let m = y.iter().chain(y_new).fold(0.0f64, |a, v| a.max(v.abs()));
            out.fill(self.atol + self.rtol * m);
        } else {
            for i in 0..out.len() {
                out[i] = self.atol + self.rtol * y[i].abs().max(y_new[i].abs());
            }
        }
    }
}

/// Autonomous vector field seen by the steppers. Inputs are constant within
/// one call to [`advance`].
pub trait VectorField {
    fn dim(&self) -> usize;
    fn eval(&self, y: &[f64], dy: &mut [f64]);
    fn jacobian(&self, y: &[f64]) -> DMatrix<f64>;
    /// States for which integration may continue.
    fn admissible(&self, _y: &[f64]) -> bool {
        true
    }
}

/// `f(x, u)` with a constant input.
pub struct ForcedField<'a> {
    pub model: &'a SystemModel,
    pub u: f64,
}

impl VectorField for ForcedField<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn eval(&self, y: &[f64], dy: &mut [f64]) {
        self.model.eval_f_into(y, self.u, dy);
    }

    fn jacobian(&self, y: &[f64]) -> DMatrix<f64> {
        self.model.jacobian(y, self.u)
    }

    fn admissible(&self, y: &[f64]) -> bool {
        self.model.in_domain(y)
    }
}

/// Unforced field in coordinates `y = x - origin`, shifted so that `y = 0`
/// is an exact equilibrium: `y' = f(origin + y, 0) - f(origin, 0)`.
pub struct DeviationField<'a> {
    model: &'a SystemModel,
    origin: &'a [f64],
    offset: Vec<f64>,
}

impl<'a> DeviationField<'a> {
    pub fn new(model: &'a SystemModel, origin: &'a [f64]) -> Self {
        let offset = model.eval_f(origin, 0.0).as_slice().to_vec();
        Self { model, origin, offset }
    }

    fn with_absolute<R>(&self, y: &[f64], body: impl FnOnce(&[f64]) -> R) -> R {
        let n = y.len();
        if n <= 16 {
            let mut x = [0.0; 16];
            for i in 0..n {
                x[i] = self.origin[i] + y[i];
            }
            body(&x[..n])
        } else {
            let x: Vec<f64> = self.origin.iter().zip(y).map(|(o, d)| o + d).collect();
            body(&x)
        }
    }
}

impl VectorField for DeviationField<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn eval(&self, y: &[f64], dy: &mut [f64]) {
        self.with_absolute(y, |x| self.model.eval_f_into(x, 0.0, dy));
        for (d, o) in dy.iter_mut().zip(&self.offset) {
            *d -= o;
        }
    }

    fn jacobian(&self, y: &[f64]) -> DMatrix<f64> {
        self.with_absolute(y, |x| self.model.jacobian(x, 0.0))
    }

    fn admissible(&self, y: &[f64]) -> bool {
        self.with_absolute(y, |x| self.model.in_domain(x))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    pub jacobian_evals: usize,
}

impl StepStats {
    fn absorb(&mut self, other: StepStats) {
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        self.rhs_evals += other.rhs_evals;
        self.jacobian_evals += other.jacobian_evals;
    }
}

/// Outcome of one [`advance`] call.
#[derive(Debug, Clone)]
pub struct Advance {
    pub t: f64,
    pub y: Vec<f64>,
    /// Step size proposal for a continuation run.
    pub h_next: f64,
    pub stats: StepStats,
    /// True when the observer asked to stop before `t1`.
    pub interrupted: bool,
}

/// Integrates `field` from `(t0, y0)` to `t1`, calling `observer` after every
/// accepted step. The observer may stop the run early.
pub fn advance<F: VectorField + ?Sized>(
    field: &F,
    t0: f64,
    y0: &[f64],
    t1: f64,
    settings: &IntegratorSettings,
    h_hint: Option<f64>,
    observer: &mut dyn FnMut(f64, &[f64]) -> ControlFlow<()>,
) -> Result<Advance, IntegrationError> {
    settings.validate()?;
    if y0.len() != field.dim() {
        return Err(IntegrationError::InvalidArgument(format!(
            "state has length {}, field has dimension {}",
            y0.len(),
            field.dim()
        )));
    }
    if !(t1 >= t0) {
        return Err(IntegrationError::InvalidArgument(format!("t1 = {t1} < t0 = {t0}")));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(IntegrationError::NonFinite { t: t0 });
    }
    if !field.admissible(y0) {
        return Err(IntegrationError::Escaped { t: t0, state: y0.to_vec() });
    }
    if t1 == t0 {
        return Ok(Advance {
            t: t0,
            y: y0.to_vec(),
            h_next: h_hint.or(settings.h_init).unwrap_or(settings.h_max),
            stats: StepStats::default(),
            interrupted: false,
        });
    }
    if settings.stiff {
        esdirk::advance(field, t0, y0, t1, settings, h_hint, observer)
    } else {
        dopri5::advance(field, t0, y0, t1, settings, h_hint, observer)
    }
}

/// Weighted RMS norm `sqrt(mean((v_i / scale_i)^2))`.
pub(crate) fn rms_norm(v: &[f64], scale: &[f64]) -> f64 {
    let s: f64 = v.iter().zip(scale).map(|(a, b)| (a / b) * (a / b)).sum();
    (s / v.len() as f64).sqrt()
}

/// Hairer–Wanner starting step heuristic for a method of order `order`.
pub(crate) fn initial_step<F: VectorField + ?Sized>(
    field: &F,
    y0: &[f64],
    f0: &[f64],
    settings: &IntegratorSettings,
    order: i32,
    span: f64,
) -> f64 {
    let n = y0.len();
    let mut scale = vec![0.0; n];
    settings.error_scale(y0, y0, &mut scale);
    let d0 = rms_norm(y0, &scale);
    let d1 = rms_norm(f0, &scale);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h0 * f).collect();
    let mut f1 = vec![0.0; n];
    field.eval(&y1, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms_norm(&diff, &scale) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / f64::from(order + 1))
    };
    let h = (100.0 * h0).min(h1);
    if h.is_finite() && h > 0.0 {
        h.clamp(settings.h_min, settings.h_max).min(span)
    } else {
        settings.h_min.max(1e-6 * span).min(span)
    }
}

/// Time-stamped accepted-step samples of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// The pulse applied, or `None` for the unforced flow.
    pub input_used: Option<Pulse>,
    pub stats: StepStats,
}

impl Trajectory {
    fn start(x0: &[f64], input_used: Option<Pulse>) -> Self {
        Self {
            times: vec![0.0],
            states: vec![DVector::from_column_slice(x0)],
            input_used,
            stats: StepStats::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory has its initial sample")
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has its initial sample")
    }

    /// CSV with header `t,x1,...,xn` and 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.states.first().map_or(0, |s| s.len());
        let header: Vec<String> =
            std::iter::once("t".to_string()).chain((1..=n).map(|i| format!("x{i}"))).collect();
        writeln!(w, "{}", header.join(","))?;
        for (t, x) in self.times.iter().zip(&self.states) {
            let row: Vec<String> =
                std::iter::once(fmt_f64(*t)).chain(x.iter().map(|v| fmt_f64(*v))).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Integrates a generic field from `x0` over `[0, t_end]`, recording every
/// accepted step.
pub fn integrate_field<F: VectorField + ?Sized>(
    field: &F,
    x0: &[f64],
    t_end: f64,
    settings: &IntegratorSettings,
) -> Result<Trajectory, IntegrationError> {
    let mut traj = Trajectory::start(x0, None);
    run_segment(field, &mut traj, t_end, settings, None)?;
    Ok(traj)
}

fn run_segment<F: VectorField + ?Sized>(
    field: &F,
    traj: &mut Trajectory,
    t1: f64,
    settings: &IntegratorSettings,
    h_hint: Option<f64>,
) -> Result<f64, IntegrationError> {
    let t0 = traj.final_time();
    let y0 = traj.final_state().as_slice().to_vec();
    let (times, states) = (&mut traj.times, &mut traj.states);
    let adv = advance(field, t0, &y0, t1, settings, h_hint, &mut |t, y| {
        times.push(t);
        states.push(DVector::from_column_slice(y));
        ControlFlow::Continue(())
    })?;
    traj.stats.absorb(adv.stats);
    Ok(adv.h_next)
}

/// Samples of `phi(t, x0, mu h(., tau))` on `[0, t_end]`.
///
/// `pulse = None` (or a null pulse) integrates the unforced flow. The run is
/// split at `t = tau`; the forced and unforced pieces are separate calls to
/// the stepper.
pub fn integrate_flow(
    model: &SystemModel,
    x0: &[f64],
    pulse: Option<&Pulse>,
    t_end: f64,
    settings: &IntegratorSettings,
) -> Result<Trajectory, IntegrationError> {
    if x0.len() != model.dim() {
        return Err(IntegrationError::InvalidArgument(format!(
            "initial state has length {}, model `{}` has dimension {}",
            x0.len(),
            model.name(),
            model.dim()
        )));
    }
    if !(t_end > 0.0) {
        return Err(IntegrationError::InvalidArgument(format!("t_end = {t_end} must be > 0")));
    }
    let mut traj = Trajectory::start(x0, pulse.copied());
    let mut h = None;
    if let Some(p) = pulse.filter(|p| !p.is_null()) {
        let forced = ForcedField { model, u: p.mu };
        h = Some(run_segment(&forced, &mut traj, p.tau.min(t_end), settings, None)?);
    }
    if traj.final_time() < t_end {
        let free = ForcedField { model, u: 0.0 };
        run_segment(&free, &mut traj, t_end, settings, h)?;
    }
    Ok(traj)
}

/// Endpoint `phi(t_end, x0, mu h(., tau))` without storing the trajectory.
pub fn flow_endpoint(
    model: &SystemModel,
    x0: &[f64],
    pulse: Option<&Pulse>,
    t_end: f64,
    settings: &IntegratorSettings,
) -> Result<DVector<f64>, IntegrationError> {
    if x0.len() != model.dim() {
        return Err(IntegrationError::InvalidArgument("dimension mismatch".into()));
    }
    let mut y = x0.to_vec();
    let mut t = 0.0;
    let mut h = None;
    if let Some(p) = pulse.filter(|p| !p.is_null()) {
        let forced = ForcedField { model, u: p.mu };
        let t1 = p.tau.min(t_end);
        let adv = advance(&forced, t, &y, t1, settings, None, &mut |_, _| ControlFlow::Continue(()))?;
        y = adv.y;
        t = t1;
        h = Some(adv.h_next);
    }
    if t < t_end {
        let free = ForcedField { model, u: 0.0 };
        y = advance(&free, t, &y, t_end, settings, h, &mut |_, _| ControlFlow::Continue(()))?.y;
    }
    Ok(DVector::from_vec(y))
}

/// Result of [`integrate_to_convergence`].
#[derive(Debug, Clone)]
pub struct ConvergenceRun {
    pub trajectory: Trajectory,
    /// Index into the attractor list of the point whose capture ball was
    /// entered, if any.
    pub captured: Option<usize>,
    pub capture_time: Option<f64>,
}

/// Default capture radius `1e-6 * (1 + |x_fp|)`.
pub fn default_capture_radius(x_fp: &DVector<f64>) -> f64 {
    1e-6 * (1.0 + x_fp.norm())
}

/// Integrates the unforced flow until the state enters the capture ball of
/// one of `attractors`, or until `t_max`.
///
/// `capture_radius = None` uses [`default_capture_radius`] for each point.
pub fn integrate_to_convergence(
    model: &SystemModel,
    x0: &[f64],
    attractors: &[DVector<f64>],
    capture_radius: Option<f64>,
    t_max: f64,
    settings: &IntegratorSettings,
) -> Result<ConvergenceRun, IntegrationError> {
    if x0.len() != model.dim() {
        return Err(IntegrationError::InvalidArgument("dimension mismatch".into()));
    }
    let radii: Vec<f64> = attractors
        .iter()
        .map(|a| capture_radius.unwrap_or_else(|| default_capture_radius(a)))
        .collect();
    let captured_by = |y: &[f64]| {
        attractors.iter().zip(&radii).position(|(a, r)| {
            let d2: f64 = a.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
            d2.sqrt() <= *r
        })
    };
    let mut traj = Trajectory::start(x0, None);
    if !model.in_domain(x0) {
        return Err(IntegrationError::Escaped { t: 0.0, state: x0.to_vec() });
    }
    if let Some(i) = captured_by(x0) {
        return Ok(ConvergenceRun { trajectory: traj, captured: Some(i), capture_time: Some(0.0) });
    }
    let field = ForcedField { model, u: 0.0 };
    let mut hit = None;
    let (times, states) = (&mut traj.times, &mut traj.states);
    let adv = advance(&field, 0.0, x0, t_max, settings, None, &mut |t, y| {
        times.push(t);
        states.push(DVector::from_column_slice(y));
        match captured_by(y) {
            Some(i) => {
                hit = Some((i, t));
                ControlFlow::Break(())
            }
            None => ControlFlow::Continue(()),
        }
    })?;
    traj.stats.absorb(adv.stats);
    Ok(ConvergenceRun {
        trajectory: traj,
        captured: hit.map(|h| h.0),
        capture_time: hit.map(|h| h.1),
    })
}
