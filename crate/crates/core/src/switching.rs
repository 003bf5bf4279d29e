//! The switching function `r(mu, tau) = s1_target(phi(tau, x_source, mu))`
//! and the convergence-time maps derived from it.

use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::integrate::{flow_endpoint, IntegrationError, IntegratorSettings};
use crate::koopman::{classify_basin, Basin, BasinLabel, EigenfunctionEvaluator, S1Status};
use crate::model::{Pulse, SystemModel};
use crate::spectral::{Attractors, DEFAULT_NEWTON_TOL};
use crate::C64;

/// Default isostable level `eps` of the convergence-time maps.
pub const DEFAULT_EPS: f64 = 1e-2;

/// `alpha = eps * e^{|Re lambda1| T}`: the level of `|r|` whose pulses need
/// time `T` after switch-off to reach the `eps`-isostable.
pub fn alpha_for_time(eps: f64, lambda1_re: f64, t: f64) -> f64 {
    eps * (lambda1_re.abs() * t).exp()
}

/// One evaluation of the switching function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchingSample {
    pub pulse: Pulse,
    /// `ok` exactly when the pulse-end state lies in the target basin.
    pub status: S1Status,
    pub r: Option<C64>,
    /// `ln(|r| / eps) / |Re lambda1|`, present with `r`.
    pub t_eps: Option<f64>,
    pub eps: f64,
}

impl SwitchingSample {
    pub fn switches(&self) -> bool {
        self.status == S1Status::Ok
    }

    pub fn abs_r(&self) -> Option<f64> {
        self.r.map(|z| z.norm())
    }

    /// `T_tot = tau + max(T_eps, 0)`.
    pub fn t_total(&self) -> Option<f64> {
        self.t_eps.map(|t| self.pulse.tau + t.max(0.0))
    }
}

/// Shared, immutable context for switching-function evaluations.
#[derive(Debug, Clone)]
pub struct SwitchingProblem {
    model: SystemModel,
    attractors: Attractors,
    evaluator: EigenfunctionEvaluator,
    pulse_settings: IntegratorSettings,
    classify_settings: IntegratorSettings,
    eps: f64,
}

impl SwitchingProblem {
    /// Locates the attractors from the model's default guesses and prepares
    /// the target-basin evaluator.
    pub fn new(model: &SystemModel) -> Result<Self> {
        let attractors = Attractors::locate(model, DEFAULT_NEWTON_TOL)?;
        Self::from_attractors(model, attractors)
    }

    pub fn from_attractors(model: &SystemModel, attractors: Attractors) -> Result<Self> {
        let evaluator = EigenfunctionEvaluator::for_target(model, &attractors)?;
        let pulse_settings = IntegratorSettings {
            rtol: 1e-10,
            atol: 1e-12,
            ..IntegratorSettings::for_model(model)
        };
        Ok(Self {
            model: model.clone(),
            attractors,
            evaluator,
            pulse_settings,
            classify_settings: IntegratorSettings::for_model(model),
            eps: DEFAULT_EPS,
        })
    }

    pub fn with_eps(mut self, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidArgument(format!("eps = {eps} must be positive")));
        }
        self.eps = eps;
        Ok(self)
    }

    pub fn with_evaluator(mut self, evaluator: EigenfunctionEvaluator) -> Self {
        self.evaluator = evaluator;
        self
    }

    pub fn with_pulse_settings(mut self, settings: IntegratorSettings) -> Self {
        self.pulse_settings = settings;
        self
    }

    pub fn model(&self) -> &SystemModel {
        &self.model
    }

    pub fn attractors(&self) -> &Attractors {
        &self.attractors
    }

    pub fn evaluator(&self) -> &EigenfunctionEvaluator {
        &self.evaluator
    }

    pub fn pulse_settings(&self) -> &IntegratorSettings {
        &self.pulse_settings
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn lambda1(&self) -> C64 {
        self.attractors.target.lambda1
    }

    /// State at the end of the pulse, `phi(tau, x_source, mu)`.
    pub fn pulse_endpoint(&self, pulse: &Pulse) -> std::result::Result<Vec<f64>, IntegrationError> {
        let x0 = self.attractors.source.location.as_slice();
        if pulse.is_null() {
            return Ok(x0.to_vec());
        }
        flow_endpoint(&self.model, x0, Some(pulse), pulse.tau, &self.pulse_settings)
            .map(|x| x.as_slice().to_vec())
    }

    /// `r(mu, tau)`. Never fails: pulses that do not switch, escape, or stay
    /// undecided are reported through the status.
    pub fn eval_r(&self, pulse: &Pulse) -> SwitchingSample {
        self.eval_with(pulse, &self.evaluator)
    }

    /// As [`eval_r`](Self::eval_r), but an undecided result is retried once
    /// with the evaluation horizon doubled.
    pub fn eval_r_retrying(&self, pulse: &Pulse) -> SwitchingSample {
        let sample = self.eval_r(pulse);
        if sample.status != S1Status::Undecided {
            return sample;
        }
        let longer = self.evaluator.clone().with_t_max(2.0 * self.evaluator.t_max());
        self.eval_with(pulse, &longer)
    }

    fn eval_with(&self, pulse: &Pulse, evaluator: &EigenfunctionEvaluator) -> SwitchingSample {
        let empty = |status| SwitchingSample { pulse: *pulse, status, r: None, t_eps: None, eps: self.eps };
        if pulse.is_null() {
            // The source attractor is outside the target basin.
            return empty(S1Status::NotInBasin);
        }
        let endpoint = match self.pulse_endpoint(pulse) {
            Ok(x) => x,
            Err(IntegrationError::Escaped { .. }) => return empty(S1Status::Escaped),
            Err(_) => return empty(S1Status::Undecided),
        };
        let outcome = evaluator.eval_s1(&endpoint);
        match outcome.value {
            Some(r) => SwitchingSample {
                pulse: *pulse,
                status: S1Status::Ok,
                r: Some(r),
                t_eps: Some(convergence_time(r, self.eps, self.lambda1().re)),
                eps: self.eps,
            },
            None => empty(outcome.status),
        }
    }

    /// Basin of the pulse-end state by direct simulation to capture; used
    /// near the separatrix where `|r|` blows up. An undecided label is
    /// retried once with twice the horizon.
    pub fn classify_pulse(&self, pulse: &Pulse, t_max: f64) -> BasinLabel {
        let endpoint = match self.pulse_endpoint(pulse) {
            Ok(x) => x,
            Err(IntegrationError::Escaped { t, .. }) => {
                return BasinLabel { basin: Basin::Escaped, witness_time: Some(t) }
            }
            Err(_) => return BasinLabel { basin: Basin::Undecided, witness_time: None },
        };
        let label = classify_basin(&self.model, &self.attractors, &endpoint, t_max, &self.classify_settings);
        if label.basin == Basin::Undecided {
            classify_basin(&self.model, &self.attractors, &endpoint, 2.0 * t_max, &self.classify_settings)
        } else {
            label
        }
    }
}

fn convergence_time(r: C64, eps: f64, lambda1_re: f64) -> f64 {
    (r.norm() / eps).ln() / lambda1_re.abs()
}

/// `T(mu, tau, eps) = ln(|r| / eps) / |Re lambda1|`; negative when the
/// pulse-end state is already inside the `eps`-isostable.
pub fn time_to_eps(sample: &SwitchingSample, eps: f64, lambda1_re: f64) -> Result<f64> {
    let r = sample
        .r
        .ok_or_else(|| Error::NoSwitch(format!("status {} for {:?}", sample.status, sample.pulse)))?;
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps = {eps} must be positive")));
    }
    if !(lambda1_re < 0.0) {
        return Err(Error::InvalidArgument("Re lambda1 must be negative".into()));
    }
    Ok(convergence_time(r, eps, lambda1_re))
}

/// `T_tot = tau + T` when `T >= 0`, otherwise `tau`.
pub fn total_time(sample: &SwitchingSample, eps: f64, lambda1_re: f64) -> Result<f64> {
    let t = time_to_eps(sample, eps, lambda1_re)?;
    Ok(sample.pulse.tau + t.max(0.0))
}

/// Writes `mu,tau,status,re_r,im_r,abs_r,T_eps,T_tot` rows.
pub fn write_samples_csv<W: Write>(mut w: W, samples: &[SwitchingSample]) -> io::Result<()> {
    writeln!(w, "mu,tau,status,re_r,im_r,abs_r,T_eps,T_tot")?;
    for s in samples {
        let (re, im) = s.r.map_or((f64::NAN, f64::NAN), |z| (z.re, z.im));
        let fields = [
            fmt_f64(s.pulse.mu),
            fmt_f64(s.pulse.tau),
            s.status.to_string(),
            fmt_f64(re),
            fmt_f64(im),
            fmt_f64(s.abs_r().unwrap_or(f64::NAN)),
            fmt_f64(s.t_eps.unwrap_or(f64::NAN)),
            fmt_f64(s.t_total().unwrap_or(f64::NAN)),
        ];
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}
