//! Orthant orders, Kamke-condition sampling, and increasing transients.
//!
//! A diagonal cone `K = diag(sigma) R^n_{>=0}` orders states by
//! `x >=_K y  iff  diag(sigma)(x - y) >= 0`. A model is monotone for `K`
//! (and the standard input order) when, in the coordinates `z = diag(sigma) x`,
//! every off-diagonal Jacobian entry and every input derivative is
//! nonnegative. This module samples those conditions; a pass is numerical
//! evidence over the sampled box, not a proof.

use std::ops::ControlFlow;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::error::{check_dim, Error, Result};
use crate::integrate::{advance, ForcedField, IntegratorSettings};
use crate::model::{ConeSpec, SystemModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderRelation {
    Equal,
    Geq,
    Leq,
    Incomparable,
}

impl OrderRelation {
    pub fn as_str(self) -> &'static str {
        match self {
            OrderRelation::Equal => "equal",
            OrderRelation::Geq => "geq",
            OrderRelation::Leq => "leq",
            OrderRelation::Incomparable => "incomparable",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderReport {
    pub relation: OrderRelation,
    pub cone: ConeSpec,
    /// Smallest component of `diag(sigma)(x - y)`.
    pub margin: f64,
}

/// Compares `x` and `y` in the order of `cone`, treating components within
/// `order_tol` of zero as zero.
pub fn cone_compare(x: &[f64], y: &[f64], cone: &ConeSpec, order_tol: f64) -> Result<OrderReport> {
    check_dim(cone.dim(), x.len())?;
    check_dim(cone.dim(), y.len())?;
    let d: Vec<f64> = (0..x.len()).map(|i| cone.sign(i) * (x[i] - y[i])).collect();
    let margin = d.iter().copied().fold(f64::INFINITY, f64::min);
    let relation = if d.iter().all(|v| v.abs() <= order_tol) {
        OrderRelation::Equal
    } else if d.iter().all(|v| *v >= -order_tol) {
        OrderRelation::Geq
    } else if d.iter().all(|v| *v <= order_tol) {
        OrderRelation::Leq
    } else {
        OrderRelation::Incomparable
    };
    Ok(OrderReport { relation, cone: cone.clone(), margin })
}

/// Default number of low-discrepancy samples of a Kamke check.
pub const DEFAULT_KAMKE_SAMPLES: usize = 10_000;
pub const DEFAULT_KAMKE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct KamkeReport {
    pub cone: ConeSpec,
    pub passed: bool,
    /// Largest violation `max(0, -min entry)` over all sampled conditions.
    pub worst_violation: f64,
    /// Sample `(x, u)` where the most negative entry occurred.
    pub witness: Option<(Vec<f64>, f64)>,
    pub samples_checked: usize,
    pub tol: f64,
}

impl KamkeReport {
    /// `{"passed", "worst_violation", "witness": {"x", "u"}, "samples"}` plus
    /// the cone and a reminder that sampling is not proof.
    pub fn to_json(&self) -> Value {
        let witness = self.witness.as_ref().map_or(Value::Null, |(x, u)| json!({"x": x, "u": u}));
        json!({
            "passed": self.passed,
            "worst_violation": self.worst_violation,
            "witness": witness,
            "samples": self.samples_checked,
            "cone": self.cone.to_string(),
            "tol": self.tol,
            "note": "sampled sign conditions; a pass is numerical evidence, not a proof",
        })
    }
}

/// Radical inverse of `index` in `base` (one Halton coordinate).
fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut factor = inv;
    let mut value = 0.0;
    while index > 0 {
        value += (index % base) as f64 * factor;
        index /= base;
        factor *= inv;
    }
    value
}

fn first_primes(count: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(count);
    let mut candidate = 2u64;
    while primes.len() < count {
        if primes.iter().all(|p| !candidate.is_multiple_of(*p)) {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}

/// `count` Halton points in the box `bounds`, skipping the origin-biased
/// first point.
pub fn halton_points(bounds: &[(f64, f64)], count: usize) -> Vec<Vec<f64>> {
    let primes = first_primes(bounds.len());
    (1..=count as u64)
        .map(|k| {
            bounds
                .iter()
                .zip(&primes)
                .map(|((lo, hi), p)| lo + (hi - lo) * radical_inverse(k, *p))
                .collect()
        })
        .collect()
}

/// Smallest Kamke quantity at one point: off-diagonal entries of the
/// cone-transformed Jacobian and cone-transformed input derivatives.
pub fn kamke_min_entry(jac: &DMatrix<f64>, input_derivative: &[f64], cone: &ConeSpec) -> f64 {
    let n = jac.nrows();
    let input_sign = f64::from(cone.input_sign());
    let mut min = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                min = min.min(cone.sign(i) * cone.sign(j) * jac[(i, j)]);
            }
        }
        min = min.min(cone.sign(i) * input_sign * input_derivative[i]);
    }
    min
}

/// Samples the Kamke conditions of `model` for `cone` at `n_samples`
/// Halton points of the model's sampling box times `[0, u_max]`.
pub fn check_kamke(
    model: &SystemModel,
    cone: &ConeSpec,
    n_samples: usize,
    kamke_tol: f64,
    u_max: f64,
) -> Result<KamkeReport> {
    let n = model.dim();
    check_dim(n, cone.dim())?;
    if n_samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    if !(u_max >= 0.0 && u_max.is_finite()) {
        return Err(Error::InvalidArgument(format!("u_max = {u_max} must be finite and >= 0")));
    }
    let mut bounds = model.sampling_box();
    bounds.push((0.0, u_max));
    let points = halton_points(&bounds, n_samples);

    let minima: Vec<f64> = points
        .par_iter()
        .map(|p| {
            let (x, u) = (&p[..n], p[n]);
            let jac = model.jacobian(x, u);
            let du = model.input_derivative(x, u);
            if jac.iter().chain(du.iter()).any(|v| !v.is_finite()) {
                f64::NAN
            } else {
                kamke_min_entry(&jac, du.as_slice(), cone)
            }
        })
        .collect();
    if let Some(k) = minima.iter().position(|v| v.is_nan()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite Jacobian at sample {:?}",
            points[k]
        )));
    }
    // First sample attaining the most negative entry.
    let worst = minima
        .iter()
        .enumerate()
        .fold((f64::INFINITY, 0), |a, (k, v)| if *v < a.0 { (*v, k) } else { a });
    let worst_violation = (-worst.0).max(0.0);
    let witness = points.get(worst.1).map(|p| (p[..n].to_vec(), p[n]));
    Ok(KamkeReport {
        cone: cone.clone(),
        passed: worst_violation <= kamke_tol,
        worst_violation,
        witness,
        samples_checked: n_samples,
        tol: kamke_tol,
    })
}

/// Kamke reports for every diagonal signature of the model's dimension, in
/// [`ConeSpec::all_signatures`] order.
pub fn search_cones(
    model: &SystemModel,
    n_samples: usize,
    kamke_tol: f64,
    u_max: f64,
) -> Result<Vec<KamkeReport>> {
    if model.dim() > 8 {
        return Err(Error::InvalidArgument("cone search is limited to n <= 8".into()));
    }
    ConeSpec::all_signatures(model.dim())
        .iter()
        .map(|cone| check_kamke(model, cone, n_samples, kamke_tol, u_max))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransientReport {
    pub passed: bool,
    /// Smallest cone-transformed increment between consecutive samples.
    pub worst_margin: f64,
    pub states: Vec<DVector<f64>>,
}

/// Checks that `phi(t, x0, mu)` under a constant input is increasing in the
/// cone order across consecutive `times`.
pub fn verify_increasing_transient(
    model: &SystemModel,
    x0: &[f64],
    mu: f64,
    times: &[f64],
    order_tol: f64,
) -> Result<TransientReport> {
    if !model.declared_monotone() {
        return Err(Error::NotMonotone(model.name().to_string()));
    }
    check_dim(model.dim(), x0.len())?;
    if times.len() < 2 || times.windows(2).any(|w| !(w[0] < w[1])) || times[0] < 0.0 {
        return Err(Error::InvalidArgument("times must be ascending, nonnegative, at least two".into()));
    }
    if !(mu >= 0.0) {
        return Err(Error::InvalidArgument("mu must be nonnegative".into()));
    }
    let settings = IntegratorSettings { rtol: 1e-10, atol: 1e-12, ..IntegratorSettings::for_model(model) };
    let field = ForcedField { model, u: mu };
    let mut t = 0.0;
    let mut y = x0.to_vec();
    let mut h = None;
    let mut states = Vec::with_capacity(times.len());
    for &target in times {
        if target > t {
            let adv = advance(&field, t, &y, target, &settings, h, &mut |_, _| ControlFlow::Continue(()))?;
            y = adv.y;
            h = Some(adv.h_next);
            t = target;
        }
        states.push(DVector::from_column_slice(&y));
    }
    let cone = model.cone();
    let worst_margin = states
        .windows(2)
        .map(|w| (0..w[0].len()).map(|i| cone.sign(i) * (w[1][i] - w[0][i])).fold(f64::INFINITY, f64::min))
        .fold(f64::INFINITY, f64::min);
    Ok(TransientReport { passed: worst_margin >= -order_tol, worst_margin, states })
}
