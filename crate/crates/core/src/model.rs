//! Dynamical-system models driven by a scalar input `u`.
//!
//! Only the built-in families are available; a JSON config selects a family
//! and may override its parameters and its domain box.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("cannot parse model config: {0}")]
    Parse(String),
    #[error("unknown model family `{0}`")]
    UnknownFamily(String),
    #[error("unknown parameter `{name}` for model `{family}`")]
    UnknownParameter { family: String, name: String },
    #[error("parameter `{name}` = {value} is outside its admissible range ({rule})")]
    ParameterOutOfRange { name: String, value: f64, rule: &'static str },
    #[error("invalid domain box: {0}")]
    InvalidDomain(String),
    #[error("invalid cone signature: {0}")]
    InvalidCone(String),
    #[error("invalid pulse: {0}")]
    InvalidPulse(String),
}

/// Diagonal orthant cone `diag(signs) * R^n_{>=0}` together with the sign of
/// the input order (always `+1`: inputs are ordered by `R_{>=0}`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConeSpec {
    signs: Vec<i8>,
    input_sign: i8,
}

impl ConeSpec {
    pub fn new(signs: Vec<i8>) -> Result<Self, ModelError> {
        if signs.is_empty() {
            return Err(ModelError::InvalidCone("empty signature".into()));
        }
        if let Some(s) = signs.iter().find(|s| **s != 1 && **s != -1) {
            return Err(ModelError::InvalidCone(format!("component {s} is not +1 or -1")));
        }
        Ok(Self { signs, input_sign: 1 })
    }

    /// The standard orthant `R^n_{>=0}`.
    pub fn standard(n: usize) -> Self {
        Self { signs: vec![1; n], input_sign: 1 }
    }

    /// Parses `+,-,+`, `1,-1,1` or `+-+`.
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let text = text.trim();
        let tokens: Vec<&str> = if text.contains(',') {
            text.split(',').map(str::trim).collect()
        } else {
            text.split("").filter(|s| !s.is_empty()).collect()
        };
        let signs = tokens
            .iter()
            .map(|t| match *t {
                "+" | "1" | "+1" => Ok(1),
                "-" | "-1" => Ok(-1),
                other => Err(ModelError::InvalidCone(format!("bad sign token `{other}`"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(signs)
    }

    /// All `2^n` diagonal signatures, in binary counting order starting from
    /// the standard orthant.
    pub fn all_signatures(n: usize) -> Vec<Self> {
        (0..1usize << n)
            .map(|mask| {
                let signs = (0..n).map(|i| if mask >> i & 1 == 1 { -1 } else { 1 }).collect();
                Self { signs, input_sign: 1 }
            })
            .collect()
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn input_sign(&self) -> i8 {
        self.input_sign
    }

    pub fn dim(&self) -> usize {
        self.signs.len()
    }

    pub fn is_standard(&self) -> bool {
        self.signs.iter().all(|s| *s == 1)
    }

    pub fn sign(&self, i: usize) -> f64 {
        f64::from(self.signs[i])
    }

    /// `diag(signs) * x`.
    pub fn transform(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(x.len(), x.iter().enumerate().map(|(i, v)| self.sign(i) * v))
    }
}

impl fmt::Display for ConeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: Vec<&str> = self.signs.iter().map(|s| if *s > 0 { "+" } else { "-" }).collect();
        write!(f, "({})", s.join(","))
    }
}

/// Rectangular pulse `u(t) = mu` for `0 <= t <= tau`, zero afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub mu: f64,
    pub tau: f64,
}

impl Pulse {
    pub fn new(mu: f64, tau: f64) -> Result<Self, ModelError> {
        if !(mu.is_finite() && tau.is_finite()) || mu < 0.0 || tau < 0.0 {
            return Err(ModelError::InvalidPulse(format!(
                "mu = {mu}, tau = {tau}; both must be finite and nonnegative"
            )));
        }
        Ok(Self { mu, tau })
    }

    pub fn zero() -> Self {
        Self { mu: 0.0, tau: 0.0 }
    }

    /// True when the pulse has no effect on the flow.
    pub fn is_null(&self) -> bool {
        self.mu == 0.0 || self.tau == 0.0
    }

    pub fn input_at(&self, t: f64) -> f64 {
        pulse_input(self, t)
    }
}

/// Input value of the pulse at time `t`; the end point `t = tau` is inside.
pub fn pulse_input(p: &Pulse, t: f64) -> f64 {
    if (0.0..=p.tau).contains(&t) {
        p.mu
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelFamily {
    #[serde(rename = "repressilator8")]
    Repressilator8,
    #[serde(rename = "toxin_antitoxin")]
    ToxinAntitoxin,
    #[serde(rename = "lorenz")]
    Lorenz,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 3] =
        [ModelFamily::Repressilator8, ModelFamily::ToxinAntitoxin, ModelFamily::Lorenz];

    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::Repressilator8 => "repressilator8",
            ModelFamily::ToxinAntitoxin => "toxin_antitoxin",
            ModelFamily::Lorenz => "lorenz",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, ModelError> {
        match name {
            "repressilator8" | "repressilator" => Ok(ModelFamily::Repressilator8),
            "toxin_antitoxin" | "toxin-antitoxin" => Ok(ModelFamily::ToxinAntitoxin),
            "lorenz" => Ok(ModelFamily::Lorenz),
            other => Err(ModelError::UnknownFamily(other.to_string())),
        }
    }

    pub fn dim(self) -> usize {
        match self {
            ModelFamily::Repressilator8 => 8,
            ModelFamily::ToxinAntitoxin => 4,
            ModelFamily::Lorenz => 3,
        }
    }

    /// Default parameters in canonical order.
    pub fn default_params(self) -> &'static [(&'static str, f64)] {
        match self {
            ModelFamily::Repressilator8 => {
                &[("p1", 100.0), ("p2", 1.0), ("p3", 2.0), ("p4", 1.0), ("p5", 1.0)]
            }
            ModelFamily::ToxinAntitoxin => &[
                ("sigma_T", 166.28),
                ("K0", 1.0),
                ("beta_M", 0.16),
                ("beta_C", 0.16),
                ("sigma_A", 100.0),
                ("Gamma_A", 0.2),
                ("K_T", 0.3),
                ("K_TT", 0.3),
                ("epsilon", 1e-6),
            ],
            ModelFamily::Lorenz => &[("sigma", 10.0), ("rho", 2.0), ("beta", 8.0 / 3.0)],
        }
    }

    fn default_domain(self) -> Vec<(f64, f64)> {
        let (lo, hi) = match self {
            ModelFamily::Repressilator8 => (-10.0, 200.0),
            // total antitoxin can reach sigma_A / Gamma_A = 500 unforced
            ModelFamily::ToxinAntitoxin => (-10.0, 1000.0),
            ModelFamily::Lorenz => (-50.0, 50.0),
        };
        vec![(lo, hi); self.dim()]
    }

    fn default_cone(self) -> ConeSpec {
        match self {
            ModelFamily::Repressilator8 => ConeSpec {
                signs: vec![1, -1, 1, -1, 1, -1, 1, -1],
                input_sign: 1,
            },
            _ => ConeSpec::standard(self.dim()),
        }
    }

    fn declared_monotone(self) -> bool {
        matches!(self, ModelFamily::Repressilator8)
    }

    fn stiff(self) -> bool {
        matches!(self, ModelFamily::ToxinAntitoxin)
    }

    /// Whether the state variables are concentrations or counts.
    fn nonnegative_states(self) -> bool {
        !matches!(self, ModelFamily::Lorenz)
    }

    fn check_param(self, name: &str, value: f64) -> Result<(), ModelError> {
        let out = |rule| ModelError::ParameterOutOfRange { name: name.to_string(), value, rule };
        if !value.is_finite() {
            return Err(out("must be finite"));
        }
        let nonneg_ok = matches!(
            (self, name),
            (ModelFamily::Repressilator8, "p4") | (ModelFamily::ToxinAntitoxin, "beta_M" | "beta_C")
        );
        if nonneg_ok {
            if value < 0.0 {
                return Err(out("must be >= 0"));
            }
        } else if value <= 0.0 {
            return Err(out("must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Repressilator {
    p1: f64,
    p2: f64,
    p3: f64,
    p4: f64,
    p5: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ToxinAntitoxin {
    sigma_t: f64,
    k0: f64,
    beta_m: f64,
    beta_c: f64,
    sigma_a: f64,
    gamma_a: f64,
    k_t: f64,
    k_tt: f64,
    eps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Lorenz {
    sigma: f64,
    rho: f64,
    beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Dynamics {
    Repressilator(Repressilator),
    Toxin(ToxinAntitoxin),
    Lorenz(Lorenz),
}

impl Repressilator {
    fn hill(&self, x: f64) -> f64 {
        self.p1 / (1.0 + (x / self.p2).powf(self.p3))
    }

    fn hill_derivative(&self, x: f64) -> f64 {
        let q = (x / self.p2).powf(self.p3);
        if q == 0.0 {
            return 0.0;
        }
        // d/dx p1 / (1 + (x/p2)^p3) = -p1 p3 q / (x (1 + q)^2)
        -self.p1 * self.p3 * q / (x * (1.0 + q) * (1.0 + q))
    }

    fn eval(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        let n = x.len();
        for i in 0..n {
            let prev = x[(i + n - 1) % n];
            dx[i] = self.hill(prev) + self.p4 - self.p5 * x[i];
        }
        dx[0] += u;
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = x.len();
        let mut j = DMatrix::zeros(n, n);
        for i in 0..n {
            let p = (i + n - 1) % n;
            j[(i, i)] = -self.p5;
            j[(i, p)] += self.hill_derivative(x[p]);
        }
        j
    }
}

impl ToxinAntitoxin {
    // State layout: (T, A, [A_f], [T_f]).
    fn eval(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        let (t, a, af, tf) = (x[0], x[1], x[2], x[3]);
        let d = (1.0 + af * tf / self.k0) * (1.0 + self.beta_m * tf);
        let ktt = self.k_t * self.k_tt;
        dx[0] = self.sigma_t / d - t / (1.0 + self.beta_c * tf);
        dx[1] = self.sigma_a / d - self.gamma_a * a + u;
        dx[2] = (a - (af + af * tf / self.k_t + af * tf * tf / ktt)) / self.eps;
        dx[3] = (t - (tf + af * tf / self.k_t + 2.0 * af * tf * tf / ktt)) / self.eps;
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let (t, _a, af, tf) = (x[0], x[1], x[2], x[3]);
        let d1 = 1.0 + af * tf / self.k0;
        let d2 = 1.0 + self.beta_m * tf;
        let d = d1 * d2;
        let inv_d_af = -(tf / self.k0) * d2 / (d * d);
        let inv_d_tf = -((af / self.k0) * d2 + d1 * self.beta_m) / (d * d);
        let c = 1.0 + self.beta_c * tf;
        let ktt = self.k_t * self.k_tt;
        let e = self.eps;
        let mut j = DMatrix::zeros(4, 4);
        j[(0, 0)] = -1.0 / c;
        j[(0, 2)] = self.sigma_t * inv_d_af;
        j[(0, 3)] = self.sigma_t * inv_d_tf + t * self.beta_c / (c * c);
        j[(1, 1)] = -self.gamma_a;
        j[(1, 2)] = self.sigma_a * inv_d_af;
        j[(1, 3)] = self.sigma_a * inv_d_tf;
        j[(2, 1)] = 1.0 / e;
        j[(2, 2)] = -(1.0 + tf / self.k_t + tf * tf / ktt) / e;
        j[(2, 3)] = -af * (1.0 / self.k_t + 2.0 * tf / ktt) / e;
        j[(3, 0)] = 1.0 / e;
        j[(3, 2)] = -(tf / self.k_t + 2.0 * tf * tf / ktt) / e;
        j[(3, 3)] = -(1.0 + af / self.k_t + 4.0 * af * tf / ktt) / e;
        j
    }
}

impl Lorenz {
    fn eval(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        dx[0] = self.sigma * (x[1] - x[0]) + u;
        dx[1] = x[0] * (self.rho - x[2]) - x[1] + u;
        dx[2] = x[0] * x[1] - self.beta * x[2];
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(
            3,
            3,
            &[
                -self.sigma,
                self.sigma,
                0.0,
                self.rho - x[2],
                -1.0,
                -x[0],
                x[1],
                x[0],
                -self.beta,
            ],
        )
    }
}

/// JSON model configuration: `{"model": ..., "params": {...}, "domain": [[lo,hi],...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub model: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Vec<[f64; 2]>>,
}

/// An immutable, thread-safe model instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    family: ModelFamily,
    params: Vec<(String, f64)>,
    domain: Vec<(f64, f64)>,
    cone: ConeSpec,
    declared_monotone: bool,
    stiff: bool,
    analytic_jacobian: bool,
    dynamics: Dynamics,
}

impl SystemModel {
    pub fn builtin(family: ModelFamily) -> Self {
        Self::from_parts(family, &BTreeMap::new(), None).expect("default parameters are admissible")
    }

    fn from_parts(
        family: ModelFamily,
        overrides: &BTreeMap<String, f64>,
        domain: Option<&[[f64; 2]]>,
    ) -> Result<Self, ModelError> {
        let defaults = family.default_params();
        for name in overrides.keys() {
            if !defaults.iter().any(|(d, _)| d == name) {
                return Err(ModelError::UnknownParameter {
                    family: family.name().to_string(),
                    name: name.clone(),
                });
            }
        }
        let mut params = Vec::with_capacity(defaults.len());
        for (name, default) in defaults {
            let value = overrides.get(*name).copied().unwrap_or(*default);
            family.check_param(name, value)?;
            params.push((name.to_string(), value));
        }
        let domain = match domain {
            None => family.default_domain(),
            Some(boxes) => {
                if boxes.len() != family.dim() {
                    return Err(ModelError::InvalidDomain(format!(
                        "expected {} intervals, got {}",
                        family.dim(),
                        boxes.len()
                    )));
                }
                boxes
                    .iter()
                    .map(|[lo, hi]| {
                        if lo.is_finite() && hi.is_finite() && lo < hi {
                            Ok((*lo, *hi))
                        } else {
                            Err(ModelError::InvalidDomain(format!("interval [{lo}, {hi}]")))
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()?
            }
        };
        let p = |name: &str| params.iter().find(|(n, _)| n == name).map(|(_, v)| *v).unwrap();
        let dynamics = match family {
            ModelFamily::Repressilator8 => Dynamics::Repressilator(Repressilator {
                p1: p("p1"),
                p2: p("p2"),
                p3: p("p3"),
                p4: p("p4"),
                p5: p("p5"),
            }),
            ModelFamily::ToxinAntitoxin => Dynamics::Toxin(ToxinAntitoxin {
                sigma_t: p("sigma_T"),
                k0: p("K0"),
                beta_m: p("beta_M"),
                beta_c: p("beta_C"),
                sigma_a: p("sigma_A"),
                gamma_a: p("Gamma_A"),
                k_t: p("K_T"),
                k_tt: p("K_TT"),
                eps: p("epsilon"),
            }),
            ModelFamily::Lorenz => {
                Dynamics::Lorenz(Lorenz { sigma: p("sigma"), rho: p("rho"), beta: p("beta") })
            }
        };
        Ok(Self {
            family,
            params,
            domain,
            cone: family.default_cone(),
            declared_monotone: family.declared_monotone(),
            stiff: family.stiff(),
            analytic_jacobian: true,
            dynamics,
        })
    }

    pub fn from_config(config: &ModelConfig) -> Result<Self, ModelError> {
        let family = ModelFamily::from_name(&config.model)?;
        Self::from_parts(family, &config.params, config.domain.as_deref())
    }

    /// Config with every default materialized.
    pub fn to_config(&self) -> ModelConfig {
        ModelConfig {
            model: self.family.name().to_string(),
            params: self.params.iter().cloned().collect(),
            domain: Some(self.domain.iter().map(|(lo, hi)| [*lo, *hi]).collect()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_config()).expect("model config serializes")
    }

    /// Same model, but every Jacobian is computed by central differences.
    pub fn with_finite_difference_jacobian(mut self) -> Self {
        self.analytic_jacobian = false;
        self
    }

    pub fn with_cone(mut self, cone: ConeSpec) -> Result<Self, ModelError> {
        if cone.dim() != self.dim() {
            return Err(ModelError::InvalidCone(format!(
                "signature has {} entries, model has dimension {}",
                cone.dim(),
                self.dim()
            )));
        }
        self.cone = cone;
        Ok(self)
    }

    pub fn family(&self) -> ModelFamily {
        self.family
    }

    pub fn name(&self) -> &'static str {
        self.family.name()
    }

    pub fn dim(&self) -> usize {
        self.family.dim()
    }

    pub fn params(&self) -> &[(String, f64)] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn domain_box(&self) -> &[(f64, f64)] {
        &self.domain
    }

    pub fn cone(&self) -> &ConeSpec {
        &self.cone
    }

    pub fn declared_monotone(&self) -> bool {
        self.declared_monotone
    }

    pub fn is_stiff(&self) -> bool {
        self.stiff
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.analytic_jacobian
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(&self.domain).all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Region over which sign conditions are sampled: the domain box,
    /// clipped to the nonnegative orthant for biochemical models.
    pub fn sampling_box(&self) -> Vec<(f64, f64)> {
        if self.family.nonnegative_states() {
            self.domain.iter().map(|(lo, hi)| (lo.max(0.0), *hi)).collect()
        } else {
            self.domain.clone()
        }
    }

    /// Writes `f(x, u)` into `dx`.
    pub fn eval_f_into(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        match &self.dynamics {
            Dynamics::Repressilator(m) => m.eval(x, u, dx),
            Dynamics::Toxin(m) => m.eval(x, u, dx),
            Dynamics::Lorenz(m) => m.eval(x, u, dx),
        }
    }

    pub fn eval_f(&self, x: &[f64], u: f64) -> DVector<f64> {
        let mut dx = DVector::zeros(self.dim());
        self.eval_f_into(x, u, dx.as_mut_slice());
        dx
    }

    /// Analytic Jacobian of the unforced field, when the model provides one.
    pub fn eval_jacobian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        if !self.analytic_jacobian {
            return None;
        }
        Some(match &self.dynamics {
            Dynamics::Repressilator(m) => m.jacobian(x),
            Dynamics::Toxin(m) => m.jacobian(x),
            Dynamics::Lorenz(m) => m.jacobian(x),
        })
    }

    /// Jacobian `df/dx` at input `u`; falls back to central differences.
    ///
    /// All built-in families enter the input additively, so the analytic
    /// Jacobian does not depend on `u`.
    pub fn jacobian(&self, x: &[f64], u: f64) -> DMatrix<f64> {
        self.eval_jacobian(x).unwrap_or_else(|| self.fd_jacobian(x, u))
    }

    /// Central differences with step `1e-6 * (1 + |x_j|)`.
    pub fn fd_jacobian(&self, x: &[f64], u: f64) -> DMatrix<f64> {
        let n = self.dim();
        let mut j = DMatrix::zeros(n, n);
        let mut xp = x.to_vec();
        let mut fp = vec![0.0; n];
        let mut fm = vec![0.0; n];
        for c in 0..n {
            let h = 1e-6 * (1.0 + x[c].abs());
            xp[c] = x[c] + h;
            self.eval_f_into(&xp, u, &mut fp);
            xp[c] = x[c] - h;
            self.eval_f_into(&xp, u, &mut fm);
            xp[c] = x[c];
            for r in 0..n {
                j[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        j
    }

    /// `df/du` by central differences.
    pub fn input_derivative(&self, x: &[f64], u: f64) -> DVector<f64> {
        let h = 1e-6 * (1.0 + u.abs());
        (self.eval_f(x, u + h) - self.eval_f(x, u - h)) / (2.0 * h)
    }

    /// Default Newton guesses `(source, target)`: the source is the state the
    /// pulse starts from, the target the one it should reach.
    pub fn default_guesses(&self) -> (DVector<f64>, DVector<f64>) {
        match &self.dynamics {
            Dynamics::Repressilator(m) => {
                let (hi, lo) = repressilator_two_cycle(m);
                let n = self.dim();
                let source = DVector::from_fn(n, |i, _| if i % 2 == 0 { lo } else { hi });
                let target = DVector::from_fn(n, |i, _| if i % 2 == 0 { hi } else { lo });
                (source, target)
            }
            Dynamics::Toxin(_) => (
                DVector::from_vec(vec![162.8103, 26.2221, 0.0002, 110.4375]),
                DVector::from_vec(vec![27.1517, 80.5151, 58.4429, 0.0877]),
            ),
            Dynamics::Lorenz(m) => {
                let z = m.rho - 1.0;
                let a = (m.beta * z.max(0.0)).sqrt();
                (
                    DVector::from_vec(vec![-a, -a, z]),
                    DVector::from_vec(vec![a, a, z]),
                )
            }
        }
    }
}

/// High and low values of the alternating repressilator equilibrium, from
/// iterating the period-two map of the scalar ring recursion.
fn repressilator_two_cycle(m: &Repressilator) -> (f64, f64) {
    let step = |x: f64| (m.hill(x) + m.p4) / m.p5;
    let mut lo = m.p4 / m.p5;
    let mut hi = step(lo);
    for _ in 0..1000 {
        let next_lo = step(step(lo));
        let done = (next_lo - lo).abs() <= 1e-15 * (1.0 + lo.abs());
        lo = next_lo;
        hi = step(lo);
        if done {
            break;
        }
    }
    (hi, lo)
}

/// Parses a JSON model config and builds the model.
pub fn load_model(config_text: &str) -> Result<SystemModel, ModelError> {
    let config: ModelConfig =
        serde_json::from_str(config_text).map_err(|e| ModelError::Parse(e.to_string()))?;
    SystemModel::from_config(&config)
}

pub fn builtin_repressilator8() -> SystemModel {
    SystemModel::builtin(ModelFamily::Repressilator8)
}

pub fn builtin_toxin_antitoxin() -> SystemModel {
    SystemModel::builtin(ModelFamily::ToxinAntitoxin)
}

pub fn builtin_lorenz() -> SystemModel {
    SystemModel::builtin(ModelFamily::Lorenz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pulse_endpoints() {
        let p = Pulse::new(3.0, 1.0).unwrap();
        assert_eq!(pulse_input(&p, 0.5), 3.0);
        assert_eq!(pulse_input(&p, 1.0), 3.0);
        assert_eq!(pulse_input(&p, 1.0000001), 0.0);
        assert_eq!(pulse_input(&p, 0.0), 3.0);
    }

    #[test]
    fn pulse_rejects_bad_values() {
        assert!(Pulse::new(-1.0, 1.0).is_err());
        assert!(Pulse::new(1.0, f64::NAN).is_err());
        assert!(Pulse::new(f64::INFINITY, 1.0).is_err());
    }

    #[test]
    fn repressilator_defaults() {
        let m = load_model(r#"{"model":"repressilator8"}"#).unwrap();
        for (name, v) in [("p1", 100.0), ("p2", 1.0), ("p3", 2.0), ("p4", 1.0), ("p5", 1.0)] {
            assert_eq!(m.param(name), Some(v));
        }
        assert_eq!(m.cone().signs(), &[1, -1, 1, -1, 1, -1, 1, -1]);
        assert!(m.declared_monotone());
        let f = m.eval_f(&[1.0; 8], 0.0);
        for v in f.iter() {
            assert_eq!(*v, 50.0);
        }
    }

    #[test]
    fn repressilator_input_enters_first_species() {
        let m = builtin_repressilator8();
        let f0 = m.eval_f(&[2.0; 8], 0.0);
        let f1 = m.eval_f(&[2.0; 8], 1.5);
        assert_eq!(f1[0] - f0[0], 1.5);
        assert_eq!(f1.rows(1, 7), f0.rows(1, 7));
    }

    #[test]
    fn two_cycle_matches_scalar_map() {
        // independent fixed-point iteration of x -> 100/(1+(100/(1+x^2)+1)^2)+1
        let g = |x: f64| 100.0 / (1.0 + (100.0 / (1.0 + x * x) + 1.0).powi(2)) + 1.0;
        let mut lo = 1.0;
        for _ in 0..200 {
            lo = g(lo);
        }
        let hi = 100.0 / (1.0 + lo * lo) + 1.0;
        let (source, target) = builtin_repressilator8().default_guesses();
        assert_abs_diff_eq!(target[0], hi, epsilon = 1e-10);
        assert_abs_diff_eq!(target[1], lo, epsilon = 1e-10);
        assert_abs_diff_eq!(source[0], lo, epsilon = 1e-10);
        assert_abs_diff_eq!(hi, 48.958297101421884, epsilon = 1e-9);
        assert_abs_diff_eq!(lo, 1.0417028985781212, epsilon = 1e-9);
    }

    #[test]
    fn lorenz_values() {
        let m = load_model(r#"{"model":"lorenz","params":{"rho":2}}"#).unwrap();
        assert_eq!(m.param("sigma"), Some(10.0));
        assert_eq!(m.param("rho"), Some(2.0));
        assert_eq!(m.param("beta"), Some(8.0 / 3.0));
        assert_eq!(m.eval_f(&[0.0; 3], 0.0).as_slice(), &[0.0, 0.0, 0.0]);
        let f = m.eval_f(&[1.0, 1.0, 1.0], 0.0);
        assert_abs_diff_eq!(f[0], 0.0);
        assert_abs_diff_eq!(f[1], 0.0);
        assert_abs_diff_eq!(f[2], 1.0 - 8.0 / 3.0, epsilon = 1e-15);
        let (s, t) = m.default_guesses();
        let a = (8.0f64 / 3.0).sqrt();
        assert_abs_diff_eq!(t[0], a, epsilon = 1e-15);
        assert_abs_diff_eq!(s[1], -a, epsilon = 1e-15);
        assert_abs_diff_eq!(a, 1.63299, epsilon = 1e-5);
    }

    #[test]
    fn toxin_defaults() {
        let m = builtin_toxin_antitoxin();
        assert_eq!(m.param("sigma_T"), Some(166.28));
        assert_eq!(m.param("epsilon"), Some(1e-6));
        assert_eq!(m.param("K_TT"), Some(0.3));
        assert!(!m.declared_monotone());
        assert!(m.is_stiff());
        let f0 = m.eval_f(&[1.0, 2.0, 3.0, 4.0], 0.0);
        let f1 = m.eval_f(&[1.0, 2.0, 3.0, 4.0], 2.0);
        assert_abs_diff_eq!(f1[1] - f0[1], 2.0, epsilon = 1e-12);
        assert_eq!(f1[0], f0[0]);
    }

    #[test]
    fn config_errors() {
        assert_eq!(
            load_model(r#"{"model":"unknown_xyz"}"#),
            Err(ModelError::UnknownFamily("unknown_xyz".into()))
        );
        assert!(matches!(load_model("{not json"), Err(ModelError::Parse(_))));
        assert!(matches!(
            load_model(r#"{"model":"lorenz","params":{"gamma":1}}"#),
            Err(ModelError::UnknownParameter { .. })
        ));
        assert!(matches!(
            load_model(r#"{"model":"repressilator8","params":{"p3":-2}}"#),
            Err(ModelError::ParameterOutOfRange { .. })
        ));
        assert!(matches!(
            load_model(r#"{"model":"lorenz","domain":[[0,1],[0,1]]}"#),
            Err(ModelError::InvalidDomain(_))
        ));
        assert!(matches!(
            load_model(r#"{"model":"lorenz","domain":[[0,1],[2,1],[0,1]]}"#),
            Err(ModelError::InvalidDomain(_))
        ));
    }

    #[test]
    fn serialization_materializes_defaults() {
        let m = builtin_lorenz();
        let cfg: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(cfg["model"], "lorenz");
        assert_eq!(cfg["params"]["sigma"], 10.0);
        assert_eq!(cfg["domain"][2][1], 50.0);
        assert_eq!(load_model(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn repressilator_jacobian_matches_differences() {
        let m = builtin_repressilator8();
        let mut seed = 7u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..20 {
            let x: Vec<f64> = (0..8).map(|_| 0.1 + 60.0 * next()).collect();
            let ja = m.eval_jacobian(&x).unwrap();
            let jf = m.fd_jacobian(&x, 0.0);
            assert!((ja - jf).amax() < 1e-5);
        }
    }

    #[test]
    fn toxin_and_lorenz_jacobians_match_differences() {
        let t = builtin_toxin_antitoxin();
        for x in [[27.0, 80.0, 58.0, 0.09], [160.0, 26.0, 0.0002, 110.0], [5.0, 3.0, 1.0, 2.0]] {
            let ja = t.eval_jacobian(&x).unwrap();
            let jf = t.fd_jacobian(&x, 0.0);
            // rows of the fast equations carry a 1/epsilon factor
            for r in 0..4 {
                let scale = ja.row(r).amax().max(1.0);
                assert!((ja.row(r) - jf.row(r)).amax() / scale < 1e-6, "row {r}");
            }
        }
        let l = builtin_lorenz();
        let x = [1.3, -0.7, 2.2];
        assert!((l.eval_jacobian(&x).unwrap() - l.fd_jacobian(&x, 0.0)).amax() < 1e-6);
    }

    #[test]
    fn cone_parsing() {
        assert_eq!(ConeSpec::parse("+,-,+").unwrap().signs(), &[1, -1, 1]);
        assert_eq!(ConeSpec::parse("+-").unwrap().signs(), &[1, -1]);
        assert_eq!(ConeSpec::parse("1,-1").unwrap().signs(), &[1, -1]);
        assert!(ConeSpec::parse("+,0").is_err());
        assert!(ConeSpec::new(vec![]).is_err());
        assert_eq!(ConeSpec::all_signatures(3).len(), 8);
        assert!(ConeSpec::all_signatures(3)[0].is_standard());
        assert_eq!(ConeSpec::parse("+,-").unwrap().to_string(), "(+,-)");
    }

    #[test]
    fn sampling_box_clips_biochemical_models() {
        let m = builtin_repressilator8();
        assert!(m.sampling_box().iter().all(|(lo, _)| *lo == 0.0));
        let l = builtin_lorenz();
        assert!(l.sampling_box().iter().all(|(lo, _)| *lo == -50.0));
    }

    #[test]
    fn finite_difference_fallback() {
        let m = builtin_lorenz().with_finite_difference_jacobian();
        assert!(m.eval_jacobian(&[1.0, 1.0, 1.0]).is_none());
        let j = m.jacobian(&[1.0, 1.0, 1.0], 0.0);
        assert!((j[(0, 1)] - 10.0).abs() < 1e-6);
    }
}
