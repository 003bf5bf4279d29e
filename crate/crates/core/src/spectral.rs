//! Fixed points, their spectra, and the dominant eigentriple.

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};
use thiserror::Error;

use crate::linalg::{eigendecompose, Eigendecomposition};
use crate::model::{ConeSpec, SystemModel};
use crate::C64;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SpectralError {
    #[error("invalid eigenproblem: {0}")]
    InvalidInput(String),
    #[error("eigenvalue iteration did not converge")]
    EigenConvergence,
    #[error("non-simple (defective or repeated) eigenvalue {eigenvalue} at index {index}")]
    NonSimple { index: usize, eigenvalue: C64 },
    #[error("Newton iteration stagnated at residual {residual:e} after {iterations} iterations")]
    NewtonStagnation { iterations: usize, residual: f64 },
    #[error("singular Jacobian at Newton iterate {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("Newton iterate left the domain box")]
    OutsideDomain { location: Vec<f64> },
    #[error("fixed point is not stable (max Re lambda = {max_re})")]
    NotStable { max_re: f64 },
    #[error("ambiguous dominant eigenvalue (spectral gap {gap:e})")]
    AmbiguousDominance { gap: f64 },
    #[error("source and target guesses converged to the same fixed point")]
    IndistinctAttractors,
}

/// Default Newton residual tolerance (2-norm of `f(x, 0)`).
pub const DEFAULT_NEWTON_TOL: f64 = 1e-7;
/// Spectral gaps below this are treated as ambiguous dominance.
pub const GAP_TOL: f64 = 1e-9;
const STAGNATION_WINDOW: usize = 50;
const MAX_NEWTON_ITER: usize = 500;
const POLISH_STEPS: usize = 3;

/// An equilibrium with its full spectral data.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointData {
    pub location: DVector<f64>,
    /// Descending real part; conjugate pairs adjacent, positive imaginary
    /// part first.
    pub eigenvalues: Vec<C64>,
    pub right_vectors: Vec<DVector<C64>>,
    pub left_vectors: Vec<DVector<C64>>,
    /// Always 0: the spectrum is sorted.
    pub dominant_index: usize,
    pub lambda1: C64,
    pub v1: DVector<C64>,
    /// Scaled so that `w1^T v1 = 1`.
    pub w1: DVector<C64>,
    pub is_hyperbolic: bool,
    pub is_stable: bool,
    /// `Re lambda1` minus the largest real part among the remaining
    /// eigenvalues, not counting the conjugate partner of `lambda1`.
    /// Infinite when no such eigenvalue exists.
    pub spectral_gap: f64,
    /// `lambda1` is one of a complex-conjugate pair.
    pub complex_dominant: bool,
    /// `||f(location, 0)||_2`.
    pub residual: f64,
    /// Residual norms of the Newton iterates, starting with the guess.
    pub newton_residuals: Vec<f64>,
}

impl FixedPointData {
    /// Spectral data for a known equilibrium with Jacobian `jac`. The cone
    /// fixes the sign of a real dominant eigenvector.
    pub fn from_jacobian(
        location: DVector<f64>,
        jac: &DMatrix<f64>,
        cone: Option<&ConeSpec>,
    ) -> Result<Self, SpectralError> {
        let Eigendecomposition { eigenvalues, right: mut right_vectors, left: mut left_vectors } =
            eigendecompose(jac)?;
        let n = eigenvalues.len();
        let lambda1 = eigenvalues[0];
        let complex_dominant = lambda1.im != 0.0;
        let first_other = if complex_dominant { 2 } else { 1 };
        let spectral_gap = if first_other < n {
            lambda1.re - eigenvalues[first_other].re
        } else {
            f64::INFINITY
        };
        let scale = eigenvalues.iter().map(|l| l.norm()).fold(1.0f64, f64::max);
        // Dense eigenvalues carry an absolute error of order eps * |J|; stiff
        // models make a fixed relative threshold far too coarse.
        let is_hyperbolic = eigenvalues.iter().all(|l| l.re.abs() > 100.0 * f64::EPSILON * scale);
        let is_stable = eigenvalues.iter().all(|l| l.re < 0.0);

        if !complex_dominant {
            let v = &right_vectors[0];
            let signed = |i: usize| cone.map_or(1.0, |c| c.sign(i)) * v[i].re;
            let sum: f64 = (0..n).map(signed).sum();
            let flip = if sum.abs() > 1e-12 {
                sum < 0.0
            } else {
                let big = (0..n).max_by(|&a, &b| v[a].re.abs().total_cmp(&v[b].re.abs())).unwrap_or(0);
                v[big].re < 0.0
            };
            if flip {
                right_vectors[0] = -&right_vectors[0];
                left_vectors[0] = -&left_vectors[0];
            }
        }
        Ok(Self {
            dominant_index: 0,
            lambda1,
            v1: right_vectors[0].clone(),
            w1: left_vectors[0].clone(),
            location,
            eigenvalues,
            right_vectors,
            left_vectors,
            is_hyperbolic,
            is_stable,
            spectral_gap,
            complex_dominant,
            residual: 0.0,
            newton_residuals: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.location.len()
    }

    /// `w1` with imaginary parts dropped; meaningful for real `lambda1`.
    pub fn w1_real(&self) -> DVector<f64> {
        self.w1.map(|z| z.re)
    }

    pub fn v1_real(&self) -> DVector<f64> {
        self.v1.map(|z| z.re)
    }

    /// Report with keys `location`, `eigenvalues`, `lambda1`, `stable`,
    /// `spectral_gap` (`null` when infinite), plus `hyperbolic`,
    /// `complex_dominant` and `residual`.
    pub fn report(&self) -> Value {
        let c = |z: &C64| json!({"re": z.re, "im": z.im});
        let gap = if self.spectral_gap.is_finite() { json!(self.spectral_gap) } else { Value::Null };
        json!({
            "location": self.location.as_slice(),
            "eigenvalues": self.eigenvalues.iter().map(c).collect::<Vec<_>>(),
            "lambda1": c(&self.lambda1),
            "stable": self.is_stable,
            "spectral_gap": gap,
            "hyperbolic": self.is_hyperbolic,
            "complex_dominant": self.complex_dominant,
            "residual": self.residual,
        })
    }
}

/// Damped Newton iteration on `f(., 0)` from `guess`.
///
/// Steps are backtracked until the residual norm decreases (Armijo). The
/// run fails when the best residual has not improved for 50 iterations.
/// Once below `newton_tol` a few further full steps are taken while they
/// keep reducing the residual.
pub fn find_fixed_point(
    model: &SystemModel,
    guess: &[f64],
    newton_tol: f64,
) -> Result<FixedPointData, SpectralError> {
    let n = model.dim();
    if guess.len() != n {
        return Err(SpectralError::InvalidInput(format!(
            "guess has length {}, model has dimension {n}",
            guess.len()
        )));
    }
    if !(newton_tol > 0.0) {
        return Err(SpectralError::InvalidInput("newton_tol must be positive".into()));
    }
    if !model.in_domain(guess) {
        return Err(SpectralError::OutsideDomain { location: guess.to_vec() });
    }
    let residual_of = |x: &DVector<f64>| model.eval_f(x.as_slice(), 0.0).norm();

    let mut x = DVector::from_column_slice(guess);
    let mut fx = model.eval_f(x.as_slice(), 0.0);
    let mut res = fx.norm();
    let mut history = vec![res];
    let mut best = res;
    let mut since_best = 0usize;
    let mut iteration = 0usize;

    while res > newton_tol {
        iteration += 1;
        if iteration > MAX_NEWTON_ITER || since_best >= STAGNATION_WINDOW || !res.is_finite() {
            return Err(SpectralError::NewtonStagnation { iterations: iteration - 1, residual: res });
        }
        let step = model
            .jacobian(x.as_slice(), 0.0)
            .lu()
            .solve(&fx)
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .ok_or(SpectralError::SingularJacobian { iteration })?;
        let mut alpha = 1.0;
        let (mut x_new, mut res_new);
        loop {
            x_new = &x - &step * alpha;
            res_new = residual_of(&x_new);
            if res_new.is_finite() && res_new <= (1.0 - 1e-4 * alpha) * res {
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-10 {
                break;
            }
        }
        if !res_new.is_finite() {
            return Err(SpectralError::NewtonStagnation { iterations: iteration, residual: res });
        }
        x = x_new;
        fx = model.eval_f(x.as_slice(), 0.0);
        res = res_new;
        history.push(res);
        if res < best {
            best = res;
            since_best = 0;
        } else {
            since_best += 1;
        }
    }
    for _ in 0..POLISH_STEPS {
        let Some(step) = model.jacobian(x.as_slice(), 0.0).lu().solve(&fx) else { break };
        let candidate = &x - step;
        let r = residual_of(&candidate);
        if !(r < res) {
            break;
        }
        x = candidate;
        fx = model.eval_f(x.as_slice(), 0.0);
        res = r;
        history.push(res);
    }
    if !model.in_domain(x.as_slice()) {
        return Err(SpectralError::OutsideDomain { location: x.as_slice().to_vec() });
    }
    let jac = model.jacobian(x.as_slice(), 0.0);
    let mut fp = FixedPointData::from_jacobian(x, &jac, Some(model.cone()))?;
    fp.residual = res;
    fp.newton_residuals = history;
    Ok(fp)
}

/// `(lambda1, v1, w1)` of a stable fixed point. For a complex pair the
/// member with positive imaginary part is returned.
pub fn dominant_triple(fp: &FixedPointData) -> Result<(C64, DVector<C64>, DVector<C64>), SpectralError> {
    if !fp.is_stable {
        return Err(SpectralError::NotStable { max_re: fp.lambda1.re });
    }
    if fp.spectral_gap <= GAP_TOL {
        return Err(SpectralError::AmbiguousDominance { gap: fp.spectral_gap });
    }
    Ok((fp.lambda1, fp.v1.clone(), fp.w1.clone()))
}

/// The two stable equilibria of a bistable model: the pulse starts at
/// `source` and should steer the state into the basin of `target`.
#[derive(Debug, Clone, PartialEq)]
pub struct Attractors {
    pub source: FixedPointData,
    pub target: FixedPointData,
}

impl Attractors {
    /// Locates both attractors from the model's built-in guesses.
    pub fn locate(model: &SystemModel, newton_tol: f64) -> Result<Self, SpectralError> {
        let (source_guess, target_guess) = model.default_guesses();
        Self::from_guesses(model, source_guess.as_slice(), target_guess.as_slice(), newton_tol)
    }

    pub fn from_guesses(
        model: &SystemModel,
        source_guess: &[f64],
        target_guess: &[f64],
        newton_tol: f64,
    ) -> Result<Self, SpectralError> {
        let source = find_fixed_point(model, source_guess, newton_tol)?;
        let target = find_fixed_point(model, target_guess, newton_tol)?;
        for fp in [&source, &target] {
            if !fp.is_stable {
                return Err(SpectralError::NotStable { max_re: fp.lambda1.re });
            }
        }
        let sep = (&source.location - &target.location).norm();
        if sep <= 1e-6 * (1.0 + target.location.norm()) {
            return Err(SpectralError::IndistinctAttractors);
        }
        Ok(Self { source, target })
    }

    /// Roles exchanged: switching back from the target to the source.
    pub fn swapped(&self) -> Self {
        Self { source: self.target.clone(), target: self.source.clone() }
    }
}
