//! Dense nonsymmetric eigendecomposition.
//!
//! Eigenvalues come from Parlett–Reinsch balancing followed by Hessenberg
//! reduction and Francis double-shift QR (the real Schur form). Right and
//! left eigenvectors are then obtained by complex inverse iteration on the
//! balanced matrix and its transpose, and each eigenvalue is polished with
//! the two-sided Rayleigh quotient.

use nalgebra::linalg::balancing::balance_parlett_reinsch;
use nalgebra::{DMatrix, DVector, Schur};

use crate::spectral::SpectralError;
use crate::C64;

/// Largest matrix handled by the dense path.
pub const MAX_DENSE_DIM: usize = 64;

/// Full spectrum with biorthonormal eigenvectors: `left[j]^T right[j] = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigendecomposition {
    /// Sorted by descending real part; within a conjugate pair the member
    /// with positive imaginary part comes first.
    pub eigenvalues: Vec<C64>,
    /// Unit 2-norm right eigenvectors.
    pub right: Vec<DVector<C64>>,
    pub left: Vec<DVector<C64>>,
}

impl Eigendecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Relative tolerance on eigen-residuals, `||J v - lambda v|| <= tol ||J||`.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Below this `|w^T v|` (unit vectors) an eigenvalue is treated as non-simple.
const SIMPLE_TOL: f64 = 1e-8;

pub fn eigendecompose(j: &DMatrix<f64>) -> Result<Eigendecomposition, SpectralError> {
    let n = j.nrows();
    if n == 0 || j.ncols() != n {
        return Err(SpectralError::InvalidInput(format!(
            "expected a nonempty square matrix, got {}x{}",
            j.nrows(),
            j.ncols()
        )));
    }
    if n > MAX_DENSE_DIM {
        return Err(SpectralError::InvalidInput(format!(
            "dimension {n} exceeds the dense limit {MAX_DENSE_DIM}"
        )));
    }
    if j.iter().any(|v| !v.is_finite()) {
        return Err(SpectralError::InvalidInput("matrix has non-finite entries".into()));
    }
    let norm = j.norm();
    if norm == 0.0 {
        let eye = |k: usize| {
            DVector::from_fn(n, |i, _| if i == k { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })
        };
        if n == 1 {
            return Ok(Eigendecomposition {
                eigenvalues: vec![C64::new(0.0, 0.0)],
                right: vec![eye(0)],
                left: vec![eye(0)],
            });
        }
        return Err(SpectralError::NonSimple { index: 0, eigenvalue: C64::new(0.0, 0.0) });
    }

    let mut balanced = j.clone();
    let scaling = balance_parlett_reinsch(&mut balanced);
    let schur = Schur::try_new(balanced.clone(), f64::EPSILON, 10_000 * n)
        .ok_or(SpectralError::EigenConvergence)?;
    let mut eigenvalues: Vec<C64> = schur.complex_eigenvalues().iter().copied().collect();
    eigenvalues.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));

    let bc = balanced.map(|v| C64::new(v, 0.0));
    let bt = bc.transpose();
    let jc = j.map(|v| C64::new(v, 0.0));

    let mut values = Vec::with_capacity(n);
    let mut right = Vec::with_capacity(n);
    let mut left = Vec::with_capacity(n);
    let mut k = 0;
    while k < n {
        let lambda = eigenvalues[k];
        let is_real = lambda.im == 0.0;
        let vb = inverse_iteration(&bc, lambda).ok_or(SpectralError::EigenConvergence)?;
        let wb = inverse_iteration(&bt, lambda).ok_or(SpectralError::EigenConvergence)?;
        // Undo the diagonal similarity J = D B D^-1.
        let mut v = DVector::from_fn(n, |i, _| vb[i] * scaling[i]);
        let mut w = DVector::from_fn(n, |i, _| wb[i] / scaling[i]);
        if is_real {
            make_real(&mut v);
            make_real(&mut w);
        }
        v /= C64::new(v.norm(), 0.0);
        w /= C64::new(w.norm(), 0.0);
        let overlap = w.transpose() * &v;
        let overlap = overlap[(0, 0)];
        if overlap.norm() < SIMPLE_TOL {
            return Err(SpectralError::NonSimple { index: k, eigenvalue: lambda });
        }
        let refined = {
            let jv = &jc * &v;
            let q = (w.transpose() * jv)[(0, 0)] / overlap;
            if is_real {
                C64::new(q.re, 0.0)
            } else {
                q
            }
        };
        for (vec, mat) in [(&v, &jc), (&w, &jc.transpose())] {
            let residual = (mat * vec - vec * refined).norm();
            if !(residual <= RESIDUAL_TOL * norm) {
                return Err(SpectralError::NonSimple { index: k, eigenvalue: lambda });
            }
        }
        let w = w / overlap;
        if is_real {
            values.push(refined);
            right.push(v);
            left.push(w);
            k += 1;
        } else {
            let partner = k + 1 < n && (eigenvalues[k + 1] - lambda.conj()).norm()
                <= 1e-12 * lambda.norm().max(f64::MIN_POSITIVE) * 1e4;
            if !partner {
                return Err(SpectralError::EigenConvergence);
            }
            values.push(refined);
            values.push(refined.conj());
            right.push(v.clone());
            right.push(v.map(|z| z.conj()));
            left.push(w.clone());
            left.push(w.map(|z| z.conj()));
            k += 2;
        }
    }

    // Two numerically coincident eigenvalues would produce the same vectors;
    // that shows up as a failed biorthogonality test.
    for (a, w) in left.iter().enumerate() {
        for (b, v) in right.iter().enumerate() {
            if a != b {
                let cross = (w.transpose() * v)[(0, 0)].norm();
                if cross > 1e-6 * w.norm() {
                    return Err(SpectralError::NonSimple { index: a.max(b), eigenvalue: values[a] });
                }
            }
        }
    }
    Ok(Eigendecomposition { eigenvalues: values, right, left })
}

/// Eigenvector for the eigenvalue estimate `lambda` by shifted inverse
/// iteration. Returns a unit vector.
fn inverse_iteration(a: &DMatrix<C64>, lambda: C64) -> Option<DVector<C64>> {
    let n = a.nrows();
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let mut shift = lambda;
    for attempt in 0..4 {
        let shifted = a - DMatrix::<C64>::identity(n, n) * shift;
        let lu = shifted.lu();
        // Deterministic, generic start vector.
        let mut x = DVector::from_fn(n, |i, _| C64::new(1.0 + 0.1 * i as f64, 0.05 * (i % 3) as f64));
        x /= C64::new(x.norm(), 0.0);
        let mut ok = true;
        for _ in 0..3 {
            match lu.solve(&x) {
                Some(y) if y.iter().all(|z| z.re.is_finite() && z.im.is_finite()) => {
                    let nrm = y.norm();
                    if nrm == 0.0 || !nrm.is_finite() {
                        ok = false;
                        break;
                    }
                    x = y / C64::new(nrm, 0.0);
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Some(x);
        }
        // Exactly singular shift: nudge it off the eigenvalue.
        let nudge = 1e-14 * 10f64.powi(attempt) * lambda.norm().max(scale * 1e-3);
        shift = lambda + C64::new(nudge, 0.0);
    }
    None
}

/// Rotates a numerically real complex vector onto the real axis.
fn make_real(v: &mut DVector<C64>) {
    let pivot = v.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap_or(C64::new(1.0, 0.0));
    if pivot.norm() == 0.0 {
        return;
    }
    let phase = pivot.conj() / pivot.norm();
    for z in v.iter_mut() {
        *z = C64::new((*z * phase).re, 0.0);
    }
}
