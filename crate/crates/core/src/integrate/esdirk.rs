//! Six-stage ESDIRK 4(3), L-stable and stiffly accurate (Kennedy–Carpenter
//! ARK4(3)6L[2]SA implicit part). Stages are solved by simplified Newton
//! with the Jacobian frozen at the start of each step.

use std::ops::ControlFlow;

use nalgebra::{DMatrix, DVector};

use super::{
    initial_step, rms_norm, Advance, ButcherTableau, IntegrationError, IntegratorSettings,
    StepStats, VectorField,
};

const GAMMA: f64 = 0.25;

pub const ESDIRK_TABLEAU: ButcherTableau<6> = ButcherTableau {
    c: [0.0, 0.5, 83.0 / 250.0, 31.0 / 50.0, 17.0 / 20.0, 1.0],
    a: [
        [0.0; 6],
        [GAMMA, GAMMA, 0.0, 0.0, 0.0, 0.0],
        [8611.0 / 62500.0, -1743.0 / 31250.0, GAMMA, 0.0, 0.0, 0.0],
        [5012029.0 / 34652500.0, -654441.0 / 2922500.0, 174375.0 / 388108.0, GAMMA, 0.0, 0.0],
        [
            15267082809.0 / 155376265600.0,
            -71443401.0 / 120774400.0,
            730878875.0 / 902184768.0,
            2285395.0 / 8070912.0,
            GAMMA,
            0.0,
        ],
        [
            82889.0 / 524892.0,
            0.0,
            15625.0 / 83664.0,
            69875.0 / 102672.0,
            -2260.0 / 8211.0,
            GAMMA,
        ],
    ],
    b: [82889.0 / 524892.0, 0.0, 15625.0 / 83664.0, 69875.0 / 102672.0, -2260.0 / 8211.0, GAMMA],
    b_hat: [
        4586570599.0 / 29645900160.0,
        0.0,
        178811875.0 / 945068544.0,
        814220225.0 / 1159782912.0,
        -3700637.0 / 11593932.0,
        61727.0 / 225920.0,
    ],
};

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;
const NEWTON_MAX_ITER: usize = 10;
/// Newton corrections must be this small relative to the local error scale.
const NEWTON_TOL: f64 = 1e-3;
/// A stalled iteration has reached the rounding floor of the right-hand
/// side; it is accepted when its corrections are this small.
const NEWTON_STALL_TOL: f64 = 0.05;

pub(super) fn advance<F: VectorField + ?Sized>(
    field: &F,
    t0: f64,
    y0: &[f64],
    t1: f64,
    settings: &IntegratorSettings,
    h_hint: Option<f64>,
    observer: &mut dyn FnMut(f64, &[f64]) -> ControlFlow<()>,
) -> Result<Advance, IntegrationError> {
    let tab = &ESDIRK_TABLEAU;
    let n = y0.len();
    let mut stats = StepStats::default();
    let mut y = y0.to_vec();
    let mut k = vec![vec![0.0; n]; 6];
    field.eval(&y, &mut k[0]);
    stats.rhs_evals += 1;
    if k[0].iter().any(|v| !v.is_finite()) {
        return Err(IntegrationError::NonFinite { t: t0 });
    }

    let mut h = match h_hint.or(settings.h_init) {
        Some(h) => h,
        None => {
            stats.rhs_evals += 1;
            initial_step(field, &y, &k[0], settings, 4, t1 - t0)
        }
    }
    .clamp(settings.h_min, settings.h_max);
    let mut h_next = h;

    let mut rhs = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut fz = vec![0.0; n];
    let mut scale = vec![0.0; n];
    let mut t = t0;
    let mut steps = 0usize;
    let mut rejected_last = false;
    let mut jac: Option<DMatrix<f64>> = None;

    while t < t1 {
        if steps >= settings.max_steps {
            return Err(IntegrationError::MaxSteps { t, steps });
        }
        steps += 1;
        let remaining = t1 - t;
        let last = h >= remaining;
        let hs = if last { remaining } else { h };

        let j = jac.get_or_insert_with(|| {
            stats.jacobian_evals += 1;
            field.jacobian(&y)
        });
        let mut iteration = DMatrix::<f64>::identity(n, n);
        iteration -= &*j * (hs * GAMMA);
        let lu = iteration.lu();

        let mut converged = lu.is_invertible();
        let mut all_finite = true;
        if converged {
            'stages: for s in 1..6 {
                rhs.copy_from_slice(&y);
                for (jdx, kj) in k.iter().enumerate().take(s) {
                    let a = tab.a[s][jdx];
                    if a != 0.0 {
                        for i in 0..n {
                            rhs[i] += hs * a * kj[i];
                        }
                    }
                }
                for i in 0..n {
                    z[i] = rhs[i] + hs * GAMMA * k[s - 1][i];
                }
                let mut previous = f64::INFINITY;
                let mut done = false;
                for _ in 0..NEWTON_MAX_ITER {
                    field.eval(&z, &mut fz);
                    stats.rhs_evals += 1;
                    let residual = DVector::from_iterator(
                        n,
                        (0..n).map(|i| -(z[i] - rhs[i] - hs * GAMMA * fz[i])),
                    );
                    let Some(delta) = lu.solve(&residual) else {
                        break;
                    };
                    for i in 0..n {
                        z[i] += delta[i];
                    }
                    if z.iter().any(|v| !v.is_finite()) {
                        all_finite = false;
                        break;
                    }
                    settings.error_scale(&z, &z, &mut scale);
                    let dn = rms_norm(delta.as_slice(), &scale);
                    if dn <= NEWTON_TOL || (dn >= previous && dn <= NEWTON_STALL_TOL) {
                        done = true;
                        break;
                    }
                    if dn >= previous {
                        break;
                    }
                    previous = dn;
                }
                if !done {
                    converged = false;
                    break 'stages;
                }
                for i in 0..n {
                    k[s][i] = (z[i] - rhs[i]) / (hs * GAMMA);
                }
            }
        }

        if !converged {
            stats.rejected += 1;
            rejected_last = true;
            h = hs * 0.25;
            if h < settings.h_min {
                return Err(if all_finite {
                    IntegrationError::StepUnderflow { t, h }
                } else {
                    IntegrationError::NonFinite { t }
                });
            }
            continue;
        }

        // z holds the last stage, which is the fourth-order solution.
        let raw = DVector::from_iterator(
            n,
            (0..n).map(|i| {
                (0..6).map(|s| hs * (tab.b[s] - tab.b_hat[s]) * k[s][i]).sum::<f64>()
            }),
        );
        let filtered = lu.solve(&raw).unwrap_or(raw);
        settings.error_scale(&y, &z, &mut scale);
        let en = rms_norm(filtered.as_slice(), &scale);
        let en = if en.is_finite() { en } else { f64::INFINITY };

        if en <= 1.0 {
            t = if last { t1 } else { t + hs };
            y.copy_from_slice(&z);
            k.swap(0, 5);
            jac = None;
            stats.accepted += 1;
            if !field.admissible(&y) {
                return Err(IntegrationError::Escaped { t, state: y });
            }
            let mut fac = if en == 0.0 { MAX_FACTOR } else { SAFETY * en.powf(-0.25) }
                .clamp(MIN_FACTOR, MAX_FACTOR);
            if rejected_last {
                fac = fac.min(1.0);
            }
            let proposal = (hs * fac).min(settings.h_max);
            if last && hs < h {
                h_next = h;
            } else {
                h = proposal;
                h_next = proposal;
            }
            rejected_last = false;
            if observer(t, &y).is_break() {
                return Ok(Advance { t, y, h_next, stats, interrupted: true });
            }
        } else {
            stats.rejected += 1;
            rejected_last = true;
            let fac = if en.is_finite() {
                (SAFETY * en.powf(-0.25)).clamp(MIN_FACTOR, 1.0)
            } else {
                MIN_FACTOR
            };
            h = hs * fac;
            if h < settings.h_min {
                return Err(IntegrationError::StepUnderflow { t, h });
            }
        }
    }
    Ok(Advance { t, y, h_next, stats, interrupted: false })
}
