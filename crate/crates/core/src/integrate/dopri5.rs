//! Dormand–Prince 5(4) with first-same-as-last stage reuse.

use std::ops::ControlFlow;

use super::{
    initial_step, rms_norm, Advance, ButcherTableau, IntegrationError, IntegratorSettings,
    StepStats, VectorField,
};

pub const DOPRI5_TABLEAU: ButcherTableau<7> = ButcherTableau {
    c: [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0],
    a: [
        [0.0; 7],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0, 0.0],
        [
            9017.0 / 3168.0,
            -355.0 / 33.0,
            46732.0 / 5247.0,
            49.0 / 176.0,
            -5103.0 / 18656.0,
            0.0,
            0.0,
        ],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0],
    ],
    b: [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0],
    b_hat: [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ],
};

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

pub(super) fn advance<F: VectorField + ?Sized>(
    field: &F,
    t0: f64,
    y0: &[f64],
    t1: f64,
    settings: &IntegratorSettings,
    h_hint: Option<f64>,
    observer: &mut dyn FnMut(f64, &[f64]) -> ControlFlow<()>,
) -> Result<Advance, IntegrationError> {
    let tab = &DOPRI5_TABLEAU;
    let n = y0.len();
    let mut stats = StepStats::default();
    let mut y = y0.to_vec();
    let mut k = vec![vec![0.0; n]; 7];
    field.eval(&y, &mut k[0]);
    stats.rhs_evals += 1;
    if k[0].iter().any(|v| !v.is_finite()) {
        return Err(IntegrationError::NonFinite { t: t0 });
    }

    let mut h = match h_hint.or(settings.h_init) {
        Some(h) => h,
        None => {
            stats.rhs_evals += 1;
            initial_step(field, &y, &k[0], settings, 5, t1 - t0)
        }
    }
    .clamp(settings.h_min, settings.h_max);
    let mut h_next = h;

    let mut stage = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut scale = vec![0.0; n];
    let mut t = t0;
    let mut steps = 0usize;
    let mut rejected_last = false;

    while t < t1 {
        if steps >= settings.max_steps {
            return Err(IntegrationError::MaxSteps { t, steps });
        }
        steps += 1;
        let remaining = t1 - t;
        let last = h >= remaining;
        let hs = if last { remaining } else { h };

        for s in 1..7 {
            stage.copy_from_slice(&y);
            for (j, kj) in k.iter().enumerate().take(s) {
                let a = tab.a[s][j];
                if a != 0.0 {
                    for i in 0..n {
                        stage[i] += hs * a * kj[i];
                    }
                }
            }
            field.eval(&stage, &mut k[s]);
        }
        stats.rhs_evals += 6;
        // The seventh stage input is the fifth-order solution.
        err.fill(0.0);
        for (j, kj) in k.iter().enumerate() {
            let e = tab.b[j] - tab.b_hat[j];
            if e != 0.0 {
                for i in 0..n {
                    err[i] += hs * e * kj[i];
                }
            }
        }
        let finite = stage.iter().chain(&k[6]).all(|v| v.is_finite());
        let en = if finite {
            settings.error_scale(&y, &stage, &mut scale);
            rms_norm(&err, &scale)
        } else {
            f64::INFINITY
        };

        if en <= 1.0 {
            t = if last { t1 } else { t + hs };
            y.copy_from_slice(&stage);
            k.swap(0, 6);
            stats.accepted += 1;
            if !field.admissible(&y) {
                return Err(IntegrationError::Escaped { t, state: y });
            }
            let mut fac =
                if en == 0.0 { MAX_FACTOR } else { SAFETY * en.powf(-0.2) }.clamp(MIN_FACTOR, MAX_FACTOR);
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
                (SAFETY * en.powf(-0.2)).clamp(MIN_FACTOR, 1.0)
            } else {
                MIN_FACTOR
            };
            h = hs * fac;
            if h < settings.h_min {
                return Err(if finite {
                    IntegrationError::StepUnderflow { t, h }
                } else {
                    IntegrationError::NonFinite { t }
                });
            }
        }
    }
    Ok(Advance { t, y, h_next, stats, interrupted: false })
}
