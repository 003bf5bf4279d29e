//! Switching bistable ODE systems between steady states with rectangular
//! input pulses.
//!
//! The central object is the switching function `r(mu, tau)`: the value of
//! the dominant Koopman eigenfunction of the target attractor, evaluated at
//! the state reached when a pulse of magnitude `mu` and duration `tau` is
//! switched off. Level sets of `|r|` group pulses after which the unforced
//! flow converges synchronously, and `ln(|r| / eps) / |Re lambda_1|` predicts
//! the time needed to reach an `eps`-isostable of the target.
//!
//! Modules, bottom-up:
//!
//! * [`model`] built-in vector fields, cones, pulses and JSON configs.
//! * [`integrate`] adaptive Dormand–Prince 5(4) and an L-stable ESDIRK 4(3).
//! * [`linalg`] dense nonsymmetric eigensolver (balancing, Hessenberg, QR).
//! * [`spectral`] Newton fixed points and dominant eigentriples.
//! * [`koopman`] dominant eigenfunction evaluation and basin labels.
//! * [`switching`] the switching function and convergence-time maps.
//! * [`levelset`] grid sweeps, monotone bisection tracing, contours.
//! * [`monotone`] cone orders, Kamke checks, increasing transients.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod integrate;
pub mod koopman;
pub mod levelset;
pub mod linalg;
pub mod model;
pub mod monotone;
pub mod spectral;
pub mod switching;

pub use error::{Error, Result};
pub use model::{load_model, ConeSpec, ModelFamily, Pulse, SystemModel};

/// Complex scalar used for eigenvalues and eigenfunction values.
pub type C64 = nalgebra::Complex<f64>;

/// Formats a float with 17 significant digits, independent of locale.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{:.16e}", v)
    } else if v.is_nan() {
        "nan".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}
