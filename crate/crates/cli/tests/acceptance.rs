//! End-to-end acceptance suite: one PASS/FAIL line per criterion, nonzero
//! exit status when any criterion fails.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use pulseshaper::integrate::flow_endpoint;
use pulseshaper::koopman::{EigenfunctionEvaluator, S1Status};
use pulseshaper::levelset::{trace_level_curve_monotone, Branch, GridAxis, TraceOptions};
use pulseshaper::monotone::{check_kamke, halton_points, verify_increasing_transient};
use pulseshaper::spectral::{Attractors, DEFAULT_NEWTON_TOL};
use pulseshaper::switching::{alpha_for_time, SwitchingProblem};
use pulseshaper::{ModelFamily, Pulse, SystemModel};
use serde_json::Value;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn pulseshaper(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_pulseshaper"))
        .args(args)
        .env_remove("PULSESHAPER_JOBS")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?} exited with {}: {}", out.status, String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn pulseshaper_json(args: &[&str]) -> Result<Value, String> {
    serde_json::from_slice(&pulseshaper(args)?).map_err(|e| e.to_string())
}

fn locations(report: &Value) -> Vec<Vec<f64>> {
    report["fixed_points"]
        .as_array()
        .unwrap()
        .iter()
        .map(|fp| fp["location"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect())
        .collect()
}

fn repressilator() -> SwitchingProblem {
    SwitchingProblem::new(&SystemModel::builtin(ModelFamily::Repressilator8)).unwrap()
}

/// Toxin-antitoxin steady states match the reference values.
fn toxin_steady_states() -> Outcome {
    let reference = [[27.1517, 80.5151, 58.4429, 0.0877], [162.8103, 26.2221, 0.0002, 110.4375]];
    let found = locations(&pulseshaper_json(&["fixed-points", "--model", "toxin_antitoxin"])?);
    let close = |a: &[f64], b: &[f64; 4]| {
        a.iter().zip(b).all(|(x, p)| (x - p).abs() <= 1e-3 * p.abs().max(1.0))
    };
    let matched = reference.iter().all(|p| found.iter().any(|f| close(f, p)));
    check(matched, format!("found {found:?}"))
}

/// Lorenz wing equilibria and their complex dominant pair.
fn lorenz_equilibria() -> Outcome {
    let report = pulseshaper_json(&["fixed-points", "--model", "lorenz"])?;
    let a = (8.0f64 / 3.0).sqrt();
    let mut worst = 0.0f64;
    for loc in locations(&report) {
        let s = loc[0].signum();
        for (x, e) in loc.iter().zip([s * a, s * a, 1.0]) {
            worst = worst.max((x - e).abs());
        }
    }
    let complex = report["fixed_points"].as_array().unwrap().iter().all(|fp| {
        let ev = &fp["eigenvalues"];
        fp["complex_dominant"] == true
            && ev[0]["im"].as_f64().unwrap() != 0.0
            && ev[0]["re"] == ev[1]["re"]
            && ev[0]["im"].as_f64().unwrap() == -ev[1]["im"].as_f64().unwrap()
    });
    check(worst <= 1e-8 && complex, format!("max deviation {worst:.2e}, complex dominant pair: {complex}"))
}

/// Real dominant eigenvalues and the Kamke conditions for the repressilator.
fn monotone_spectral_property() -> Outcome {
    let m = SystemModel::builtin(ModelFamily::Repressilator8);
    let att = Attractors::locate(&m, DEFAULT_NEWTON_TOL).map_err(|e| e.to_string())?;
    let real = [&att.source, &att.target].iter().all(|fp| fp.lambda1.im.abs() <= 1e-9 && fp.lambda1.re < 0.0);
    let kamke = check_kamke(&m, m.cone(), 10_000, 1e-9, 20.0).map_err(|e| e.to_string())?;
    check(
        real && kamke.passed && kamke.worst_violation <= 1e-9,
        format!(
            "lambda1 = {}, {}; Kamke worst violation {:.2e} over {} samples",
            att.source.lambda1, att.target.lambda1, kamke.worst_violation, kamke.samples_checked
        ),
    )
}

/// `s1(phi(t, x)) = s1(x) e^{lambda1 t}` on target-basin points.
fn semigroup() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for (fam, spread) in [(ModelFamily::Repressilator8, 0.6), (ModelFamily::ToxinAntitoxin, 0.3)] {
        let m = SystemModel::builtin(fam);
        let att = Attractors::locate(&m, DEFAULT_NEWTON_TOL).map_err(|e| e.to_string())?;
        let ev = EigenfunctionEvaluator::for_target(&m, &att).map_err(|e| e.to_string())?;
        let x_fp = &att.target.location;
        let bounds: Vec<(f64, f64)> = x_fp.iter().map(|x| (x * (1.0 - spread), x * (1.0 + spread))).collect();
        let settings = pulseshaper::integrate::IntegratorSettings::for_model(&m).with_tolerances(1e-11, 1e-13);
        let (mut points, mut worst) = (0, 0.0f64);
        for x in halton_points(&bounds, 200) {
            if points == 20 {
                break;
            }
            let base = ev.eval_s1(&x);
            let Some(s) = base.value else { continue };
            points += 1;
            for t in [1.0, 2.0, 5.0] {
                let xt = flow_endpoint(&m, &x, None, t, &settings).map_err(|e| e.to_string())?;
                let moved = ev.eval_s1(xt.as_slice());
                if moved.status != S1Status::Ok {
                    return Err(format!("{fam:?}: flowed point left the basin"));
                }
                let err = (moved.value.unwrap() - s * (ev.lambda1() * t).exp()).norm() / s.norm().max(1.0);
                worst = worst.max(err);
            }
        }
        ok &= points == 20 && worst <= 1e-4;
        details.push(format!("{}: {points} points, worst {worst:.2e}", m.name()));
    }
    check(ok, details.join("; "))
}

/// Monotone level curves for T in {5, 10, 15}, and their self-consistency.
fn level_set_monotonicity() -> Outcome {
    let problem = repressilator();
    let tol = 1e-3;
    let mu = GridAxis::new(0.05, 20.0, 30, false).unwrap().values();
    let opts = TraceOptions::new(0.05, 20.0, tol).unwrap();
    let (mut violations, mut worst_consistency, mut summary) = (0, 0.0f64, Vec::new());
    for t in [5.0, 10.0, 15.0] {
        let alpha = alpha_for_time(problem.eps(), problem.lambda1().re, t);
        for branch in [Branch::Lower, Branch::Upper] {
            let curve =
                trace_level_curve_monotone(&problem, alpha, branch, &mu, &opts).map_err(|e| e.to_string())?;
            violations += curve.monotone_violations().len();
            summary.push(format!("T={t} {}: {} pts", branch.as_str(), curve.points.len()));
            if branch == Branch::Upper {
                if curve.points.is_empty() {
                    // Only acceptable when r stays below alpha even for the
                    // strongest, effectively endless pulse.
                    let sup = problem.eval_r(&Pulse { mu: 20.0, tau: 200.0 }).r.map_or(f64::NAN, |r| r.re);
                    if sup.is_nan() || sup >= alpha {
                        return Err(format!("upper branch for T = {t} missing although r reaches {sup}"));
                    }
                }
                continue;
            }
            for &(m, tau) in &curve.points {
                let r = |t: f64| problem.eval_r(&Pulse { mu: m, tau: t }).r.map(|r| r.re);
                let (Some(lo), Some(mid), Some(hi)) = (r(tau - tol), r(tau), r(tau + tol)) else {
                    return Err(format!("r undefined next to the traced point ({m}, {tau})"));
                };
                let slope = (hi - lo) / (2.0 * tol);
                worst_consistency = worst_consistency.max((mid + alpha).abs() / (10.0 * tol * slope.abs()));
            }
        }
    }
    check(
        violations == 0 && worst_consistency <= 1.0,
        format!(
            "{violations} violations; worst |Re r + alpha| / (10 tol |dr/dtau|) = {worst_consistency:.3}; {}",
            summary.join(", ")
        ),
    )
}

/// Order-convexity of the switching set and dominance by scaled pulses.
fn order_convexity_and_dominance() -> Outcome {
    let problem = repressilator();
    let switches = |mu: f64, tau: f64| problem.eval_r(&Pulse { mu, tau }).switches();
    let mut dominance = 0;
    let mut dominance_violations = 0;
    for p in halton_points(&[(0.05, 20.0), (0.05, 20.0)], 2000) {
        if dominance == 100 {
            break;
        }
        if !switches(p[0], p[1]) {
            continue;
        }
        dominance += 1;
        if !switches(1.1 * p[0], 1.1 * p[1]) {
            dominance_violations += 1;
        }
    }

    let mut pairs = 0;
    let mut convexity_violations = 0;
    for p in halton_points(&[(0.05, 20.0), (0.05, 20.0), (0.0, 8.0), (0.0, 8.0)], 4000) {
        if pairs == 100 {
            break;
        }
        let (a, b, c, d) = (p[0], p[1], p[0] + p[2], p[1] + p[3]);
        if !(switches(a, b) && switches(c, d)) {
            continue;
        }
        pairs += 1;
        for s in [0.25, 0.5, 0.75] {
            if !switches(a + s * (c - a), b + s * (d - b)) {
                convexity_violations += 1;
            }
        }
    }
    check(
        dominance == 100 && pairs == 100 && dominance_violations + convexity_violations == 0,
        format!(
            "dominance {dominance_violations}/{dominance} violations; order-convexity {convexity_violations} \
             violations over {pairs} pairs"
        ),
    )
}

/// Predicted convergence time against the simulated first entry into the
/// `eps`-isostable.
fn timing_prediction() -> Outcome {
    let problem = repressilator();
    let eps = problem.eps();
    let model = problem.model();
    let settings = problem.pulse_settings();
    let x0 = problem.attractors().source.location.as_slice();
    let inside = |pulse: &Pulse, t: f64| -> bool {
        let x = if t <= pulse.tau {
            flow_endpoint(model, x0, Some(&Pulse { mu: pulse.mu, tau: t }), t, settings)
        } else {
            flow_endpoint(model, x0, Some(pulse), pulse.tau, settings)
                .and_then(|end| flow_endpoint(model, end.as_slice(), None, t - pulse.tau, settings))
        };
        x.ok().map(|x| problem.evaluator().eval_s1(x.as_slice())).is_some_and(|o| {
            o.status == S1Status::Ok && o.value.unwrap().norm() <= eps
        })
    };
    let mut checked = 0;
    let mut worst = 0.0f64;
    for p in halton_points(&[(2.0, 20.0), (4.0, 20.0)], 200) {
        if checked == 10 {
            break;
        }
        let pulse = Pulse { mu: p[0], tau: p[1] };
        let Some(t_eps) = problem.eval_r(&pulse).t_eps.filter(|t| *t > 0.0) else { continue };
        let predicted = pulse.tau + t_eps;
        let step = 0.25;
        let mut t = 0.0;
        while !inside(&pulse, t + step) {
            t += step;
            if t > 2.0 * predicted + 10.0 {
                return Err(format!("({}, {}) never enters the isostable", pulse.mu, pulse.tau));
            }
        }
        let (mut lo, mut hi) = (t, t + step);
        while hi - lo > 1e-4 {
            let mid = 0.5 * (lo + hi);
            if inside(&pulse, mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        worst = worst.max((hi - predicted).abs() / t_eps.max(1.0));
        checked += 1;
    }
    check(checked == 10 && worst <= 0.05, format!("{checked} samples, worst relative miss {worst:.2e}"))
}

/// Constant inputs drive the repressilator upward in its cone order.
fn increasing_transient() -> Outcome {
    let m = SystemModel::builtin(ModelFamily::Repressilator8);
    let att = Attractors::locate(&m, DEFAULT_NEWTON_TOL).map_err(|e| e.to_string())?;
    let times: Vec<f64> = (0..21).map(|k| k as f64).collect();
    let mut worst = f64::INFINITY;
    for mu in [1.0, 5.0] {
        let r = verify_increasing_transient(&m, att.source.location.as_slice(), mu, &times, 1e-6)
            .map_err(|e| e.to_string())?;
        worst = worst.min(r.worst_margin);
    }
    check(worst >= -1e-6, format!("worst margin {worst:.3e}"))
}

/// Lorenz and toxin-antitoxin fail the Kamke conditions for every orthant.
fn non_monotone_controls() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for model in ["lorenz", "toxin_antitoxin"] {
        let report = pulseshaper_json(&["monotone-check", "--model", model, "--cone", "auto"])?;
        ok &= report["monotone"] == false;
        details.push(format!(
            "{model}: {} signatures, monotone = {}, closest violation {}",
            report["signatures_checked"], report["monotone"], report["closest"]["worst_violation"]
        ));
    }
    check(ok, details.join("; "))
}

/// Switch maps do not depend on the number of worker threads.
fn determinism() -> Outcome {
    let run = |jobs: &str| {
        pulseshaper(&[
            "--jobs", jobs, "switch-map", "--model", "repressilator8", "--mu", "0.05:20:20", "--tau", "0.05:20:20",
        ])
    };
    let (one, eight) = (run("1")?, run("8")?);
    check(one == eight, format!("{} bytes, identical: {}", one.len(), one == eight))
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome, Duration);
    let criteria: [Criterion; 10] = [
        ("toxin-antitoxin steady states", toxin_steady_states, Duration::from_secs(5)),
        ("Lorenz equilibria", lorenz_equilibria, Duration::from_secs(1)),
        ("monotone spectral property", monotone_spectral_property, Duration::from_secs(30)),
        ("eigenfunction semigroup", semigroup, Duration::from_secs(120)),
        ("level-set monotonicity", level_set_monotonicity, Duration::from_secs(600)),
        ("order-convexity and dominance", order_convexity_and_dominance, Duration::from_secs(300)),
        ("timing prediction", timing_prediction, Duration::from_secs(300)),
        ("increasing transient", increasing_transient, Duration::from_secs(60)),
        ("non-monotone controls", non_monotone_controls, Duration::from_secs(120)),
        ("determinism across --jobs", determinism, Duration::from_secs(300)),
    ];
    let mut failed = 0;
    for (k, (name, run, limit)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = run();
        let elapsed = started.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) if elapsed <= *limit => (true, d),
            Ok(d) => (false, format!("{d}; over the {:.0?} limit", limit)),
            Err(d) => (false, d),
        };
        failed += usize::from(!pass);
        println!(
            "criterion {:>2} {}: {name} ({:.2?}) - {detail}",
            k + 1,
            if pass { "PASS" } else { "FAIL" },
            elapsed
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
