use std::fs;
use std::time::Instant;

use pulseshaper::integrate::{integrate_flow, IntegratorSettings};
use pulseshaper::levelset::{
    extract_level_contours_grid, extract_separatrix_grid, sweep, trace_level_curve_monotone,
    trace_separatrix_monotone, Branch, GridAxis, LevelCurve, TraceOptions,
};
use pulseshaper::monotone::{check_kamke, search_cones, KamkeReport};
use pulseshaper::spectral::{find_fixed_point, Attractors};
use pulseshaper::switching::{alpha_for_time, write_samples_csv, SwitchingProblem};
use pulseshaper::{ConeSpec, Pulse, SystemModel};
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::output::{emit, json_bytes, parse_reals, resolve_model, write_manifest};
use crate::{
    BranchArg, Command, Failure, FixedPointsArgs, LevelSetsArgs, MethodArg, MonotoneArgs, SimulateArgs,
    SwitchMapArgs,
};

pub fn run(command: &Command, started: Instant) -> Result<(), Failure> {
    match command {
        Command::Simulate(a) => simulate(a, started),
        Command::FixedPoints(a) => fixed_points(a, started),
        Command::SwitchMap(a) => switch_map(a, started),
        Command::LevelSets(a) => level_sets(a, started),
        Command::MonotoneCheck(a) => monotone_check(a, started),
    }
}

fn settings_of<T: serde::Serialize>(args: &T) -> Value {
    serde_json::to_value(args).expect("arguments serialize")
}

fn numeric(e: impl std::fmt::Display) -> Failure {
    Failure::Numeric(e.to_string())
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn locate(model: &SystemModel) -> Result<Attractors, Failure> {
    Attractors::locate(model, pulseshaper::spectral::DEFAULT_NEWTON_TOL)
        .map_err(|e| Failure::Numeric(format!("cannot locate the attractors of `{}`: {e}", model.name())))
}

fn simulate(args: &SimulateArgs, started: Instant) -> Result<(), Failure> {
    let model = resolve_model(&args.model)?;
    let x0 = match args.x0.trim() {
        "source" => locate(&model)?.source.location.as_slice().to_vec(),
        "target" => locate(&model)?.target.location.as_slice().to_vec(),
        text => parse_reals(text, "--x0")?,
    };
    if x0.len() != model.dim() {
        return Err(Failure::Usage(format!(
            "--x0 has {} components, model `{}` has dimension {}",
            x0.len(),
            model.name(),
            model.dim()
        )));
    }
    let pulse = match parse_reals(&args.pulse, "--pulse")?.as_slice() {
        [mu, tau] => Pulse::new(*mu, *tau).map_err(usage)?,
        _ => return Err(Failure::Usage("--pulse expects `mu,tau`".into())),
    };
    if !(args.t_end > 0.0 && args.t_end.is_finite()) {
        return Err(Failure::Usage("--t-end must be positive".into()));
    }
    let mut settings = IntegratorSettings::for_model(&model).with_tolerances(args.rtol, args.atol);
    settings.stiff |= args.stiff;
    settings.validate().map_err(usage)?;

    let traj = integrate_flow(&model, &x0, Some(&pulse), args.t_end, &settings).map_err(numeric)?;
    let mut csv = Vec::new();
    traj.write_csv(&mut csv).map_err(numeric)?;
    emit(args.out.as_deref(), &csv)?;
    let mut s = settings_of(args);
    s["integrator"] = json!({"rtol": settings.rtol, "atol": settings.atol, "stiff": settings.stiff});
    write_manifest(args.out.as_deref(), "simulate", &model, s, started)
}

#[derive(Deserialize)]
struct Guesses {
    source: Vec<f64>,
    target: Vec<f64>,
}

fn fixed_points(args: &FixedPointsArgs, started: Instant) -> Result<(), Failure> {
    let model = resolve_model(&args.model)?;
    let (source, target) = match &args.guesses {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
            let g: Guesses = serde_json::from_str(&text)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            (g.source, g.target)
        }
        None => {
            let (s, t) = model.default_guesses();
            (s.as_slice().to_vec(), t.as_slice().to_vec())
        }
    };
    for g in [&source, &target] {
        if g.len() != model.dim() {
            return Err(Failure::Usage(format!("guess {g:?} does not match dimension {}", model.dim())));
        }
    }
    if !(args.newton_tol > 0.0) {
        return Err(Failure::Usage("--newton-tol must be positive".into()));
    }

    let mut found = Vec::new();
    let mut reports = Vec::new();
    let mut errors = Vec::new();
    for (role, guess) in [("source", &source), ("target", &target)] {
        match find_fixed_point(&model, guess, args.newton_tol) {
            Ok(fp) => {
                let mut r = fp.report();
                r["role"] = json!(role);
                if !fp.is_stable {
                    errors.push(json!({"role": role, "guess": guess, "error": "fixed point is not stable"}));
                } else {
                    found.push(fp.location.clone());
                }
                reports.push(r);
            }
            Err(e) => errors.push(json!({"role": role, "guess": guess, "error": e.to_string()})),
        }
    }
    if let [a, b] = found.as_slice() {
        if (a - b).norm() <= 1e-6 * (1.0 + b.norm()) {
            errors.push(json!({"role": "both", "error": "both guesses converged to the same point"}));
        }
    }
    let bistable = errors.is_empty();
    let report = json!({
        "model": model.to_config(),
        "fixed_points": reports,
        "errors": errors,
        "bistable": bistable,
    });
    emit(args.out.as_deref(), &json_bytes(&report))?;
    write_manifest(args.out.as_deref(), "fixed-points", &model, settings_of(args), started)?;
    if bistable {
        Ok(())
    } else {
        Err(Failure::Partial("fewer than two distinct stable fixed points found".into()))
    }
}

fn switching_problem(model: &SystemModel, eps: f64) -> Result<SwitchingProblem, Failure> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Failure::Usage("--eps must be positive".into()));
    }
    let problem = SwitchingProblem::from_attractors(model, locate(model)?).map_err(numeric)?;
    problem.with_eps(eps).map_err(usage)
}

fn evaluator_settings(problem: &SwitchingProblem) -> Value {
    let ev = problem.evaluator();
    let ps = problem.pulse_settings();
    json!({
        "lambda1": {"re": problem.lambda1().re, "im": problem.lambda1().im},
        "s1_rel_tol": ev.rel_tol(),
        "s1_t_checkpoint": ev.t_checkpoint(),
        "s1_t_max": ev.t_max(),
        "s1_rtol": ev.settings().rtol,
        "s1_atol": ev.settings().atol,
        "pulse_rtol": ps.rtol,
        "pulse_atol": ps.atol,
        "stiff": ps.stiff,
    })
}

fn switch_map(args: &SwitchMapArgs, started: Instant) -> Result<(), Failure> {
    let model = resolve_model(&args.model)?;
    let mu_axis = GridAxis::parse(&args.mu, args.log_axes).map_err(usage)?;
    let tau_axis = GridAxis::parse(&args.tau, args.log_axes).map_err(usage)?;
    let problem = switching_problem(&model, args.eps)?;
    let grid = sweep(&problem, mu_axis, tau_axis).map_err(numeric)?;

    let mut csv = Vec::new();
    write_samples_csv(&mut csv, &grid.samples).map_err(numeric)?;
    emit(args.out.as_deref(), &csv)?;
    let mut s = settings_of(args);
    s["evaluator"] = evaluator_settings(&problem);
    write_manifest(args.out.as_deref(), "switch-map", &model, s, started)
}

/// One requested level: `alpha`, and the convergence time it came from.
struct Level {
    alpha: f64,
    time: Option<f64>,
}

fn curve_json(curve: &LevelCurve, time: Option<f64>, monotone: bool) -> Value {
    let mut v = curve.to_json();
    if let Some(t) = time {
        v["time"] = json!(t);
    }
    if monotone {
        v["monotone_violations"] = json!(curve.monotone_violations().len());
    }
    v
}

fn level_sets(args: &LevelSetsArgs, started: Instant) -> Result<(), Failure> {
    let model = resolve_model(&args.model)?;
    if args.alphas.is_none() && args.times.is_none() && !args.separatrix {
        return Err(Failure::Usage("nothing to trace: give --alphas, --times or --separatrix".into()));
    }
    if !(args.tol > 0.0) {
        return Err(Failure::Usage("--tol must be positive".into()));
    }
    let mu_axis = GridAxis::parse(&args.mu, args.log_axes).map_err(usage)?;
    let tau_axis = GridAxis::parse(&args.tau, args.log_axes).map_err(usage)?;
    let problem = switching_problem(&model, args.eps)?;
    let lambda1 = problem.lambda1();

    let levels: Vec<Level> = match (&args.alphas, &args.times) {
        (Some(alphas), _) => alphas.iter().map(|&alpha| Level { alpha, time: None }).collect(),
        (None, Some(times)) => times
            .iter()
            .map(|&t| Level { alpha: alpha_for_time(args.eps, lambda1.re, t), time: Some(t) })
            .collect(),
        (None, None) => Vec::new(),
    };
    if let Some(bad) = levels.iter().find(|l| !(l.alpha > 0.0 && l.alpha.is_finite())) {
        return Err(Failure::Usage(format!("level alpha = {} must be positive and finite", bad.alpha)));
    }

    let monotone_ok = model.declared_monotone() && lambda1.im == 0.0;
    let use_monotone = match args.method {
        MethodArg::Auto => monotone_ok,
        MethodArg::Monotone if !monotone_ok => {
            return Err(Failure::Usage(format!(
                "model `{}` needs a declared monotone cone and a real dominant eigenvalue for tracing",
                model.name()
            )))
        }
        MethodArg::Monotone => true,
        MethodArg::Grid => false,
    };

    let (method, curves, separatrix) = if use_monotone {
        let opts = TraceOptions::new(tau_axis.lo, tau_axis.hi, args.tol).map_err(usage)?;
        let mu_values = mu_axis.values();
        let branches: &[Branch] = match args.branch {
            BranchArg::Lower => &[Branch::Lower],
            BranchArg::Upper => &[Branch::Upper],
            BranchArg::Both => &[Branch::Lower, Branch::Upper],
        };
        let jobs: Vec<(&Level, Branch)> =
            levels.iter().flat_map(|l| branches.iter().map(move |b| (l, *b))).collect();
        let curves = jobs
            .par_iter()
            .map(|(level, branch)| {
                trace_level_curve_monotone(&problem, level.alpha, *branch, &mu_values, &opts)
                    .map(|c| curve_json(&c, level.time, true))
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(numeric)?;
        let separatrix = if args.separatrix {
            let c = trace_separatrix_monotone(&problem, &mu_values, &opts).map_err(numeric)?;
            Some(vec![curve_json(&c, None, true)])
        } else {
            None
        };
        ("monotone", curves, separatrix)
    } else {
        let grid = sweep(&problem, mu_axis, tau_axis).map_err(numeric)?;
        let mut curves = Vec::new();
        for level in &levels {
            for c in extract_level_contours_grid(&grid, &[level.alpha]) {
                curves.push(curve_json(&c, level.time, false));
            }
        }
        let separatrix = args
            .separatrix
            .then(|| extract_separatrix_grid(&grid).iter().map(|c| curve_json(c, None, false)).collect());
        ("grid", curves, separatrix)
    };

    let mut report = json!({
        "model": model.to_config(),
        "method": method,
        "eps": args.eps,
        "lambda1": {"re": lambda1.re, "im": lambda1.im},
        "curves": curves,
    });
    if let Some(sep) = separatrix {
        report["separatrix"] = json!(sep);
    }
    emit(args.out.as_deref(), &json_bytes(&report))?;
    let mut s = settings_of(args);
    s["evaluator"] = evaluator_settings(&problem);
    s["resolved_method"] = json!(method);
    write_manifest(args.out.as_deref(), "level-sets", &model, s, started)
}

fn monotone_check(args: &MonotoneArgs, started: Instant) -> Result<(), Failure> {
    let model = resolve_model(&args.model)?;
    if args.samples == 0 {
        return Err(Failure::Usage("--samples must be positive".into()));
    }
    if !(args.tol >= 0.0) || !(args.u_max >= 0.0 && args.u_max.is_finite()) {
        return Err(Failure::Usage("--tol and --u-max must be nonnegative".into()));
    }
    let (mode, reports): (&str, Vec<KamkeReport>) = match args.cone.trim() {
        "auto" => {
            if model.dim() > 8 {
                return Err(Failure::Usage("--cone auto is limited to dimension 8".into()));
            }
            ("auto", search_cones(&model, args.samples, args.tol, args.u_max).map_err(numeric)?)
        }
        other => {
            let (mode, cone) = match other {
                "standard" => ("standard", ConeSpec::standard(model.dim())),
                "model" => ("model", model.cone().clone()),
                sig => ("signature", ConeSpec::parse(sig).map_err(usage)?),
            };
            if cone.dim() != model.dim() {
                return Err(Failure::Usage(format!(
                    "cone {cone} does not match dimension {}",
                    model.dim()
                )));
            }
            (mode, vec![check_kamke(&model, &cone, args.samples, args.tol, args.u_max).map_err(numeric)?])
        }
    };
    let passing: Vec<Value> = reports.iter().filter(|r| r.passed).map(KamkeReport::to_json).collect();
    // First report with the smallest violation.
    let closest = reports
        .iter()
        .fold(None::<&KamkeReport>, |best, r| match best {
            Some(b) if b.worst_violation <= r.worst_violation => Some(b),
            _ => Some(r),
        })
        .map(KamkeReport::to_json);
    let report = json!({
        "model": model.to_config(),
        "mode": mode,
        "signatures_checked": reports.len(),
        "monotone": !passing.is_empty(),
        "passing": passing,
        "closest": closest,
    });
    emit(args.out.as_deref(), &json_bytes(&report))?;
    write_manifest(args.out.as_deref(), "monotone-check", &model, settings_of(args), started)
}
