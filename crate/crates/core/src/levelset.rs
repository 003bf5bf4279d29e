//! Level curves of the switching function in the `(mu, tau)` plane.
//!
//! For monotone models every level curve and the switching separatrix are
//! graphs of non-increasing functions `tau(mu)`, so each point is found by
//! one bisection in `tau`, and the result at one `mu` bounds the bracket at
//! the next. Other models use a grid sweep and marching squares.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::koopman::{Basin, S1Status, DEFAULT_CLASSIFY_T_MAX};
use crate::model::Pulse;
use crate::switching::{SwitchingProblem, SwitchingSample};

/// One axis of a sweep grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Geometric instead of uniform spacing.
    pub log: bool,
}

impl GridAxis {
    pub fn new(lo: f64, hi: f64, count: usize, log: bool) -> Result<Self> {
        let axis = Self { lo, hi, count, log };
        axis.validate()?;
        Ok(axis)
    }

    /// Parses `lo:hi:count`.
    pub fn parse(text: &str, log: bool) -> Result<Self> {
        let parts: Vec<&str> = text.split(':').map(str::trim).collect();
        let bad = || Error::InvalidArgument(format!("expected lo:hi:count, got `{text}`"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let lo = parts[0].parse().map_err(|_| bad())?;
        let hi = parts[1].parse().map_err(|_| bad())?;
        let count = parts[2].parse().map_err(|_| bad())?;
        Self::new(lo, hi, count, log)
    }

    fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::InvalidArgument("axis needs at least one point".into()));
        }
        // A single point is written `v:v:1`.
        let ordered = if self.count == 1 { self.lo == self.hi } else { self.lo < self.hi };
        if !(self.lo.is_finite() && self.hi.is_finite() && ordered) {
            return Err(Error::InvalidArgument(format!(
                "axis {}:{}:{} needs lo < hi (or lo = hi for one point)",
                self.lo, self.hi, self.count
            )));
        }
        if self.lo < 0.0 {
            return Err(Error::InvalidArgument("pulse magnitudes and durations are nonnegative".into()));
        }
        if self.log && self.lo <= 0.0 {
            return Err(Error::InvalidArgument("log axis needs lo > 0".into()));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.lo];
        }
        let last = (self.count - 1) as f64;
        (0..self.count)
            .map(|i| {
                if i == 0 {
                    self.lo
                } else if i == self.count - 1 {
                    self.hi
                } else if self.log {
                    self.lo * (self.hi / self.lo).powf(i as f64 / last)
                } else {
                    self.lo + (self.hi - self.lo) * (i as f64 / last)
                }
            })
            .collect()
    }
}

/// Switching samples on a tensor grid, stored tau-major: the sample at
/// `(mu[i], tau[j])` is `samples[j * mu.len() + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub mu_axis: GridAxis,
    pub tau_axis: GridAxis,
    pub mu: Vec<f64>,
    pub tau: Vec<f64>,
    pub samples: Vec<SwitchingSample>,
}

impl SweepGrid {
    pub fn at(&self, i_mu: usize, j_tau: usize) -> &SwitchingSample {
        &self.samples[j_tau * self.mu.len() + i_mu]
    }

    /// Scalar field over the grid, tau-major, from a per-sample map.
    pub fn field(&self, f: impl Fn(&SwitchingSample) -> f64) -> Vec<f64> {
        self.samples.iter().map(f).collect()
    }
}

/// Evaluates `r` at every grid node. The result does not depend on the
/// evaluation order or the number of threads.
pub fn sweep(problem: &SwitchingProblem, mu_axis: GridAxis, tau_axis: GridAxis) -> Result<SweepGrid> {
    mu_axis.validate()?;
    tau_axis.validate()?;
    let mu = mu_axis.values();
    let tau = tau_axis.values();
    let nodes: Vec<Pulse> =
        tau.iter().flat_map(|t| mu.iter().map(move |m| Pulse { mu: *m, tau: *t })).collect();
    let samples = nodes.par_iter().map(|p| problem.eval_r_retrying(p)).collect();
    Ok(SweepGrid { mu_axis, tau_axis, mu, tau, samples })
}

/// Outcome of [`bisect_monotone`]: the last bracket `lo < root <= hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bisection {
    pub lo: f64,
    pub hi: f64,
    pub iterations: usize,
}

impl Bisection {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Bisection for the switch point of a monotone predicate, false at `lo` and
/// true at `hi`, down to a bracket of width at most `tol`. Evaluation
/// failures abort with the predicate's error.
pub fn bisect_monotone<E>(
    mut pred: impl FnMut(f64) -> std::result::Result<bool, E>,
    lo: f64,
    hi: f64,
    tol: f64,
) -> std::result::Result<Bisection, E> {
    let (mut lo, mut hi) = (lo, hi);
    let mut iterations = 0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
        iterations += 1;
    }
    Ok(Bisection { lo, hi, iterations })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Minimal elements, `Re r = -alpha`.
    Lower,
    /// Maximal elements, `Re r = +alpha`.
    Upper,
    /// Boundary of the switching set.
    Separatrix,
    /// Marching-squares polyline of `|r| = alpha`.
    Contour,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Lower => "lower",
            Branch::Upper => "upper",
            Branch::Separatrix => "separatrix",
            Branch::Contour => "contour",
        }
    }
}

/// Why a `mu` value has no point on a traced curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unresolved {
    /// The predicate already holds at the lower bracket end.
    BracketLow,
    /// The predicate fails at the upper bracket end.
    BracketHigh,
    /// A classification stayed undecided (or escaped) after one retry.
    Undecided,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelCurve {
    /// `+inf` for the separatrix.
    pub alpha: f64,
    pub branch: Branch,
    /// Points `(mu, tau)`; ascending in `mu` for traced curves.
    pub points: Vec<(f64, f64)>,
    /// Bisection tolerance in `tau` (grid spacing for contours).
    pub tol: f64,
    pub unresolved: Vec<(f64, Unresolved)>,
}

impl LevelCurve {
    pub fn unresolved_mu(&self) -> Vec<f64> {
        self.unresolved.iter().map(|u| u.0).collect()
    }

    /// `{"alpha", "branch", "tol", "points": [{"mu", "tau"}], "unresolved_mu"}`
    /// with `alpha = "inf"` for the separatrix.
    pub fn to_json(&self) -> Value {
        let alpha = if self.alpha.is_finite() { json!(self.alpha) } else { json!("inf") };
        json!({
            "alpha": alpha,
            "branch": self.branch.as_str(),
            "tol": self.tol,
            "points": self.points.iter().map(|(m, t)| json!({"mu": m, "tau": t})).collect::<Vec<_>>(),
            "unresolved_mu": self.unresolved_mu(),
        })
    }

    /// Pairs `(a, b)` with `mu_a < mu_b` and `tau_a < tau_b - tol`, which a
    /// non-increasing graph cannot have.
    pub fn monotone_violations(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for a in 0..self.points.len() {
            for b in 0..self.points.len() {
                let (pa, pb) = (self.points[a], self.points[b]);
                if pa.0 < pb.0 && pa.1 < pb.1 - self.tol {
                    out.push((a, b));
                }
            }
        }
        out
    }
}

/// Options shared by the monotone tracers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceOptions {
    pub tau_lo: f64,
    pub tau_hi: f64,
    pub tol: f64,
    /// Seed each bracket from the previous `mu` (sequential) instead of
    /// solving every `mu` independently (parallel).
    pub warm_start: bool,
}

impl TraceOptions {
    pub fn new(tau_lo: f64, tau_hi: f64, tol: f64) -> Result<Self> {
        if !(tau_lo >= 0.0 && tau_lo < tau_hi && tau_hi.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad tau bracket ({tau_lo}, {tau_hi})")));
        }
        if !(tol > 0.0) {
            return Err(Error::InvalidArgument("tol must be positive".into()));
        }
        Ok(Self { tau_lo, tau_hi, tol, warm_start: true })
    }

    pub fn with_warm_start(mut self, warm_start: bool) -> Self {
        self.warm_start = warm_start;
        self
    }
}

/// `pred(mu, tau)` of the monotone tracers.
type TauPredicate<'a> = dyn Fn(f64, f64) -> std::result::Result<bool, Unresolved> + Sync + 'a;

/// Traced points and the `mu` values left without one.
type Traced = (Vec<(f64, f64)>, Vec<(f64, Unresolved)>);

/// Per-`mu` bisection driver shared by the separatrix and level-curve
/// tracers. `pred(mu, tau)` must be monotone: false below the curve and
/// true above it, and (for warm starts) true-sets must grow with `mu`.
fn trace_monotone(
    mu_values: &[f64],
    opts: &TraceOptions,
    pred: &TauPredicate<'_>,
) -> Result<Traced> {
    if mu_values.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument("mu values must be strictly ascending".into()));
    }
    let solve = |mu: f64, hi: f64, hi_known: bool| -> std::result::Result<Bisection, Unresolved> {
        if pred(mu, opts.tau_lo)? {
            return Err(Unresolved::BracketLow);
        }
        if !hi_known && !pred(mu, hi)? {
            return Err(Unresolved::BracketHigh);
        }
        bisect_monotone(|tau| pred(mu, tau), opts.tau_lo, hi, opts.tol)
    };

    let results: Vec<std::result::Result<Bisection, Unresolved>> = if opts.warm_start {
        let mut hi = opts.tau_hi;
        let mut known = false;
        mu_values
            .iter()
            .map(|&mu| {
                let r = solve(mu, hi, known);
                if let Ok(b) = &r {
                    // True at (mu, b.hi) implies true at larger mu.
                    hi = b.hi;
                    known = true;
                }
                r
            })
            .collect()
    } else {
        mu_values.par_iter().map(|&mu| solve(mu, opts.tau_hi, false)).collect()
    };

    let mut points = Vec::new();
    let mut unresolved = Vec::new();
    for (&mu, r) in mu_values.iter().zip(results) {
        match r {
            Ok(b) => points.push((mu, b.midpoint())),
            Err(reason) => unresolved.push((mu, reason)),
        }
    }
    Ok((points, unresolved))
}

fn require_monotone(problem: &SwitchingProblem) -> Result<()> {
    let m = problem.model();
    if m.declared_monotone() {
        Ok(())
    } else {
        Err(Error::NotMonotone(m.name().to_string()))
    }
}

/// The switching separatrix: for each `mu`, the smallest `tau` whose pulse
/// switches, located by bisection on the basin classifier.
pub fn trace_separatrix_monotone(
    problem: &SwitchingProblem,
    mu_values: &[f64],
    opts: &TraceOptions,
) -> Result<LevelCurve> {
    require_monotone(problem)?;
    let pred = |mu: f64, tau: f64| -> std::result::Result<bool, Unresolved> {
        let pulse = Pulse { mu, tau };
        if pulse.is_null() {
            return Ok(false);
        }
        match problem.classify_pulse(&pulse, DEFAULT_CLASSIFY_T_MAX).basin {
            Basin::Target => Ok(true),
            Basin::Source => Ok(false),
            Basin::Escaped | Basin::Undecided => Err(Unresolved::Undecided),
        }
    };
    let (points, unresolved) = trace_monotone(mu_values, opts, &pred)?;
    Ok(LevelCurve { alpha: f64::INFINITY, branch: Branch::Separatrix, points, tol: opts.tol, unresolved })
}

/// The branch `Re r = -alpha` (lower) or `Re r = +alpha` (upper) of the
/// level set `|r| = alpha`, by bisection on `r` itself.
pub fn trace_level_curve_monotone(
    problem: &SwitchingProblem,
    alpha: f64,
    branch: Branch,
    mu_values: &[f64],
    opts: &TraceOptions,
) -> Result<LevelCurve> {
    require_monotone(problem)?;
    if problem.lambda1().im != 0.0 {
        return Err(Error::ComplexDominant);
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} must be positive and finite")));
    }
    let level = match branch {
        Branch::Lower => -alpha,
        Branch::Upper => alpha,
        other => {
            return Err(Error::InvalidArgument(format!("level curves have no `{}` branch", other.as_str())))
        }
    };
    let pred = |mu: f64, tau: f64| -> std::result::Result<bool, Unresolved> {
        let s = problem.eval_r_retrying(&Pulse { mu, tau });
        match s.status {
            S1Status::Ok => Ok(s.r.expect("ok samples carry r").re > level),
            // Below the separatrix r is undefined: the "-inf" side.
            S1Status::NotInBasin => Ok(false),
            S1Status::Escaped | S1Status::Undecided => Err(Unresolved::Undecided),
        }
    };
    let (points, unresolved) = trace_monotone(mu_values, opts, &pred)?;
    Ok(LevelCurve { alpha, branch, points, tol: opts.tol, unresolved })
}

/// Marching-squares polylines of `field = level` on a tensor grid. `field`
/// is tau-major (`field[j * xs.len() + i]` at `(xs[i], ys[j])`); cells with
/// a non-finite corner are skipped.
pub fn contour_lines(xs: &[f64], ys: &[f64], field: &[f64], level: f64) -> Vec<Vec<(f64, f64)>> {
    let (nx, ny) = (xs.len(), ys.len());
    assert_eq!(field.len(), nx * ny, "field does not match the grid");
    let value = |i: usize, j: usize| field[j * nx + i];
    // Crossing points are keyed by the grid edge they lie on, so adjacent
    // cells produce bit-identical shared endpoints.
    #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
    enum Edge {
        // Between (i, j) and (i + 1, j).
        H(usize, usize),
        // Between (i, j) and (i, j + 1).
        V(usize, usize),
    }
    let point = |e: Edge| -> (f64, f64) {
        let (a, b, pa, pb) = match e {
            Edge::H(i, j) => (value(i, j), value(i + 1, j), (xs[i], ys[j]), (xs[i + 1], ys[j])),
            Edge::V(i, j) => (value(i, j), value(i, j + 1), (xs[i], ys[j]), (xs[i], ys[j + 1])),
        };
        let s = if a == b { 0.5 } else { ((level - a) / (b - a)).clamp(0.0, 1.0) };
        (pa.0 + s * (pb.0 - pa.0), pa.1 + s * (pb.1 - pa.1))
    };

    let mut segments: Vec<(Edge, Edge)> = Vec::new();
    for j in 0..ny.saturating_sub(1) {
        for i in 0..nx.saturating_sub(1) {
            let c = [value(i, j), value(i + 1, j), value(i + 1, j + 1), value(i, j + 1)];
            if c.iter().any(|v| !v.is_finite()) {
                continue;
            }
            let above: Vec<bool> = c.iter().map(|v| *v > level).collect();
            // Edges in cyclic order: bottom, right, top, left.
            let edges = [Edge::H(i, j), Edge::V(i + 1, j), Edge::H(i, j + 1), Edge::V(i, j)];
            let crossing: Vec<usize> = (0..4).filter(|&k| above[k] != above[(k + 1) % 4]).collect();
            match crossing.len() {
                2 => segments.push((edges[crossing[0]], edges[crossing[1]])),
                4 => {
                    // Saddle: the cell-centre average decides which corners
                    // are connected.
                    let centre_above = c.iter().sum::<f64>() / 4.0 > level;
                    if centre_above == above[0] {
                        segments.push((edges[0], edges[1]));
                        segments.push((edges[2], edges[3]));
                    } else {
                        segments.push((edges[3], edges[0]));
                        segments.push((edges[1], edges[2]));
                    }
                }
                _ => {}
            }
        }
    }

    let mut by_edge: HashMap<Edge, Vec<usize>> = HashMap::new();
    for (k, (a, b)) in segments.iter().enumerate() {
        by_edge.entry(*a).or_default().push(k);
        by_edge.entry(*b).or_default().push(k);
    }
    let mut used = vec![false; segments.len()];
    let next_from = |edge: Edge, used: &[bool]| -> Option<usize> {
        by_edge.get(&edge).and_then(|ks| ks.iter().copied().find(|&k| !used[k]))
    };
    let other = |k: usize, e: Edge| if segments[k].0 == e { segments[k].1 } else { segments[k].0 };

    // Start open chains at edges touched by one segment, then close loops.
    let mut starts: Vec<usize> = (0..segments.len())
        .filter(|&k| by_edge[&segments[k].0].len() == 1 || by_edge[&segments[k].1].len() == 1)
        .collect();
    starts.extend(0..segments.len());
    let mut lines = Vec::new();
    for k0 in starts {
        if used[k0] {
            continue;
        }
        used[k0] = true;
        let (a, b) = segments[k0];
        let (first, mut current) = if by_edge[&a].len() == 1 { (a, b) } else { (b, a) };
        let mut chain = vec![first, current];
        while let Some(k) = next_from(current, &used) {
            used[k] = true;
            current = other(k, current);
            chain.push(current);
        }
        if chain.first() != chain.last() {
            // An open chain may also extend backwards from its first edge.
            let mut back = Vec::new();
            let mut cur = first;
            while let Some(k) = next_from(cur, &used) {
                used[k] = true;
                cur = other(k, cur);
                back.push(cur);
            }
            back.reverse();
            back.extend(chain);
            chain = back;
        }
        lines.push(chain.into_iter().map(point).collect());
    }
    lines
}

/// `|r| = alpha` polylines for each alpha. Cells touching a sample without
/// a value of `r` are excluded.
pub fn extract_level_contours_grid(grid: &SweepGrid, alphas: &[f64]) -> Vec<LevelCurve> {
    let field = grid.field(|s| s.abs_r().unwrap_or(f64::NAN));
    let spacing = grid_spacing(grid);
    let mut curves = Vec::new();
    for &alpha in alphas {
        for line in contour_lines(&grid.mu, &grid.tau, &field, alpha) {
            curves.push(LevelCurve {
                alpha,
                branch: Branch::Contour,
                points: line,
                tol: spacing,
                unresolved: Vec::new(),
            });
        }
    }
    curves
}

/// The separatrix as the 0.5-contour of the switching indicator (1 for
/// switching samples, 0 for samples in the source basin, excluded
/// otherwise).
pub fn extract_separatrix_grid(grid: &SweepGrid) -> Vec<LevelCurve> {
    let field = grid.field(|s| match s.status {
        S1Status::Ok => 1.0,
        S1Status::NotInBasin => 0.0,
        _ => f64::NAN,
    });
    let spacing = grid_spacing(grid);
    contour_lines(&grid.mu, &grid.tau, &field, 0.5)
        .into_iter()
        .map(|points| LevelCurve {
            alpha: f64::INFINITY,
            branch: Branch::Separatrix,
            points,
            tol: spacing,
            unresolved: Vec::new(),
        })
        .collect()
}

fn grid_spacing(grid: &SweepGrid) -> f64 {
    let widest = |v: &[f64]| v.windows(2).map(|w| w[1] - w[0]).fold(0.0f64, f64::max);
    widest(&grid.tau)
}
