//! Regenerative a posteriori bounds for truncated stationary expectations.
//!
//! With `y = ν̃(I - B̃)^{-1}` (one transpose solve) the truncation
//! approximation and the lower bounds are inner products:
//!
//! ```text
//! π̃(x) = y(x) / (1 + y·ẽ),  π̃(z) = 1 / (1 + y·ẽ)
//! κ̲(r) = r(z) + y·r̃,       κ̲(e) = 1 + y·ẽ
//! ```
//!
//! The upper bounds split a `z`-cycle into excursions that leave `A` and are
//! brought back to `K` by the Lyapunov certificate:
//!
//! ```text
//! κ̃(r) = r(z) + h1(z) + y·(r̃ + h̃1) + (1 - β)/δ · max_{K'} (I - B̃)^{-1}(r̃ + h̃1)
//! δ    = min_{K'} (I - B̃)^{-1} p̃,   β = P(z,z) + y·p̃
//! ```
//!
//! and `κ̲(r)/κ̃(e) <= πr <= κ̃(r)/κ̲(e)`. The `h1(z)` term vanishes when `z`
//! cannot leave `A` in one step.

use std::collections::BTreeSet;

use crate::chain::{one_step_fringe, SparseRow, StateIndex, TruncationProblem};
use crate::error::{Error, Result, Stage};
use crate::models::LyapunovCertificate;
use crate::solver::{assemble_truncated_system, Method, SolveResult, Solver, SolverOptions, TruncatedSystem};

/// `δ` must exceed this multiple of the solver tolerance.
pub const DELTA_SLACK: f64 = 10.0;

/// Relative widening applied to the certified interval, in units of the
/// solver tolerance, to absorb floating-point error in the solves.
pub const MARGIN_FACTOR: f64 = 10.0;

/// `Σ_{y∉A} P(x,y) g(y)` over one row.
pub(crate) fn overshoot(
    row: &SparseRow,
    in_a: impl Fn(StateIndex) -> bool,
    g: impl Fn(StateIndex) -> f64,
) -> f64 {
    row.iter()
        .filter(|&(y, _)| !in_a(y))
        .map(|(y, p)| p * g(y))
        .sum()
}

/// Exact overshoot bound `h(x) = Σ_{y∉A} P(x,y) g(y)`.
pub fn compute_h(problem: &TruncationProblem, g: impl Fn(StateIndex) -> f64, x: StateIndex) -> f64 {
    overshoot(&problem.chain.row(x), |y| problem.in_a(y), g)
}

/// A probability vector on a finite set of states.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution {
    pub states: Vec<StateIndex>,
    pub probs: Vec<f64>,
}

impl Distribution {
    pub fn get(&self, x: StateIndex) -> f64 {
        self.states
            .binary_search(&x)
            .map(|i| self.probs[i])
            .unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// `Σ_x π(x) f(x)`.
    pub fn expect(&self, f: impl Fn(StateIndex) -> f64) -> f64 {
        self.states.iter().zip(&self.probs).map(|(&x, &p)| p * f(x)).sum()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_over(v: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| v[i]).fold(0.0, f64::max)
}

/// `π̃` from the transpose solution `y`.
pub fn pi_tilde_from(system: &TruncatedSystem, y: &[f64]) -> Distribution {
    let norm = 1.0 + y.iter().sum::<f64>();
    let z = system.z();
    let mut pairs: Vec<(StateIndex, f64)> = system
        .states()
        .iter()
        .zip(y)
        .map(|(&x, &v)| (x, v / norm))
        .collect();
    pairs.push((z, 1.0 / norm));
    pairs.sort_by_key(|&(x, _)| x);
    let (states, probs) = pairs.into_iter().unzip();
    Distribution { states, probs }
}

/// The truncation approximation `π̃` on `A` (zero off `A`).
pub fn compute_pi_tilde(solver: &Solver<'_>) -> Result<Distribution> {
    let y = solver.solve_transpose()?;
    Ok(pi_tilde_from(solver.system(), &y.x))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LowerBounds {
    /// `κ̲(r) = r(z) + ν̃(I - B̃)^{-1} r̃`.
    pub kappa_r: f64,
    /// `κ̲(e) = 1 + ν̃(I - B̃)^{-1} ẽ`.
    pub kappa_e: f64,
}

impl LowerBounds {
    /// `π̃r = κ̲(r) / κ̲(e)`.
    pub fn pi_tilde_r(&self) -> f64 {
        self.kappa_r / self.kappa_e
    }
}

pub fn lower_bounds_from(system: &TruncatedSystem, y: &[f64]) -> LowerBounds {
    LowerBounds {
        kappa_r: system.r_z + dot(y, &system.r),
        kappa_e: 1.0 + y.iter().sum::<f64>(),
    }
}

pub fn compute_lower_bounds(solver: &Solver<'_>) -> Result<LowerBounds> {
    let y = solver.solve_transpose()?;
    Ok(lower_bounds_from(solver.system(), &y.x))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeltaBeta {
    /// `min_{x∈K'} P_x(hit z before leaving A)`; 1 when `K = {z}`.
    pub delta: f64,
    /// `P_z(τ(z) < T_1)`.
    pub beta: f64,
}

impl DeltaBeta {
    /// `(1 - β) / δ`, the excursion amplification factor.
    pub fn factor(&self) -> f64 {
        (1.0 - self.beta) / self.delta
    }
}

/// `δ` and `β` from `u = (I - B̃)^{-1} p̃` and `y`. Both are clipped to
/// `[0, 1]`; clipping only enlarges `(1 - β)/δ`.
pub fn delta_beta_from(system: &TruncatedSystem, u: &[f64], y: &[f64], tol: f64) -> Result<DeltaBeta> {
    let beta = (system.p_zz + dot(y, &system.p)).clamp(0.0, 1.0);
    let k = system.k_prime();
    let delta = if k.is_empty() {
        1.0
    } else {
        k.iter().map(|&i| u[i]).fold(f64::INFINITY, f64::min).min(1.0)
    };
    let threshold = DELTA_SLACK * tol;
    if !(delta > threshold) {
        return Err(Error::DegenerateDelta { delta, threshold });
    }
    Ok(DeltaBeta { delta, beta })
}

pub fn compute_delta_beta(solver: &Solver<'_>) -> Result<DeltaBeta> {
    let system = solver.system();
    let u = solver.solve(&system.p)?;
    let y = solver.solve_transpose()?;
    delta_beta_from(system, &u.x, &y.x, solver.options().tol)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpperBounds {
    pub kappa_r: f64,
    pub kappa_e: f64,
    /// `κ̃(r) - κ̲(r)`.
    pub delta1: f64,
    /// `κ̃(e) - κ̲(e)`.
    pub delta2: f64,
    /// `max_{K'} (I - B̃)^{-1}(r̃ + h̃1)`.
    pub norm_r: f64,
    /// `max_{K'} (I - B̃)^{-1}(ẽ + h̃2)`.
    pub norm_e: f64,
}

/// Upper bounds from `y`, `w1 = (I - B̃)^{-1}(r̃ + h̃1)` and
/// `w2 = (I - B̃)^{-1}(ẽ + h̃2)`.
pub fn upper_bounds_from(
    system: &TruncatedSystem,
    y: &[f64],
    w1: &[f64],
    w2: &[f64],
    db: DeltaBeta,
) -> Result<UpperBounds> {
    if !system.has_certificate() && !system.is_closed() {
        return Err(Error::MissingCertificate);
    }
    let lower = lower_bounds_from(system, y);
    let f = db.factor();
    let norm_r = max_over(w1, system.k_prime());
    let norm_e = max_over(w2, system.k_prime());
    let delta1 = system.h1_z + dot(y, &system.h1) + f * norm_r;
    let delta2 = system.h2_z + dot(y, &system.h2) + f * norm_e;
    Ok(UpperBounds {
        kappa_r: lower.kappa_r + delta1,
        kappa_e: lower.kappa_e + delta2,
        delta1,
        delta2,
        norm_r,
        norm_e,
    })
}

fn plus(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn plus_one(a: &[f64]) -> Vec<f64> {
    a.iter().map(|x| x + 1.0).collect()
}

pub fn compute_upper_bounds(solver: &Solver<'_>, db: DeltaBeta) -> Result<UpperBounds> {
    let s = solver.system();
    let y = solver.solve_transpose()?;
    let b1 = plus(&s.r, &s.h1);
    let b2 = plus_one(&s.h2);
    let w = solver.solve_many(&[&b1, &b2])?;
    upper_bounds_from(s, &y.x, &w[0].x, &w[1].x, db)
}

/// `(κ̲(r)Δ2 + κ̲(e)Δ1 + Δ1Δ2) / (κ̲(e)κ̃(e))`, a bound on `|πr - π̃r|`.
pub fn compute_error_bound(
    kappa_lower_r: f64,
    kappa_lower_e: f64,
    kappa_upper_e: f64,
    delta1: f64,
    delta2: f64,
) -> f64 {
    (kappa_lower_r * delta2 + kappa_lower_e * delta1 + delta1 * delta2) / (kappa_lower_e * kappa_upper_e)
}

/// Bound on the `r`-weighted total variation distance `sup_{|w|<=r} |πw - π̃w|`.
pub fn compute_tv_bound(error_bound: f64) -> f64 {
    2.0 * error_bound
}

/// Result of [`run_pipeline`].
#[derive(Clone, Debug)]
pub struct BoundReport {
    pub pi_tilde_r: f64,
    pub kappa_lower_r: f64,
    pub kappa_lower_e: f64,
    pub kappa_upper_r: f64,
    pub kappa_upper_e: f64,
    pub delta: f64,
    pub beta: f64,
    pub delta1: f64,
    pub delta2: f64,
    /// `κ̲(r) / κ̃(e)`.
    pub lower: f64,
    /// `κ̃(r) / κ̲(e)`.
    pub upper: f64,
    /// `[lower, upper]` widened by `numerical_margin` (relative).
    pub certified_lower: f64,
    pub certified_upper: f64,
    pub numerical_margin: f64,
    pub error_bound: f64,
    pub tv_bound: f64,
    pub pi_tilde: Distribution,
    pub max_scaled_residual: f64,
    pub linear_solves: usize,
    pub method: Method,
    /// `|A'|`.
    pub dim: usize,
}

impl BoundReport {
    pub fn interval(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    pub fn certified_interval(&self) -> (f64, f64) {
        (self.certified_lower, self.certified_upper)
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Assembles the truncated system and computes every bound with one
/// transpose solve and one batched column solve of `r̃ + h̃1`, `ẽ + h̃2`, `p̃`.
pub fn run_pipeline(
    problem: &TruncationProblem,
    certificate: Option<&LyapunovCertificate>,
    options: &SolverOptions,
) -> Result<BoundReport> {
    let system =
        assemble_truncated_system(problem, certificate, options).map_err(|e| e.at(Stage::Assemble))?;
    if !system.has_certificate() && !system.is_closed() {
        return Err(Error::MissingCertificate.at(Stage::Assemble));
    }
    let solver = Solver::new(&system, *options).map_err(|e| e.at(Stage::Assemble))?;
    report_from_solver(&solver)
}

pub fn report_from_solver(solver: &Solver<'_>) -> Result<BoundReport> {
    let system = solver.system();
    let tol = solver.options().tol;

    let y = solver.solve_transpose().map_err(|e| e.at(Stage::TransposeSolve))?;
    let b1 = plus(&system.r, &system.h1);
    let b2 = plus_one(&system.h2);
    let cols = solver
        .solve_many(&[&b1, &b2, &system.p])
        .map_err(|e| e.at(Stage::ColumnSolve))?;
    let [w1, w2, u]: [SolveResult; 3] = cols.try_into().expect("three columns");

    let lower_b = lower_bounds_from(system, &y.x);
    for v in [lower_b.kappa_r, lower_b.kappa_e] {
        if !v.is_finite() {
            return Err(Error::NonFinite("lower bounds").at(Stage::LowerBounds));
        }
    }
    let db = delta_beta_from(system, &u.x, &y.x, tol).map_err(|e| e.at(Stage::DeltaBeta))?;
    let upper_b = upper_bounds_from(system, &y.x, &w1.x, &w2.x, db).map_err(|e| e.at(Stage::UpperBounds))?;
    if !upper_b.kappa_r.is_finite() || !upper_b.kappa_e.is_finite() {
        return Err(Error::NonFinite("upper bounds").at(Stage::UpperBounds));
    }

    let lower = lower_b.kappa_r / upper_b.kappa_e;
    let upper = upper_b.kappa_r / lower_b.kappa_e;
    let error_bound = compute_error_bound(
        lower_b.kappa_r,
        lower_b.kappa_e,
        upper_b.kappa_e,
        upper_b.delta1,
        upper_b.delta2,
    );
    let margin = MARGIN_FACTOR * tol;
    let max_scaled_residual = [&y, &w1, &w2, &u]
        .iter()
        .map(|s| s.scaled_residual)
        .fold(0.0, f64::max);

    Ok(BoundReport {
        pi_tilde_r: lower_b.pi_tilde_r(),
        kappa_lower_r: lower_b.kappa_r,
        kappa_lower_e: lower_b.kappa_e,
        kappa_upper_r: upper_b.kappa_r,
        kappa_upper_e: upper_b.kappa_e,
        delta: db.delta,
        beta: db.beta,
        delta1: upper_b.delta1,
        delta2: upper_b.delta2,
        lower,
        upper,
        certified_lower: lower * (1.0 - margin),
        certified_upper: upper * (1.0 + margin),
        numerical_margin: margin,
        error_bound,
        tv_bound: compute_tv_bound(error_bound),
        pi_tilde: pi_tilde_from(system, &y.x),
        max_scaled_residual,
        linear_solves: solver.solves_performed(),
        method: solver.method(),
        dim: system.dim(),
    })
}

/// Which inequality of the certificate a drift check concerns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DriftKind {
    /// `Σ_{y∉K} P(x,y) g1(y) <= g1(x) - r(x)`.
    G1,
    /// `Σ_{y∉K} P(x,y) g2(y) <= g2(x) - 1`.
    G2,
    /// `Σ_{y∉A} P(x,y) g1(y) <= h1(x)`.
    H1,
    /// `Σ_{y∉A} P(x,y) g2(y) <= h2(x)`.
    H2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriftViolation {
    pub state: StateIndex,
    pub kind: DriftKind,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, Default)]
pub struct DriftReport {
    pub checked_states: Vec<StateIndex>,
    /// Window states inside `K`, where the drift conditions do not apply.
    pub excluded: Vec<StateIndex>,
    pub violations: Vec<DriftViolation>,
    /// Smallest `rhs - lhs` seen over all checks.
    pub min_slack: f64,
    /// Largest `rhs - lhs` seen over all checks.
    pub max_slack: f64,
}

impl DriftReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// `(A ∪ fringe(A)) \ K`.
pub fn default_drift_window(problem: &TruncationProblem) -> Vec<StateIndex> {
    let mut set: BTreeSet<StateIndex> = problem.a().iter().copied().collect();
    set.extend(one_step_fringe(problem.chain.as_ref(), problem.a()));
    set.into_iter().filter(|&x| !problem.in_k(x)).collect()
}

/// Checks the certificate's drift inequalities on `window` (states of `K`
/// are skipped) and, when `h` overrides are present, checks them on `A`.
///
/// Passing is evidence on a finite window only; the inequalities must hold on
/// all of `K^c` for the bounds to be valid.
pub fn verify_lyapunov_drift(
    problem: &TruncationProblem,
    certificate: &LyapunovCertificate,
    window: &[StateIndex],
) -> DriftReport {
    let mut report = DriftReport {
        min_slack: f64::INFINITY,
        max_slack: f64::NEG_INFINITY,
        ..Default::default()
    };
    let rel = 1e-12;
    let record = |report: &mut DriftReport, state, kind, lhs: f64, rhs: f64| {
        let slack = rhs - lhs;
        report.min_slack = report.min_slack.min(slack);
        report.max_slack = report.max_slack.max(slack);
        if !(lhs <= rhs + rel * lhs.abs().max(rhs.abs())) {
            report.violations.push(DriftViolation { state, kind, lhs, rhs });
        }
    };
    for &x in window {
        if problem.in_k(x) {
            report.excluded.push(x);
            continue;
        }
        let row = problem.chain.row(x);
        let outside_k = |y: StateIndex| problem.in_k(y);
        let lhs1 = overshoot(&row, outside_k, |y| certificate.g1(y));
        let lhs2 = overshoot(&row, outside_k, |y| certificate.g2(y));
        record(&mut report, x, DriftKind::G1, lhs1, certificate.g1(x) - problem.reward.eval(x));
        record(&mut report, x, DriftKind::G2, lhs2, certificate.g2(x) - 1.0);
        report.checked_states.push(x);
    }
    if certificate.has_overrides() {
        for &x in problem.a() {
            let row = problem.chain.row(x);
            let in_a = |y: StateIndex| problem.in_a(y);
            if let Some(h1) = certificate.h1_override() {
                let lhs = overshoot(&row, in_a, |y| certificate.g1(y));
                record(&mut report, x, DriftKind::H1, lhs, h1(x));
            }
            if let Some(h2) = certificate.h2_override() {
                let lhs = overshoot(&row, in_a, |y| certificate.g2(y));
                record(&mut report, x, DriftKind::H2, lhs, h2(x));
            }
        }
    }
    report
}
