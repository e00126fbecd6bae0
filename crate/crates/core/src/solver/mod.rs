//! Assembly and solution of the truncated substochastic systems
//! `(I - B̃) x = b` and `yᵀ (I - B̃) = ν̃ᵀ` over `A' = A \ {z}`.

mod elimination;
mod iterative;

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::bounds::overshoot;
use crate::chain::{ChainModel, StateIndex, TruncationProblem};
use crate::error::{Error, Result};
use crate::models::LyapunovCertificate;

use elimination::SkylineLu;
pub use iterative::LowerIterate;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Method {
    /// Direct elimination when the factor fits the memory budget, fixed-point
    /// iteration otherwise.
    #[default]
    Auto,
    Direct,
    FixedPoint,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Bound on `‖b - (I - B̃)x‖∞ / max(1, ‖b‖∞, ‖x‖∞)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Maximum number of stored factor entries for direct elimination.
    pub memory_budget: usize,
    /// Rows of `B̃` are cached during assembly while their total number of
    /// entries stays below this limit, and regenerated from the chain
    /// otherwise.
    pub row_cache_limit: usize,
    /// Tolerance on `Σ_y B̃(x,y) + p̃(x) + q̃(x) = 1` during assembly.
    pub row_sum_tol: f64,
    pub method: Method,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-12,
            max_iter: 1_000_000,
            memory_budget: 100_000_000,
            row_cache_limit: 20_000_000,
            row_sum_tol: 1e-10,
            method: Method::Auto,
        }
    }
}

enum IndexLookup {
    Range { first: usize, len: usize },
    Map(HashMap<StateIndex, usize>),
}

impl IndexLookup {
    fn new(states: &[StateIndex]) -> Self {
        match (states.first(), states.last()) {
            (Some(f), Some(l)) if l.0 - f.0 + 1 == states.len() => IndexLookup::Range {
                first: f.0,
                len: states.len(),
            },
            (None, _) => IndexLookup::Range { first: 0, len: 0 },
            _ => IndexLookup::Map(states.iter().enumerate().map(|(i, &s)| (s, i)).collect()),
        }
    }

    #[inline]
    fn get(&self, x: StateIndex) -> Option<usize> {
        match self {
            IndexLookup::Range { first, len } => {
                let i = x.0.checked_sub(*first)?;
                (i < *len).then_some(i)
            }
            IndexLookup::Map(m) => m.get(&x).copied(),
        }
    }
}

enum RowStore {
    Cached {
        offsets: Vec<usize>,
        cols: Vec<u32>,
        vals: Vec<f64>,
    },
    OnTheFly,
}

/// `B̃`, `ν̃`, `p̃`, `q̃`, `r̃`, `h̃1`, `h̃2` over `A'`, plus the data at `z`.
///
/// Vectors are indexed by position in [`TruncatedSystem::states`].
pub struct TruncatedSystem {
    chain: Arc<dyn ChainModel>,
    states: Vec<StateIndex>,
    lookup: IndexLookup,
    rows: RowStore,
    nnz: usize,
    z: StateIndex,
    k_prime: Vec<usize>,
    /// `ν̃(x) = P(z, x)`.
    pub nu: Vec<f64>,
    /// `p̃(x) = P(x, z)`.
    pub p: Vec<f64>,
    /// `q̃(x) = Σ_{y∉A} P(x, y)`.
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub r_z: f64,
    pub p_zz: f64,
    /// `Σ_{y∉A} P(z, y)`.
    pub q_z: f64,
    pub h1_z: f64,
    pub h2_z: f64,
    has_certificate: bool,
}

impl TruncatedSystem {
    pub fn dim(&self) -> usize {
        self.states.len()
    }

    /// `A'` in increasing order.
    pub fn states(&self) -> &[StateIndex] {
        &self.states
    }

    pub fn state(&self, i: usize) -> StateIndex {
        self.states[i]
    }

    pub fn index_of(&self, x: StateIndex) -> Option<usize> {
        self.lookup.get(x)
    }

    pub fn z(&self) -> StateIndex {
        self.z
    }

    /// Positions of `K' = K \ {z}` in `A'`.
    pub fn k_prime(&self) -> &[usize] {
        &self.k_prime
    }

    pub fn nnz(&self) -> usize {
        self.nnz
    }

    pub fn rows_cached(&self) -> bool {
        matches!(self.rows, RowStore::Cached { .. })
    }

    pub fn has_certificate(&self) -> bool {
        self.has_certificate
    }

    /// True when no mass leaves `A` in one step.
    pub fn is_closed(&self) -> bool {
        self.q_z == 0.0 && self.q.iter().all(|&v| v == 0.0)
    }

    /// Row `i` of `B̃` as `(position, probability)` pairs.
    pub fn row_into(&self, i: usize, buf: &mut Vec<(usize, f64)>) {
        buf.clear();
        match &self.rows {
            RowStore::Cached {
                offsets,
                cols,
                vals,
            } => {
                let (s, e) = (offsets[i], offsets[i + 1]);
                buf.extend(cols[s..e].iter().zip(&vals[s..e]).map(|(&c, &v)| (c as usize, v)));
            }
            RowStore::OnTheFly => {
                for (y, p) in self.chain.row(self.states[i]).iter() {
                    if let Some(j) = self.lookup.get(y) {
                        buf.push((j, p));
                    }
                }
            }
        }
    }

    /// `p̃ + q̃`, the one-step mass leaving `A'`.
    pub fn exit_mass(&self) -> Vec<f64> {
        self.p.iter().zip(&self.q).map(|(a, b)| a + b).collect()
    }

    /// `max_i |b_i - ((I - B̃)x)_i|` with the diagonal taken from the exit
    /// mass: `((I - B̃)x)_i = e_i x_i + Σ_{j≠i} B̃_ij (x_i - x_j)`.
    pub fn residual(&self, x: &[f64], b: &[f64]) -> f64 {
        let mut row = Vec::new();
        let mut worst = 0.0f64;
        for i in 0..self.dim() {
            self.row_into(i, &mut row);
            let mut mx = (self.p[i] + self.q[i]) * x[i];
            for &(j, p) in &row {
                if j != i {
                    mx += p * (x[i] - x[j]);
                }
            }
            let d = (b[i] - mx).abs();
            if !(d <= worst) {
                worst = d;
            }
        }
        worst
    }

    /// `max_i |c_i - (yᵀ(I - B̃))_i|`.
    pub fn residual_transpose(&self, y: &[f64], c: &[f64]) -> f64 {
        let n = self.dim();
        let mut acc: Vec<f64> = (0..n).map(|i| y[i] * (self.p[i] + self.q[i])).collect();
        let mut row = Vec::new();
        for i in 0..n {
            self.row_into(i, &mut row);
            for &(j, p) in &row {
                if j != i {
                    acc[i] += y[i] * p;
                    acc[j] -= y[i] * p;
                }
            }
        }
        acc.iter()
            .zip(c)
            .map(|(a, c)| (c - a).abs())
            .fold(0.0, |m: f64, d| if d > m || d.is_nan() { d } else { m })
    }
}

impl fmt::Debug for TruncatedSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TruncatedSystem")
            .field("dim", &self.dim())
            .field("nnz", &self.nnz)
            .field("z", &self.z)
            .field("|K'|", &self.k_prime.len())
            .field("rows_cached", &self.rows_cached())
            .finish()
    }
}

/// Builds the truncated system. Without a certificate `h̃1 = h̃2 = 0`, which
/// is sufficient for `π̃` and the lower bounds; upper bounds then require a
/// closed truncation set.
pub fn assemble_truncated_system(
    problem: &TruncationProblem,
    certificate: Option<&LyapunovCertificate>,
    options: &SolverOptions,
) -> Result<TruncatedSystem> {
    let z = problem.z();
    let states: Vec<StateIndex> = problem.a().iter().copied().filter(|&x| x != z).collect();
    let lookup = IndexLookup::new(&states);
    let n = states.len();
    let chain = Arc::clone(&problem.chain);

    let mut nu = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut h1 = vec![0.0; n];
    let mut h2 = vec![0.0; n];
    let r: Vec<f64> = states.iter().map(|&x| problem.reward.eval(x)).collect();

    let h_at = |x: StateIndex, row: &crate::chain::SparseRow| -> Result<(f64, f64)> {
        let Some(cert) = certificate else {
            return Ok((0.0, 0.0));
        };
        let in_a = |y: StateIndex| problem.in_a(y);
        let h1 = match cert.h1_override() {
            Some(h) => h(x),
            None => overshoot(row, in_a, |y| cert.g1(y)),
        };
        let h2 = match cert.h2_override() {
            Some(h) => h(x),
            None => overshoot(row, in_a, |y| cert.g2(y)),
        };
        for (which, v) in [("h1", h1), ("h2", h2)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::NegativeCertificate {
                    which,
                    state: x,
                    value: v,
                });
            }
        }
        Ok((h1, h2))
    };

    // Row of z.
    let z_row = chain.row(z);
    check_row_sum(z, z_row.sum(), options.row_sum_tol)?;
    let mut p_zz = 0.0;
    let mut q_z = 0.0;
    for (y, pr) in z_row.iter() {
        if y == z {
            p_zz += pr;
        } else if let Some(j) = lookup.get(y) {
            nu[j] += pr;
        } else if !problem.in_a(y) {
            q_z += pr;
        }
    }
    let (h1_z, h2_z) = h_at(z, &z_row)?;

    let mut offsets = Vec::with_capacity(n + 1);
    offsets.push(0);
    let mut cols: Vec<u32> = Vec::new();
    let mut vals: Vec<f64> = Vec::new();
    let mut caching = true;
    let mut nnz = 0usize;
    for (i, &x) in states.iter().enumerate() {
        let row = chain.row(x);
        let mut b_sum = 0.0;
        for (y, pr) in row.iter() {
            if pr < 0.0 {
                return Err(Error::InvalidProblem(format!("negative transition {x} -> {y}")));
            }
            if y == z {
                p[i] += pr;
            } else if let Some(j) = lookup.get(y) {
                b_sum += pr;
                nnz += 1;
                if caching {
                    cols.push(j as u32);
                    vals.push(pr);
                }
            } else {
                q[i] += pr;
            }
        }
        check_row_sum(x, b_sum + p[i] + q[i], options.row_sum_tol)?;
        let (a1, a2) = h_at(x, &row)?;
        h1[i] = a1;
        h2[i] = a2;
        if caching {
            offsets.push(cols.len());
            if cols.len() > options.row_cache_limit {
                caching = false;
                offsets = Vec::new();
                cols = Vec::new();
                vals = Vec::new();
            }
        }
    }
    let rows = if caching {
        RowStore::Cached {
            offsets,
            cols,
            vals,
        }
    } else {
        RowStore::OnTheFly
    };
    let k_prime = problem
        .k()
        .iter()
        .filter(|&&x| x != z)
        .map(|&x| lookup.get(x).expect("K is a subset of A"))
        .collect();

    Ok(TruncatedSystem {
        chain,
        states,
        lookup,
        rows,
        nnz,
        z,
        k_prime,
        nu,
        p,
        q,
        r,
        h1,
        h2,
        r_z: problem.reward.eval(z),
        p_zz,
        q_z,
        h1_z,
        h2_z,
        has_certificate: certificate.is_some(),
    })
}

fn check_row_sum(x: StateIndex, sum: f64, tol: f64) -> Result<()> {
    if (sum - 1.0).abs() > tol || !sum.is_finite() {
        return Err(Error::RowSum { state: x, sum, tol });
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub x: Vec<f64>,
    /// Absolute max-norm residual.
    pub residual_norm: f64,
    /// `residual_norm / max(1, ‖b‖∞, ‖x‖∞)`, the quantity compared to `tol`.
    pub scaled_residual: f64,
    /// Refinement steps for the direct method, sweeps for fixed-point.
    pub iterations: usize,
}

enum Backend {
    Direct(SkylineLu),
    FixedPoint,
}

/// A truncated system prepared for repeated solves.
pub struct Solver<'a> {
    system: &'a TruncatedSystem,
    options: SolverOptions,
    backend: Backend,
    solves: AtomicUsize,
}

const MAX_REFINEMENT: usize = 3;

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn check_finite(v: &[f64], what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

impl<'a> Solver<'a> {
    pub fn new(system: &'a TruncatedSystem, options: SolverOptions) -> Result<Self> {
        if !(options.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tol must be positive, got {}", options.tol)));
        }
        let backend = match options.method {
            Method::FixedPoint => Backend::FixedPoint,
            Method::Direct => match SkylineLu::factor(system, options.memory_budget)? {
                Some(lu) => Backend::Direct(lu),
                None => {
                    return Err(Error::InvalidParameter(format!(
                        "factor exceeds memory budget of {} entries",
                        options.memory_budget
                    )))
                }
            },
            Method::Auto => match SkylineLu::factor(system, options.memory_budget)? {
                Some(lu) => Backend::Direct(lu),
                None => Backend::FixedPoint,
            },
        };
        Ok(Solver {
            system,
            options,
            backend,
            solves: AtomicUsize::new(0),
        })
    }

    pub fn system(&self) -> &'a TruncatedSystem {
        self.system
    }

    pub fn options(&self) -> &SolverOptions {
        &self.options
    }

    pub fn method(&self) -> Method {
        match self.backend {
            Backend::Direct(_) => Method::Direct,
            Backend::FixedPoint => Method::FixedPoint,
        }
    }

    /// Number of factor entries held in memory (zero for fixed-point).
    pub fn stored_entries(&self) -> usize {
        match &self.backend {
            Backend::Direct(lu) => lu.stored_entries(),
            Backend::FixedPoint => 0,
        }
    }

    pub fn stores_lower_factor(&self) -> bool {
        matches!(&self.backend, Backend::Direct(lu) if lu.stores_lower())
    }

    /// Right-hand sides solved so far (each column of a batch counts once).
    pub fn solves_performed(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    pub fn solve(&self, b: &[f64]) -> Result<SolveResult> {
        Ok(self.solve_many(&[b])?.pop().expect("one column"))
    }

    /// Solves `(I - B̃) x = b` for several right-hand sides with one pass over
    /// the factor.
    pub fn solve_many(&self, rhs: &[&[f64]]) -> Result<Vec<SolveResult>> {
        let n = self.system.dim();
        for b in rhs {
            if b.len() != n {
                return Err(Error::InvalidParameter(format!(
                    "right-hand side has length {}, expected {n}",
                    b.len()
                )));
            }
            check_finite(b, "right-hand side")?;
        }
        self.solves.fetch_add(rhs.len(), Ordering::Relaxed);
        match &self.backend {
            Backend::Direct(lu) => {
                let mut xs: Vec<Vec<f64>> = rhs.iter().map(|b| b.to_vec()).collect();
                lu.solve_in_place(self.system, &mut xs);
                let mut steps = vec![0usize; rhs.len()];
                for _ in 0..MAX_REFINEMENT {
                    let pending: Vec<usize> = (0..rhs.len())
                        .filter(|&c| self.scaled(rhs[c], &xs[c]).1 > self.options.tol)
                        .collect();
                    if pending.is_empty() {
                        break;
                    }
                    let mut corr: Vec<Vec<f64>> = pending
                        .iter()
                        .map(|&c| self.residual_vector(&xs[c], rhs[c]))
                        .collect();
                    lu.solve_in_place(self.system, &mut corr);
                    for (&c, d) in pending.iter().zip(corr) {
                        for (xi, di) in xs[c].iter_mut().zip(d) {
                            *xi += di;
                        }
                        steps[c] += 1;
                    }
                }
                xs.into_iter()
                    .zip(rhs)
                    .zip(steps)
                    .map(|((x, b), it)| self.finish(x, b, it, false))
                    .collect()
            }
            Backend::FixedPoint => rhs
                .iter()
                .map(|b| {
                    let (it, _) = iterative::iterate(
                        self.system,
                        b,
                        false,
                        self.options.tol,
                        self.options.max_iter,
                        |_, _| {},
                    );
                    self.finish(it.x, b, it.iterations, false)
                })
                .collect(),
        }
    }

    /// Solves `yᵀ (I - B̃) = ν̃ᵀ`.
    pub fn solve_transpose(&self) -> Result<SolveResult> {
        let nu = self.system.nu.clone();
        self.solve_transpose_rhs(&nu)
    }

    /// Solves `yᵀ (I - B̃) = cᵀ`.
    pub fn solve_transpose_rhs(&self, c: &[f64]) -> Result<SolveResult> {
        if c.len() != self.system.dim() {
            return Err(Error::InvalidParameter("transpose right-hand side has wrong length".into()));
        }
        check_finite(c, "right-hand side")?;
        self.solves.fetch_add(1, Ordering::Relaxed);
        match &self.backend {
            Backend::Direct(lu) => {
                let mut y = c.to_vec();
                lu.solve_transpose_in_place(self.system, &mut y);
                let mut steps = 0;
                while steps < MAX_REFINEMENT && self.scaled_t(c, &y).1 > self.options.tol {
                    let mut d = self.residual_vector_t(&y, c);
                    lu.solve_transpose_in_place(self.system, &mut d);
                    for (yi, di) in y.iter_mut().zip(d) {
                        *yi += di;
                    }
                    steps += 1;
                }
                self.finish(y, c, steps, true)
            }
            Backend::FixedPoint => {
                let (it, _) = iterative::iterate(
                    self.system,
                    c,
                    true,
                    self.options.tol,
                    self.options.max_iter,
                    |_, _| {},
                );
                self.finish(it.x, c, it.iterations, true)
            }
        }
    }

    fn scaled(&self, b: &[f64], x: &[f64]) -> (f64, f64) {
        let res = self.system.residual(x, b);
        (res, res / 1f64.max(max_abs(b)).max(max_abs(x)))
    }

    fn scaled_t(&self, c: &[f64], y: &[f64]) -> (f64, f64) {
        let res = self.system.residual_transpose(y, c);
        (res, res / 1f64.max(max_abs(c)).max(max_abs(y)))
    }

    fn residual_vector(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        let mut ax = vec![0.0; x.len()];
        let mut row = Vec::new();
        for i in 0..x.len() {
            self.system.row_into(i, &mut row);
            let mut mx = (self.system.p[i] + self.system.q[i]) * x[i];
            for &(j, p) in &row {
                if j != i {
                    mx += p * (x[i] - x[j]);
                }
            }
            ax[i] = b[i] - mx;
        }
        ax
    }

    fn residual_vector_t(&self, y: &[f64], c: &[f64]) -> Vec<f64> {
        let sys = self.system;
        let n = sys.dim();
        let mut acc: Vec<f64> = (0..n).map(|i| y[i] * (sys.p[i] + sys.q[i])).collect();
        let mut row = Vec::new();
        for i in 0..n {
            sys.row_into(i, &mut row);
            for &(j, p) in &row {
                if j != i {
                    acc[i] += y[i] * p;
                    acc[j] -= y[i] * p;
                }
            }
        }
        c.iter().zip(acc).map(|(c, a)| c - a).collect()
    }

    fn finish(&self, x: Vec<f64>, b: &[f64], iterations: usize, transpose: bool) -> Result<SolveResult> {
        check_finite(&x, "solution")?;
        let (residual_norm, scaled_residual) = if transpose {
            self.scaled_t(b, &x)
        } else {
            self.scaled(b, &x)
        };
        if !(scaled_residual <= self.options.tol) {
            return Err(Error::NonConvergence {
                iterations,
                residual: scaled_residual,
            });
        }
        Ok(SolveResult {
            x,
            residual_norm,
            scaled_residual,
            iterations,
        })
    }
}

/// Solves `(I - B̃) x = b` with default options and the given tolerance.
pub fn solve(system: &TruncatedSystem, b: &[f64], tol: f64) -> Result<SolveResult> {
    let options = SolverOptions {
        tol,
        ..SolverOptions::default()
    };
    Solver::new(system, options)?.solve(b)
}

/// Solves `yᵀ (I - B̃) = ν̃ᵀ` with default options and the given tolerance.
pub fn solve_transpose(system: &TruncatedSystem, tol: f64) -> Result<SolveResult> {
    let options = SolverOptions {
        tol,
        ..SolverOptions::default()
    };
    Solver::new(system, options)?.solve_transpose()
}

/// Runs `iterations` steps of `x <- B̃x + b` from zero. For `b >= 0` the
/// result never exceeds `(I - B̃)^{-1} b`, whatever the iteration count.
pub fn fixed_point_lower(system: &TruncatedSystem, b: &[f64], iterations: usize) -> LowerIterate {
    iterative::iterate(system, b, false, 0.0, iterations, |_, _| {}).0
}

/// As [`fixed_point_lower`], calling `check(previous, next)` after each step.
pub fn fixed_point_lower_with(
    system: &TruncatedSystem,
    b: &[f64],
    iterations: usize,
    check: impl FnMut(&[f64], &[f64]),
) -> LowerIterate {
    iterative::iterate(system, b, false, 0.0, iterations, check).0
}
