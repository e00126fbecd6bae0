//! Benchmark chains and their Lyapunov certificates.
//!
//! * [`Gm1Chain`]: embedded G/M/1 queue-length chain with uniform(0, c)
//!   interarrival times and unit-rate exponential service.
//! * [`RandomWalkChain`]: reflected walk on `{0, 1, ...}`, down-probability 2/3.
//! * [`load_chain_from_file`]: finite chains in the `states N` / `src dst prob`
//!   text format.

use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::chain::{ChainModel, FiniteChain, SparseRow, StateIndex};
use crate::error::{Error, Result};

/// Row-sum tolerance applied to chains loaded from files.
pub const FILE_ROW_SUM_TOL: f64 = 1e-9;

/// Interarrival support endpoint used in the G/M/1 benchmark.
pub const GM1_DEFAULT_C: f64 = 2.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gm1Params {
    /// Interarrival times are uniform on `(0, c)`.
    pub c: f64,
    /// Number of coefficients returned by [`gm1_beta_coeffs`].
    pub max_coeff: usize,
}

impl Default for Gm1Params {
    fn default() -> Self {
        Gm1Params {
            c: GM1_DEFAULT_C,
            max_coeff: 256,
        }
    }
}

/// Poisson(c) probabilities `p_0, p_1, ...`, evaluated in log space and
/// continued until at least `min_len` terms are produced and the terms have
/// underflowed past the mode.
fn poisson_pmf(c: f64, min_len: usize) -> Result<Vec<f64>> {
    let ln_c = c.ln();
    let mut ln_fact = 0.0f64;
    let mut out = Vec::with_capacity(min_len.max(64));
    let mut k = 0usize;
    loop {
        if k > 0 {
            ln_fact += (k as f64).ln();
        }
        let ln_p = -c + k as f64 * ln_c - ln_fact;
        let p = ln_p.exp();
        if !p.is_finite() {
            return Err(Error::NonFinite("Poisson probability"));
        }
        out.push(p);
        k += 1;
        if k >= min_len && p == 0.0 && (k as f64) > c {
            break;
        }
    }
    Ok(out)
}

/// Tail masses `Σ_{i>n} β_i` for every `n`, summed from the far end so that
/// tiny tails keep full relative precision.
fn upper_tails(values: &[f64]) -> Vec<f64> {
    let mut tails = vec![0.0; values.len()];
    let mut acc = 0.0;
    for i in (0..values.len()).rev() {
        tails[i] = acc;
        acc += values[i];
    }
    tails
}

/// `β_i = ∫_0^c e^{-t} t^i / (c i!) dt = P(Poisson(c) > i) / c`.
fn beta_table(c: f64, min_len: usize) -> Result<Vec<f64>> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::InvalidParameter(format!("G/M/1 c must be positive, got {c}")));
    }
    let pmf = poisson_pmf(c, min_len + 1)?;
    let beta: Vec<f64> = upper_tails(&pmf).into_iter().map(|q| q / c).collect();
    let mut partial = 0.0;
    for &b in &beta {
        if !b.is_finite() {
            return Err(Error::NonFinite("beta coefficient"));
        }
        partial += b;
        if partial > 1.0 + 1e-12 {
            return Err(Error::NonFinite("beta partial sum exceeds one"));
        }
    }
    Ok(beta)
}

/// `β_0, ..., β_{max_coeff-1}` for the G/M/1 benchmark.
pub fn gm1_beta_coeffs(params: Gm1Params) -> Result<Vec<f64>> {
    if params.max_coeff == 0 {
        return Err(Error::InvalidParameter("max_coeff must be at least 1".into()));
    }
    let mut beta = beta_table(params.c, params.max_coeff)?;
    beta.truncate(params.max_coeff);
    Ok(beta)
}

/// Embedded G/M/1 chain: from `x`, the next arrival sees `x + 1 - S` customers
/// (floored at zero) where `S` counts services during one interarrival time.
///
/// `P(x, y) = β_{x+1-y}` for `1 <= y <= x+1` and `P(x, 0) = Σ_{i>x} β_i`.
/// Coefficients that underflow to zero are dropped, so rows have at most a few
/// hundred entries regardless of `x`.
#[derive(Clone)]
pub struct Gm1Chain {
    params: Gm1Params,
    beta: Vec<f64>,
    tails: Vec<f64>,
    description: String,
}

impl Gm1Chain {
    pub fn new(params: Gm1Params) -> Result<Self> {
        let mut beta = beta_table(params.c, params.max_coeff.max(1))?;
        while beta.len() > 1 && *beta.last().unwrap() == 0.0 {
            beta.pop();
        }
        let tails = upper_tails(&beta);
        Ok(Gm1Chain {
            params,
            beta,
            tails,
            description: format!("G/M/1 embedded chain, uniform(0, {}) interarrivals", params.c),
        })
    }

    pub fn params(&self) -> Gm1Params {
        self.params
    }

    /// `β_i`; zero past the representable range.
    pub fn beta(&self, i: usize) -> f64 {
        self.beta.get(i).copied().unwrap_or(0.0)
    }

    /// `Σ_{i > n} β_i`.
    pub fn beta_tail(&self, n: usize) -> f64 {
        self.tails.get(n).copied().unwrap_or(0.0)
    }
}

impl fmt::Debug for Gm1Chain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gm1Chain")
            .field("params", &self.params)
            .field("support", &self.beta.len())
            .finish()
    }
}

/// Row `x` of the G/M/1 chain.
pub fn gm1_row(x: StateIndex, chain: &Gm1Chain) -> SparseRow {
    let x = x.0;
    let support = chain.beta.len();
    let mut entries = Vec::with_capacity(support.min(x + 1) + 1);
    let to_zero = chain.beta_tail(x);
    if to_zero > 0.0 {
        entries.push((StateIndex(0), to_zero));
    }
    // y = x + 1 - i, for i = min(x, support - 1) down to 0
    let i_max = x.min(support - 1);
    for i in (0..=i_max).rev() {
        let p = chain.beta[i];
        if p > 0.0 {
            entries.push((StateIndex(x + 1 - i), p));
        }
    }
    SparseRow::new(entries)
}

impl ChainModel for Gm1Chain {
    fn row(&self, x: StateIndex) -> SparseRow {
        gm1_row(x, self)
    }

    fn description(&self) -> &str {
        &self.description
    }
}

/// Reflected random walk: 0 -> 1 surely, j -> j+1 w.p. 1/3, j -> j-1 w.p. 2/3.
#[derive(Clone, Debug, Default)]
pub struct RandomWalkChain;

pub fn random_walk_row(x: StateIndex) -> SparseRow {
    if x.0 == 0 {
        SparseRow::new(vec![(StateIndex(1), 1.0)])
    } else {
        SparseRow::new(vec![(StateIndex(x.0 - 1), 2.0 / 3.0), (StateIndex(x.0 + 1), 1.0 / 3.0)])
    }
}

impl ChainModel for RandomWalkChain {
    fn row(&self, x: StateIndex) -> SparseRow {
        random_walk_row(x)
    }

    fn description(&self) -> &str {
        "reflected random walk, up 1/3, down 2/3"
    }
}

pub type StateFn = Arc<dyn Fn(StateIndex) -> f64 + Send + Sync>;

/// Lyapunov functions `g1` (reward excursions) and `g2` (excursion lengths)
/// with optional explicit overshoot bounds `h1`, `h2`.
///
/// The certificate is only as good as its analytic justification: `g1` must
/// satisfy `Σ_{y∉K} P(x,y) g1(y) <= g1(x) - r(x)` and `g2` the same with `1`
/// in place of `r(x)`, for every `x ∉ K`. When overrides are absent the
/// overshoot bounds are computed exactly from the rows.
#[derive(Clone)]
pub struct LyapunovCertificate {
    label: String,
    g1: StateFn,
    g2: StateFn,
    h1: Option<StateFn>,
    h2: Option<StateFn>,
}

impl LyapunovCertificate {
    pub fn new<F1, F2>(label: impl Into<String>, g1: F1, g2: F2) -> Self
    where
        F1: Fn(StateIndex) -> f64 + Send + Sync + 'static,
        F2: Fn(StateIndex) -> f64 + Send + Sync + 'static,
    {
        LyapunovCertificate {
            label: label.into(),
            g1: Arc::new(g1),
            g2: Arc::new(g2),
            h1: None,
            h2: None,
        }
    }

    pub fn with_h_overrides<F1, F2>(mut self, h1: F1, h2: F2) -> Self
    where
        F1: Fn(StateIndex) -> f64 + Send + Sync + 'static,
        F2: Fn(StateIndex) -> f64 + Send + Sync + 'static,
    {
        self.h1 = Some(Arc::new(h1));
        self.h2 = Some(Arc::new(h2));
        self
    }

    /// Multiplies `g1` (and `h1` if overridden) by `c`, matching a reward
    /// scaled by `c`.
    pub fn scale_reward_part(&self, c: f64) -> Self {
        let g1 = Arc::clone(&self.g1);
        let mut out = self.clone();
        out.label = format!("{} (g1*{c})", self.label);
        out.g1 = Arc::new(move |x| c * g1(x));
        if let Some(h1) = self.h1.clone() {
            out.h1 = Some(Arc::new(move |x| c * h1(x)));
        }
        out
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    #[inline]
    pub fn g1(&self, x: StateIndex) -> f64 {
        (self.g1)(x)
    }

    #[inline]
    pub fn g2(&self, x: StateIndex) -> f64 {
        (self.g2)(x)
    }

    pub fn h1_override(&self) -> Option<&StateFn> {
        self.h1.as_ref()
    }

    pub fn h2_override(&self) -> Option<&StateFn> {
        self.h2.as_ref()
    }

    pub fn has_overrides(&self) -> bool {
        self.h1.is_some() || self.h2.is_some()
    }
}

impl fmt::Debug for LyapunovCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LyapunovCertificate")
            .field("label", &self.label)
            .field("h_overrides", &self.has_overrides())
            .finish()
    }
}

/// How the overshoot bounds `h1`, `h2` of a benchmark certificate are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum HMode {
    /// `h_i(x) = Σ_{y∉A} P(x,y) g_i(y)` computed from the rows on
    /// `A = {0, .., a-1}`.
    #[default]
    Exact,
    /// Published closed-form magnitudes supported at state `a`, with the
    /// truncation set `A = {0, .., a}` so that `a` is the exit state.
    PaperLiteral,
}

impl HMode {
    /// Number of states in the prefix truncation set for sweep point `a`.
    pub fn truncation_len(self, a: usize) -> usize {
        match self {
            HMode::Exact => a,
            HMode::PaperLiteral => a + 1,
        }
    }
}

/// `g1(x) = 300 x²`, `g2(x) = 300 x`.
pub fn gm1_certificate() -> LyapunovCertificate {
    LyapunovCertificate::new(
        "G/M/1: g1 = 300x^2, g2 = 300x",
        |x| 300.0 * (x.0 as f64).powi(2),
        |x| 300.0 * x.0 as f64,
    )
}

/// [`gm1_certificate`] with `h_i(a) = 300 β_0 (a+1)^{3-i}` and zero elsewhere.
pub fn gm1_certificate_paper_literal(a: usize, beta0: f64) -> LyapunovCertificate {
    let h1 = 300.0 * beta0 * ((a + 1) as f64).powi(2);
    let h2 = 300.0 * beta0 * (a + 1) as f64;
    gm1_certificate().with_h_overrides(
        move |x| if x.0 == a { h1 } else { 0.0 },
        move |x| if x.0 == a { h2 } else { 0.0 },
    )
}

/// `g1(x) = g2(x) = x²`.
pub fn random_walk_certificate() -> LyapunovCertificate {
    let sq = |x: StateIndex| (x.0 as f64).powi(2);
    LyapunovCertificate::new("random walk: g1 = g2 = x^2", sq, sq)
}

/// [`random_walk_certificate`] with `h_i(a) = (a+1)² / 3` and zero elsewhere.
pub fn random_walk_certificate_paper_literal(a: usize) -> LyapunovCertificate {
    let h = ((a + 1) as f64).powi(2) / 3.0;
    let at_a = move |x: StateIndex| if x.0 == a { h } else { 0.0 };
    random_walk_certificate().with_h_overrides(at_a, at_a)
}

/// Parses the `states N` / `src dst prob` chain format.
pub fn parse_chain(text: &str, description: impl Into<String>) -> Result<FiniteChain> {
    let mut n: Option<usize> = None;
    let mut rows: Vec<Vec<(StateIndex, f64)>> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let perr = |msg: String| Error::Parse { line: line_no, msg };
        if fields[0] == "states" {
            if n.is_some() {
                return Err(perr("duplicate `states` header".into()));
            }
            let [_, count] = fields[..] else {
                return Err(perr("expected `states N`".into()));
            };
            let count: usize = count
                .parse()
                .map_err(|_| perr(format!("invalid state count `{count}`")))?;
            if count == 0 {
                return Err(perr("state count must be positive".into()));
            }
            n = Some(count);
            rows = vec![Vec::new(); count];
            continue;
        }
        let Some(n) = n else {
            return Err(perr("entry before `states N` header".into()));
        };
        let [src, dst, prob] = fields[..] else {
            return Err(perr(format!("expected `src dst prob`, got {} fields", fields.len())));
        };
        let src: usize = src.parse().map_err(|_| perr(format!("invalid source `{src}`")))?;
        let dst: usize = dst.parse().map_err(|_| perr(format!("invalid target `{dst}`")))?;
        let prob: f64 = prob
            .parse()
            .map_err(|_| perr(format!("invalid probability `{prob}`")))?;
        if src >= n || dst >= n {
            return Err(perr(format!("state outside 0..{n}")));
        }
        if !(0.0..=1.0).contains(&prob) {
            return Err(perr(format!("probability {prob} outside [0, 1]")));
        }
        if rows[src].iter().any(|&(y, _)| y.0 == dst) {
            return Err(perr(format!("duplicate entry {src} -> {dst}")));
        }
        rows[src].push((StateIndex(dst), prob));
    }
    let Some(_) = n else {
        return Err(Error::Parse {
            line: 0,
            msg: "missing `states N` header".into(),
        });
    };
    let rows: Vec<SparseRow> = rows.into_iter().map(SparseRow::normalized).collect();
    for (x, row) in rows.iter().enumerate() {
        let sum = row.sum();
        if (sum - 1.0).abs() > FILE_ROW_SUM_TOL {
            return Err(Error::RowSum {
                state: StateIndex(x),
                sum,
                tol: FILE_ROW_SUM_TOL,
            });
        }
    }
    Ok(FiniteChain::new(rows, description))
}

pub fn load_chain_from_file(path: impl AsRef<Path>) -> Result<FiniteChain> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_chain(&text, format!("file:{}", path.display()))
}

/// Serializes a finite chain in the format read by [`parse_chain`].
pub fn format_chain(chain: &FiniteChain) -> String {
    let mut out = format!("states {}\n", chain.len());
    for x in 0..chain.len() {
        for (y, p) in chain.row(StateIndex(x)).iter() {
            out.push_str(&format!("{x} {y} {p:e}\n"));
        }
    }
    out
}
