//! Markov chains over integer-encoded countable state spaces.
//!
//! A chain is exposed one transition row at a time; rows have finite support
//! and are expected to be stochastic within [`ROW_SUM_TOL`]. Truncation
//! problems bundle a chain with the finite sets `A` (truncation set) and `K`
//! (Lyapunov set), the regeneration state `z`, and a non-negative reward.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Default tolerance on `|Σ_y P(x,y) - 1|`.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// One state of the chain.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateIndex(pub usize);

impl StateIndex {
    #[inline]
    pub fn get(self) -> usize {
        self.0
    }
}

impl From<usize> for StateIndex {
    fn from(v: usize) -> Self {
        StateIndex(v)
    }
}

impl fmt::Display for StateIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Transition row `P(x, ·)` with finite support.
///
/// Rows produced by the built-in models have strictly increasing targets and
/// strictly positive probabilities. Rows built with [`SparseRow::new`] are
/// stored verbatim so that [`validate_rows`] can report malformed input.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseRow {
    entries: Vec<(StateIndex, f64)>,
}

impl SparseRow {
    pub fn new(entries: Vec<(StateIndex, f64)>) -> Self {
        SparseRow { entries }
    }

    /// Sorts by target, merges duplicate targets and drops zeros.
    pub fn normalized(mut entries: Vec<(StateIndex, f64)>) -> Self {
        entries.sort_by_key(|&(y, _)| y);
        let mut out: Vec<(StateIndex, f64)> = Vec::with_capacity(entries.len());
        for (y, p) in entries {
            match out.last_mut() {
                Some(last) if last.0 == y => last.1 += p,
                _ => out.push((y, p)),
            }
        }
        out.retain(|&(_, p)| p != 0.0);
        SparseRow { entries: out }
    }

    pub fn entries(&self) -> &[(StateIndex, f64)] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (StateIndex, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|&(_, p)| p).sum()
    }

    /// `P(x, y)`, zero when `y` is outside the support.
    pub fn prob(&self, y: StateIndex) -> f64 {
        self.entries
            .iter()
            .filter(|&&(t, _)| t == y)
            .map(|&(_, p)| p)
            .sum()
    }

    fn diagnose(&self, state: StateIndex, tol: f64) -> RowDiagnostics {
        let sum = self.sum();
        let negative = self
            .entries
            .iter()
            .filter(|&&(_, p)| !(p >= 0.0))
            .map(|&(y, _)| y)
            .collect();
        let zero_entries = self.entries.iter().filter(|&&(_, p)| p == 0.0).count();
        let out_of_order = self
            .entries
            .windows(2)
            .filter(|w| w[0].0 >= w[1].0)
            .map(|w| w[1].0)
            .collect();
        RowDiagnostics {
            state,
            sum,
            deviation: (sum - 1.0).abs(),
            negative,
            zero_entries,
            out_of_order,
            tol,
        }
    }
}

/// A transition kernel on `{0, 1, 2, ...}` (or a finite prefix of it).
///
/// Implementations must be deterministic: repeated calls for the same state
/// return identical rows.
pub trait ChainModel: Send + Sync {
    fn row(&self, x: StateIndex) -> SparseRow;

    fn description(&self) -> &str;

    /// Number of states when the state space is finite.
    fn num_states(&self) -> Option<usize> {
        None
    }
}

impl<C: ChainModel + ?Sized> ChainModel for Arc<C> {
    fn row(&self, x: StateIndex) -> SparseRow {
        (**self).row(x)
    }
    fn description(&self) -> &str {
        (**self).description()
    }
    fn num_states(&self) -> Option<usize> {
        (**self).num_states()
    }
}

/// Row-level findings of [`validate_rows`].
#[derive(Clone, Debug)]
pub struct RowDiagnostics {
    pub state: StateIndex,
    pub sum: f64,
    pub deviation: f64,
    pub negative: Vec<StateIndex>,
    pub zero_entries: usize,
    /// Targets that are duplicated or appear out of increasing order.
    pub out_of_order: Vec<StateIndex>,
    tol: f64,
}

impl RowDiagnostics {
    pub fn passed(&self) -> bool {
        self.deviation <= self.tol
            && self.negative.is_empty()
            && self.zero_entries == 0
            && self.out_of_order.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct ValidationReport {
    pub tol: f64,
    pub rows: Vec<RowDiagnostics>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(RowDiagnostics::passed)
    }

    pub fn max_deviation(&self) -> f64 {
        self.rows.iter().map(|r| r.deviation).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &RowDiagnostics> {
        self.rows.iter().filter(|r| !r.passed())
    }
}

/// Checks the rows of `states` against the sparse-row invariants with the
/// default row-sum tolerance.
pub fn validate_rows<I>(chain: &dyn ChainModel, states: I) -> ValidationReport
where
    I: IntoIterator<Item = StateIndex>,
{
    validate_rows_with_tol(chain, states, ROW_SUM_TOL)
}

pub fn validate_rows_with_tol<I>(chain: &dyn ChainModel, states: I, tol: f64) -> ValidationReport
where
    I: IntoIterator<Item = StateIndex>,
{
    let rows = states
        .into_iter()
        .map(|x| chain.row(x).diagnose(x, tol))
        .collect();
    ValidationReport { tol, rows }
}

/// States outside `a` reachable from `a` in one step.
pub fn one_step_fringe(chain: &dyn ChainModel, a: &[StateIndex]) -> BTreeSet<StateIndex> {
    let set: BTreeSet<StateIndex> = a.iter().copied().collect();
    let mut fringe = BTreeSet::new();
    for &x in &set {
        for (y, p) in chain.row(x).iter() {
            if p > 0.0 && !set.contains(&y) {
                fringe.insert(y);
            }
        }
    }
    fringe
}

/// Non-negative reward function `r: S -> R+`.
#[derive(Clone)]
pub struct Reward {
    label: String,
    f: Arc<dyn Fn(StateIndex) -> f64 + Send + Sync>,
}

impl Reward {
    pub fn new<F>(label: impl Into<String>, f: F) -> Self
    where
        F: Fn(StateIndex) -> f64 + Send + Sync + 'static,
    {
        Reward {
            label: label.into(),
            f: Arc::new(f),
        }
    }

    /// `r(x) = x`.
    pub fn identity() -> Self {
        Reward::new("identity", |x| x.0 as f64)
    }

    /// `r(x) = x / 2`.
    pub fn half() -> Self {
        Reward::new("half", |x| x.0 as f64 / 2.0)
    }

    pub fn constant(c: f64) -> Self {
        Reward::new(format!("constant({c})"), move |_| c)
    }

    /// Tabulated reward; states beyond the table get zero.
    pub fn table(values: Vec<f64>) -> Self {
        Reward::new("table", move |x| values.get(x.0).copied().unwrap_or(0.0))
    }

    pub fn scaled(&self, c: f64) -> Self {
        let f = Arc::clone(&self.f);
        Reward::new(format!("{}*{c}", self.label), move |x| c * f(x))
    }

    #[inline]
    pub fn eval(&self, x: StateIndex) -> f64 {
        (self.f)(x)
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl fmt::Debug for Reward {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Reward").field(&self.label).finish()
    }
}

/// A chain together with the sets and reward defining one bound computation.
#[derive(Clone)]
pub struct TruncationProblem {
    pub chain: Arc<dyn ChainModel>,
    a: Vec<StateIndex>,
    z: StateIndex,
    k: Vec<StateIndex>,
    pub reward: Reward,
}

impl TruncationProblem {
    /// Builds a problem, enforcing `z ∈ K ⊆ A` and `r >= 0` on `A`.
    pub fn new(
        chain: Arc<dyn ChainModel>,
        a: impl IntoIterator<Item = StateIndex>,
        z: StateIndex,
        k: impl IntoIterator<Item = StateIndex>,
        reward: Reward,
    ) -> Result<Self> {
        let a = sorted_set(a);
        let k = sorted_set(k);
        if a.is_empty() {
            return Err(Error::InvalidProblem("truncation set A is empty".into()));
        }
        if k.binary_search(&z).is_err() {
            return Err(Error::InvalidProblem(format!("z = {z} is not in K")));
        }
        if let Some(&x) = k.iter().find(|x| a.binary_search(x).is_err()) {
            return Err(Error::InvalidProblem(format!("K is not a subset of A: {x} ∉ A")));
        }
        if let Some(n) = chain.num_states() {
            if let Some(&x) = a.iter().find(|x| x.0 >= n) {
                return Err(Error::InvalidProblem(format!(
                    "state {x} outside the {n}-state space"
                )));
            }
        }
        for &x in &a {
            let v = reward.eval(x);
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::NegativeReward { state: x, value: v });
            }
        }
        Ok(TruncationProblem {
            chain,
            a,
            z,
            k,
            reward,
        })
    }

    /// `A = {0, .., a_len - 1}`, `K = {0, .., k_max}`.
    pub fn prefix(
        chain: Arc<dyn ChainModel>,
        a_len: usize,
        z: StateIndex,
        k_max: usize,
        reward: Reward,
    ) -> Result<Self> {
        TruncationProblem::new(
            chain,
            (0..a_len).map(StateIndex),
            z,
            (0..=k_max).map(StateIndex),
            reward,
        )
    }

    pub fn a(&self) -> &[StateIndex] {
        &self.a
    }

    pub fn k(&self) -> &[StateIndex] {
        &self.k
    }

    pub fn z(&self) -> StateIndex {
        self.z
    }

    pub fn in_a(&self, x: StateIndex) -> bool {
        self.a.binary_search(&x).is_ok()
    }

    pub fn in_k(&self, x: StateIndex) -> bool {
        self.k.binary_search(&x).is_ok()
    }

    pub fn with_reward(&self, reward: Reward) -> Result<Self> {
        TruncationProblem::new(
            Arc::clone(&self.chain),
            self.a.iter().copied(),
            self.z,
            self.k.iter().copied(),
            reward,
        )
    }
}

impl fmt::Debug for TruncationProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TruncationProblem")
            .field("chain", &self.chain.description())
            .field("|A|", &self.a.len())
            .field("z", &self.z)
            .field("|K|", &self.k.len())
            .field("reward", &self.reward)
            .finish()
    }
}

fn sorted_set(it: impl IntoIterator<Item = StateIndex>) -> Vec<StateIndex> {
    let mut v: Vec<StateIndex> = it.into_iter().collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Finite chain stored as explicit rows; handy for tests and small models.
#[derive(Clone, Debug)]
pub struct FiniteChain {
    rows: Vec<SparseRow>,
    description: String,
}

impl FiniteChain {
    pub fn new(rows: Vec<SparseRow>, description: impl Into<String>) -> Self {
        FiniteChain {
            rows,
            description: description.into(),
        }
    }

    /// Builds a chain from a dense row-major matrix, dropping zeros.
    pub fn from_dense(matrix: &[Vec<f64>], description: impl Into<String>) -> Self {
        let rows = matrix
            .iter()
            .map(|r| {
                SparseRow::new(
                    r.iter()
                        .enumerate()
                        .filter(|&(_, &p)| p != 0.0)
                        .map(|(j, &p)| (StateIndex(j), p))
                        .collect(),
                )
            })
            .collect();
        FiniteChain::new(rows, description)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

impl ChainModel for FiniteChain {
    fn row(&self, x: StateIndex) -> SparseRow {
        self.rows.get(x.0).cloned().unwrap_or_default()
    }

    fn description(&self) -> &str {
        &self.description
    }

    fn num_states(&self) -> Option<usize> {
        Some(self.rows.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> FiniteChain {
        FiniteChain::from_dense(&[vec![0.5, 0.5], vec![1.0, 0.0]], "two-state")
    }

    #[test]
    fn two_state_rows_validate() {
        let c = two_state();
        let rep = validate_rows(&c, [StateIndex(0), StateIndex(1)]);
        assert!(rep.passed());
        assert_eq!(rep.max_deviation(), 0.0);
    }

    #[test]
    fn short_row_reports_deviation() {
        let c = FiniteChain::new(
            vec![SparseRow::new(vec![(StateIndex(0), 0.4), (StateIndex(1), 0.5)])],
            "leaky",
        );
        let rep = validate_rows(&c, [StateIndex(0)]);
        assert!(!rep.passed());
        assert!((rep.rows[0].deviation - 0.1).abs() < 1e-15);
    }

    #[test]
    fn negative_and_duplicate_entries_flagged() {
        let row = SparseRow::new(vec![
            (StateIndex(0), 1.2),
            (StateIndex(0), 0.1),
            (StateIndex(1), -0.3),
        ]);
        let c = FiniteChain::new(vec![row], "bad");
        let rep = validate_rows(&c, [StateIndex(0)]);
        let d = &rep.rows[0];
        assert!(!d.passed());
        assert_eq!(d.negative, vec![StateIndex(1)]);
        assert_eq!(d.out_of_order, vec![StateIndex(0)]);
    }

    #[test]
    fn normalized_merges_and_sorts() {
        let row = SparseRow::normalized(vec![
            (StateIndex(3), 0.25),
            (StateIndex(1), 0.25),
            (StateIndex(3), 0.5),
            (StateIndex(2), 0.0),
        ]);
        assert_eq!(row.entries(), &[(StateIndex(1), 0.25), (StateIndex(3), 0.75)]);
        assert_eq!(row.prob(StateIndex(3)), 0.75);
        assert_eq!(row.prob(StateIndex(2)), 0.0);
    }

    #[test]
    fn fringe_of_whole_space_is_empty() {
        let c = two_state();
        assert!(one_step_fringe(&c, &[StateIndex(0), StateIndex(1)]).is_empty());
        let f = one_step_fringe(&c, &[StateIndex(0)]);
        assert_eq!(f.into_iter().collect::<Vec<_>>(), vec![StateIndex(1)]);
    }

    #[test]
    fn problem_rejects_bad_sets() {
        let c: Arc<dyn ChainModel> = Arc::new(two_state());
        let ids = |v: &[usize]| v.iter().map(|&i| StateIndex(i)).collect::<Vec<_>>();
        let r = Reward::identity();
        assert!(TruncationProblem::new(c.clone(), ids(&[0, 1]), StateIndex(1), ids(&[0]), r.clone()).is_err());
        assert!(TruncationProblem::new(c.clone(), ids(&[0]), StateIndex(0), ids(&[0, 1]), r.clone()).is_err());
        assert!(TruncationProblem::new(c.clone(), ids(&[0, 1, 2]), StateIndex(0), ids(&[0]), r.clone()).is_err());
        let neg = Reward::new("neg", |x| if x.0 == 1 { -1.0 } else { 0.0 });
        assert!(matches!(
            TruncationProblem::new(c.clone(), ids(&[0, 1]), StateIndex(0), ids(&[0]), neg),
            Err(Error::NegativeReward { .. })
        ));
        let p = TruncationProblem::new(c, ids(&[1, 0, 1]), StateIndex(0), ids(&[0]), r).unwrap();
        assert_eq!(p.a(), &[StateIndex(0), StateIndex(1)]);
    }
}
