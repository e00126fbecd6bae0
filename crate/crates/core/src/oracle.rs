//! Independent reference computations: dense exact solves on finite chains and
//! regenerative simulation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chain::{ChainModel, Reward, StateIndex};
use crate::error::{Error, Result};

/// Per-cycle step cap of [`simulate_cycles`].
pub const DEFAULT_CYCLE_CAP: u64 = 10_000_000;

/// Normal quantile for a two-sided 99% interval.
pub const Z99: f64 = 2.575_829_303_548_901;

pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.9)";

fn dense(chain: &dyn ChainModel, n: usize) -> Result<DMatrix<f64>> {
    let mut p = DMatrix::zeros(n, n);
    for x in 0..n {
        for (y, v) in chain.row(StateIndex(x)).iter() {
            if y.0 >= n {
                return Err(Error::InvalidProblem(format!(
                    "state {x} moves to {y}, outside the {n}-state space"
                )));
            }
            p[(x, y.0)] += v;
        }
    }
    Ok(p)
}

/// Stationary distribution of an irreducible `n`-state chain by
/// Grassmann-Taksar-Heyman elimination, which avoids subtraction and keeps
/// small components accurate to high relative precision. Checks
/// `‖πP - π‖∞ <= 1e-12`.
pub fn exact_stationary_finite(chain: &dyn ChainModel, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidProblem("empty chain".into()));
    }
    let p = dense(chain, n)?;
    let mut a = p.clone();
    for k in (1..n).rev() {
        let s: f64 = (0..k).map(|j| a[(k, j)]).sum();
        if !(s > 0.0) {
            return Err(Error::ReducibleChain);
        }
        for i in 0..k {
            a[(i, k)] /= s;
        }
        for i in 0..k {
            let f = a[(i, k)];
            if f != 0.0 {
                for j in 0..k {
                    a[(i, j)] += f * a[(k, j)];
                }
            }
        }
    }
    let mut pi = DVector::zeros(n);
    pi[0] = 1.0;
    for k in 1..n {
        pi[k] = (0..k).map(|i| pi[i] * a[(i, k)]).sum();
    }
    pi /= pi.sum();
    let residual = (p.transpose() * &pi - &pi).amax();
    if !(residual <= 1e-12) || pi.iter().any(|v| !v.is_finite()) {
        return Err(Error::ReducibleChain);
    }
    Ok(pi.iter().copied().collect())
}

/// `E_z Σ_{j<τ(z)} f(X_j)` by the first-step system on `S \ {z}`.
pub fn regenerative_expectation_exact(
    chain: &dyn ChainModel,
    n: usize,
    z: StateIndex,
    f: impl Fn(StateIndex) -> f64,
) -> Result<f64> {
    if z.0 >= n {
        return Err(Error::InvalidProblem(format!("z = {z} outside the {n}-state space")));
    }
    let p = dense(chain, n)?;
    let u = first_step(&p, |x| x == z.0, &f)?;
    let tail: f64 = (0..n).map(|y| p[(z.0, y)] * u[y]).sum();
    Ok(f(z) + tail)
}

/// Solves `u(x) = f(x) + Σ_{y∉stop} P(x,y) u(y)` for `x ∉ stop`, with
/// `u = 0` on `stop`, by dense elimination whose pivots are the exit
/// probabilities into `stop` plus the remaining off-diagonal mass.
fn first_step(
    p: &DMatrix<f64>,
    stop: impl Fn(usize) -> bool,
    f: impl Fn(StateIndex) -> f64,
) -> Result<Vec<f64>> {
    let n = p.nrows();
    let free: Vec<usize> = (0..n).filter(|&x| !stop(x)).collect();
    let (stopped, m) = ((0..n).filter(|&x| stop(x)).collect::<Vec<_>>(), free.len());
    let mut u = vec![0.0; n];
    if m == 0 {
        return Ok(u);
    }
    let mut a = DMatrix::from_fn(m, m, |i, j| p[(free[i], free[j])]);
    let mut exit: Vec<f64> = free.iter().map(|&x| stopped.iter().map(|&y| p[(x, y)]).sum()).collect();
    let mut b: Vec<f64> = free.iter().map(|&x| f(StateIndex(x))).collect();
    let mut pivot = vec![0.0; m];
    for k in 0..m {
        let d = exit[k] + (k + 1..m).map(|j| a[(k, j)]).sum::<f64>();
        if !(d > 0.0) {
            return Err(Error::ReducibleChain);
        }
        pivot[k] = d;
        for i in k + 1..m {
            let aik = a[(i, k)];
            if aik == 0.0 {
                continue;
            }
            let l = aik / d;
            for j in k + 1..m {
                a[(i, j)] += l * a[(k, j)];
            }
            exit[i] += l * exit[k];
            b[i] += l * b[k];
            a[(i, k)] = 0.0;
        }
    }
    let mut sol = vec![0.0; m];
    for k in (0..m).rev() {
        let acc = b[k] + (k + 1..m).map(|j| a[(k, j)] * sol[j]).sum::<f64>();
        sol[k] = acc / pivot[k];
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::ReducibleChain);
    }
    for (i, &x) in free.iter().enumerate() {
        u[x] = sol[i];
    }
    Ok(u)
}

/// Exact `g(x) = E_x Σ_{j<T_K} f(X_j)` for `x ∉ K`, where `T_K` is the
/// hitting time of `K`; zero on `K`. With `f = r` and `f = 1` this is the
/// smallest certificate satisfying the drift inequalities with equality.
pub fn excursion_certificate(
    chain: &dyn ChainModel,
    n: usize,
    k: &[StateIndex],
    f: impl Fn(StateIndex) -> f64,
) -> Result<Vec<f64>> {
    let p = dense(chain, n)?;
    first_step(&p, |x| k.contains(&StateIndex(x)), f)
}

/// Per-state comparison of `E_x Σ_{j<T} f(X_j)` (`T` the hitting time of
/// `K`) against a proposed bound `g`.
#[derive(Clone, Debug)]
pub struct ExcursionCheck {
    pub states: Vec<StateIndex>,
    pub exact: Vec<f64>,
    /// `g(x) - exact(x)`.
    pub slack: Vec<f64>,
    pub violations: Vec<StateIndex>,
}

impl ExcursionCheck {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn min_slack(&self) -> f64 {
        self.slack.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Computes `E_x Σ_{j<T} f(X_j)` for `x ∈ A \ K`, with `T` the hitting time
/// of `K`, and compares it with `g(x)`. A certificate satisfying the drift
/// inequalities on `K^c` passes.
pub fn excursion_bound_check(
    chain: &dyn ChainModel,
    n: usize,
    k: &[StateIndex],
    a: &[StateIndex],
    g: impl Fn(StateIndex) -> f64,
    f: impl Fn(StateIndex) -> f64,
) -> Result<ExcursionCheck> {
    let p = dense(chain, n)?;
    let exact = first_step(&p, |x| k.contains(&StateIndex(x)), &f)?;
    let mut out = ExcursionCheck {
        states: Vec::new(),
        exact: Vec::new(),
        slack: Vec::new(),
        violations: Vec::new(),
    };
    for &x in a.iter().filter(|x| !k.contains(x)) {
        let e = exact[x.0];
        let s = g(x) - e;
        if s < -1e-9 * e.abs().max(1.0) {
            out.violations.push(x);
        }
        out.states.push(x);
        out.exact.push(e);
        out.slack.push(s);
    }
    Ok(out)
}

/// Summary of independently simulated `z`-cycles.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleStats {
    pub n_cycles: u64,
    /// Estimate of `E_z Σ_{j<τ(z)} r(X_j)`.
    pub mean_reward: f64,
    /// Estimate of `E_z τ(z)`.
    pub mean_length: f64,
    pub ratio: f64,
    /// 99% half-width for `ratio` (delta method).
    pub half_width: f64,
    /// 99% half-width for `mean_length`.
    pub mean_length_half_width: f64,
    /// `P̂_z(τ(z) > Γ_i)` for `i = 1, ..`: the fraction of cycles with at
    /// least `i` returns to `K` after an exit from `A`.
    pub excursion_survival: Vec<f64>,
    pub rng_algorithm: &'static str,
}

impl CycleStats {
    /// 99% binomial half-width for `excursion_survival[i]`.
    pub fn survival_half_width(&self, i: usize) -> f64 {
        let p = self.excursion_survival[i];
        Z99 * (p * (1.0 - p) / self.n_cycles as f64).sqrt()
    }
}

/// Simulation settings for [`simulate_cycles`].
#[derive(Clone, Copy, Debug)]
pub struct SimulationOptions {
    pub n_cycles: u64,
    pub seed: u64,
    pub cycle_cap: u64,
    /// Number of `Γ_i` tracked.
    pub max_excursions: usize,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions {
            n_cycles: 100_000,
            seed: 0,
            cycle_cap: DEFAULT_CYCLE_CAP,
            max_excursions: 10,
        }
    }
}

fn step(chain: &dyn ChainModel, x: StateIndex, rng: &mut ChaCha8Rng) -> Result<StateIndex> {
    let row = chain.row(x);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (y, p) in row.iter() {
        acc += p;
        if u < acc {
            return Ok(y);
        }
    }
    // rounding in the row sum
    row.entries()
        .iter()
        .rev()
        .find(|&&(_, p)| p > 0.0)
        .map(|&(y, _)| y)
        .ok_or_else(|| Error::InvalidProblem(format!("state {x} has an empty row")))
}

/// Simulates `n_cycles` independent `z`-cycles.
///
/// Within a cycle, `T_1` is the first time in `A^c`, `Γ_i` the first time in
/// `K` after `T_i`, and `T_{i+1}` the first time in `A^c` after `Γ_i`.
pub fn simulate_cycles(
    chain: &dyn ChainModel,
    z: StateIndex,
    k: &[StateIndex],
    a: &[StateIndex],
    r: &Reward,
    options: SimulationOptions,
) -> Result<CycleStats> {
    if options.n_cycles == 0 {
        return Err(Error::InvalidParameter("n_cycles must be at least 1".into()));
    }
    let mut k: Vec<StateIndex> = k.to_vec();
    k.sort_unstable();
    let mut a: Vec<StateIndex> = a.to_vec();
    a.sort_unstable();
    let in_k = |x: StateIndex| k.binary_search(&x).is_ok();
    let in_a = |x: StateIndex| a.binary_search(&x).is_ok();

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let n = options.n_cycles as f64;
    let (mut sr, mut sl, mut srr, mut sll, mut srl) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut returns = vec![0u64; options.max_excursions];

    for _ in 0..options.n_cycles {
        let mut x = z;
        let mut reward = 0.0;
        let mut len: u64 = 0;
        let mut outside = false;
        let mut gammas = 0usize;
        loop {
            reward += r.eval(x);
            len += 1;
            if len > options.cycle_cap {
                return Err(Error::CycleCap { cap: options.cycle_cap });
            }
            x = step(chain, x, &mut rng)?;
            if x == z {
                break;
            }
            if !outside && !in_a(x) {
                outside = true;
            } else if outside && in_k(x) {
                outside = false;
                if gammas < returns.len() {
                    returns[gammas] += 1;
                }
                gammas += 1;
            }
        }
        let l = len as f64;
        sr += reward;
        sl += l;
        srr += reward * reward;
        sll += l * l;
        srl += reward * l;
    }

    let mean_reward = sr / n;
    let mean_length = sl / n;
    let ratio = mean_reward / mean_length;
    let var = |s2: f64, m: f64| if n > 1.0 { ((s2 - n * m * m) / (n - 1.0)).max(0.0) } else { 0.0 };
    let var_l = var(sll, mean_length);
    // Var(R - ratio·L)
    let var_d = if n > 1.0 {
        let cov = (srl - n * mean_reward * mean_length) / (n - 1.0);
        (var(srr, mean_reward) - 2.0 * ratio * cov + ratio * ratio * var_l).max(0.0)
    } else {
        0.0
    };
    Ok(CycleStats {
        n_cycles: options.n_cycles,
        mean_reward,
        mean_length,
        ratio,
        half_width: Z99 * (var_d / n).sqrt() / mean_length,
        mean_length_half_width: Z99 * (var_l / n).sqrt(),
        excursion_survival: returns.iter().map(|&c| c as f64 / n).collect(),
        rng_algorithm: RNG_ALGORITHM,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::FiniteChain;
    use crate::models::RandomWalkChain;

    fn two_state() -> FiniteChain {
        FiniteChain::from_dense(&[vec![0.5, 0.5], vec![1.0, 0.0]], "two-state")
    }

    #[test]
    fn two_state_stationary() {
        let pi = exact_stationary_finite(&two_state(), 2).unwrap();
        assert!((pi[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((pi[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn doubly_stochastic_is_uniform() {
        let m = vec![
            vec![0.1, 0.2, 0.3, 0.4],
            vec![0.4, 0.1, 0.2, 0.3],
            vec![0.3, 0.4, 0.1, 0.2],
            vec![0.2, 0.3, 0.4, 0.1],
        ];
        let pi = exact_stationary_finite(&FiniteChain::from_dense(&m, "ds"), 4).unwrap();
        for v in pi {
            assert!((v - 0.25).abs() < 1e-14);
        }
    }

    #[test]
    fn reflected_walk_matches_detailed_balance() {
        // up 1/3, down 2/3, reflected at both ends: π(x) ∝ 2^{-x}
        let n = 30;
        let mut m = vec![vec![0.0; n]; n];
        for x in 0..n {
            let up = if x + 1 < n { x + 1 } else { x };
            let down = x.saturating_sub(1);
            m[x][up] += 1.0 / 3.0;
            m[x][down] += 2.0 / 3.0;
        }
        let pi = exact_stationary_finite(&FiniteChain::from_dense(&m, "rw"), n).unwrap();
        let norm: f64 = (0..n).map(|x| 0.5f64.powi(x as i32)).sum();
        for (x, v) in pi.iter().enumerate() {
            assert!((v - 0.5f64.powi(x as i32) / norm).abs() < 1e-14);
        }
    }

    #[test]
    fn reducible_chain_rejected() {
        let m = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let err = exact_stationary_finite(&FiniteChain::from_dense(&m, "id"), 2).unwrap_err();
        assert!(matches!(err, Error::ReducibleChain));
    }

    #[test]
    fn regenerative_expectations() {
        let c = two_state();
        let len = regenerative_expectation_exact(&c, 2, StateIndex(0), |_| 1.0).unwrap();
        assert!((len - 1.5).abs() < 1e-15);
        let ind = regenerative_expectation_exact(&c, 2, StateIndex(1), |x| (x.0 == 1) as u8 as f64).unwrap();
        assert_eq!(ind, 1.0);
        let pi = exact_stationary_finite(&c, 2).unwrap();
        let num = regenerative_expectation_exact(&c, 2, StateIndex(0), |x| x.0 as f64).unwrap();
        assert!((num / len - pi[1]).abs() < 1e-12);
    }

    #[test]
    fn exact_certificate_has_zero_slack() {
        let n = 20;
        let walk = RandomWalkChain;
        // truncate the walk by reflecting at n-1
        let mut m = vec![vec![0.0; n]; n];
        for x in 0..n {
            for (y, p) in walk.row(StateIndex(x)).iter() {
                m[x][y.0.min(n - 1)] += p;
            }
        }
        let chain = FiniteChain::from_dense(&m, "rw20");
        let k: Vec<StateIndex> = (0..3).map(StateIndex).collect();
        let a: Vec<StateIndex> = (0..10).map(StateIndex).collect();
        let g = excursion_certificate(&chain, n, &k, |_| 1.0).unwrap();
        let exact = excursion_bound_check(&chain, n, &k, &a, |x| g[x.0], |_| 1.0).unwrap();
        assert!(exact.passed());
        assert!(exact.slack.iter().all(|s| s.abs() < 1e-12));
        let quad = excursion_bound_check(&chain, n, &k, &a, |x| (x.0 * x.0) as f64, |_| 1.0).unwrap();
        assert!(quad.passed());
        assert!(quad.min_slack() > 0.0);
        let low = excursion_bound_check(&chain, n, &k, &a, |x| g[x.0] - 0.5, |_| 1.0).unwrap();
        assert_eq!(low.violations.len(), 7);
    }

    #[test]
    fn simulation_is_deterministic() {
        let c = two_state();
        let opts = SimulationOptions { n_cycles: 2000, seed: 7, ..Default::default() };
        let k = [StateIndex(0)];
        let a = [StateIndex(0)];
        let s1 = simulate_cycles(&c, StateIndex(0), &k, &a, &Reward::identity(), opts).unwrap();
        let s2 = simulate_cycles(&c, StateIndex(0), &k, &a, &Reward::identity(), opts).unwrap();
        assert_eq!(s1, s2);
        assert!(s1.mean_length >= 1.0);
        assert_eq!(s1.ratio, s1.mean_reward / s1.mean_length);
    }

    #[test]
    fn two_state_cycle_length() {
        let c = two_state();
        let opts = SimulationOptions { n_cycles: 1_000_000, seed: 1, ..Default::default() };
        let s = simulate_cycles(&c, StateIndex(0), &[StateIndex(0)], &[StateIndex(0)], &Reward::identity(), opts)
            .unwrap();
        assert!((s.mean_length - 1.5).abs() <= 3.0 * s.mean_length_half_width);
        assert!((s.ratio - 1.0 / 3.0).abs() <= 3.0 * s.half_width);
    }

    #[test]
    fn cycle_cap_enforced() {
        let m = vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]];
        let c = FiniteChain::from_dense(&m, "cycle");
        let opts = SimulationOptions { n_cycles: 1, cycle_cap: 2, ..Default::default() };
        let err = simulate_cycles(&c, StateIndex(0), &[StateIndex(0)], &[StateIndex(0)], &Reward::identity(), opts)
            .unwrap_err();
        assert!(matches!(err, Error::CycleCap { cap: 2 }));
    }

    #[test]
    fn survival_is_non_increasing() {
        let a: Vec<StateIndex> = (0..8).map(StateIndex).collect();
        let k: Vec<StateIndex> = (0..3).map(StateIndex).collect();
        let opts = SimulationOptions { n_cycles: 20_000, seed: 3, ..Default::default() };
        let s = simulate_cycles(&RandomWalkChain, StateIndex(0), &k, &a, &Reward::half(), opts).unwrap();
        for w in s.excursion_survival.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(s.excursion_survival[0] > 0.0);
    }
}
