#![allow(dead_code)]

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stattrunc::oracle::excursion_certificate;
use stattrunc::{ChainModel, FiniteChain, LyapunovCertificate, Reward, SparseRow, StateIndex};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random irreducible chain: a cycle `x -> x+1 mod n` plus up to `extra`
/// random targets per row, with random weights.
pub fn random_chain(n: usize, extra: usize, rng: &mut impl Rng) -> FiniteChain {
    let rows = (0..n)
        .map(|x| {
            let mut entries = vec![(StateIndex((x + 1) % n), rng.random_range(0.05..1.0))];
            for _ in 0..rng.random_range(1..=extra) {
                entries.push((StateIndex(rng.random_range(0..n)), rng.random_range(0.0..1.0)));
            }
            let total: f64 = entries.iter().map(|e| e.1).sum();
            for e in &mut entries {
                e.1 /= total;
            }
            SparseRow::normalized(entries)
        })
        .collect();
    FiniteChain::new(rows, format!("random({n})"))
}

/// Birth-death chain on `{0..n-1}` with downward drift `down > up`.
pub fn birth_death(n: usize, up: f64, down: f64) -> FiniteChain {
    let rows = (0..n)
        .map(|x| {
            let mut e = Vec::new();
            if x + 1 < n {
                e.push((StateIndex(x + 1), up));
            }
            if x > 0 {
                e.push((StateIndex(x - 1), down));
            }
            let stay = 1.0 - e.iter().map(|v| v.1).sum::<f64>();
            e.push((StateIndex(x), stay));
            SparseRow::normalized(e)
        })
        .collect();
    FiniteChain::new(rows, format!("birth-death({n})"))
}

pub fn two_state() -> FiniteChain {
    FiniteChain::from_dense(&[vec![0.5, 0.5], vec![1.0, 0.0]], "two-state")
}

pub fn random_reward(n: usize, rng: &mut impl Rng) -> Reward {
    Reward::table((0..n).map(|_| rng.random_range(0.0..5.0)).collect())
}

/// Exact excursion certificate for `r` and `1` off `K`, scaled by `scale >= 1`.
pub fn exact_certificate(chain: &FiniteChain, k: &[StateIndex], r: &Reward, scale: f64) -> LyapunovCertificate {
    let n = chain.len();
    let g1 = excursion_certificate(chain, n, k, |x| r.eval(x)).expect("g1");
    let g2 = excursion_certificate(chain, n, k, |_| 1.0).expect("g2");
    LyapunovCertificate::new(
        "exact excursion",
        move |x| scale * g1.get(x.0).copied().unwrap_or(0.0),
        move |x| scale * g2.get(x.0).copied().unwrap_or(0.0),
    )
}

/// Random `(A, z, K)` with `z ∈ K ⊆ A ⊊ S`.
pub fn random_sets(n: usize, rng: &mut impl Rng) -> (Vec<StateIndex>, StateIndex, Vec<StateIndex>) {
    let mut all: Vec<usize> = (0..n).collect();
    all.shuffle(rng);
    let a_len = rng.random_range(n / 3..n);
    let k_len = rng.random_range(1..=a_len.min(6));
    let a: Vec<StateIndex> = all[..a_len].iter().map(|&x| StateIndex(x)).collect();
    let k: Vec<StateIndex> = a[..k_len].to_vec();
    (a, k[0], k)
}

/// The finite test chains shared by the whole-chain checks.
pub fn finite_corpus() -> Vec<Arc<FiniteChain>> {
    let mut r = rng(0xC0FFEE);
    let mut out = vec![Arc::new(two_state()), Arc::new(birth_death(40, 0.3, 0.5))];
    for i in 0..12 {
        let n = 5 + 7 * i;
        out.push(Arc::new(random_chain(n, 4, &mut r)));
    }
    out
}

pub fn as_dyn(c: &Arc<FiniteChain>) -> Arc<dyn ChainModel> {
    c.clone()
}
