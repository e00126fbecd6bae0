mod common;

use std::sync::Arc;

use proptest::prelude::*;
use rand::Rng;
use stattrunc::oracle::{exact_stationary_finite, simulate_cycles, SimulationOptions};
use stattrunc::{
    assemble_truncated_system, run_pipeline, FiniteChain, LyapunovCertificate, Reward, Solver, SolverOptions,
    StateIndex, TruncationProblem,
};

use common::*;

struct Case {
    chain: Arc<FiniteChain>,
    r: Reward,
    a: Vec<StateIndex>,
    z: StateIndex,
    k: Vec<StateIndex>,
    cert: LyapunovCertificate,
}

fn case(seed: u64, n: usize) -> Case {
    let mut rng = rng(seed);
    let chain = Arc::new(random_chain(n, 4, &mut rng));
    let r = random_reward(n, &mut rng);
    let (a, z, k) = random_sets(n, &mut rng);
    let cert = exact_certificate(&chain, &k, &r, rng.random_range(1.0..2.5));
    Case { chain, r, a, z, k, cert }
}

impl Case {
    fn problem(&self) -> TruncationProblem {
        TruncationProblem::new(as_dyn(&self.chain), self.a.clone(), self.z, self.k.clone(), self.r.clone()).unwrap()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn report_invariants(seed in any::<u64>(), n in 6usize..40) {
        let c = case(seed, n);
        let pi = exact_stationary_finite(c.chain.as_ref(), n).unwrap();
        let pr: f64 = (0..n).map(|x| pi[x] * c.r.eval(StateIndex(x))).sum();
        match run_pipeline(&c.problem(), Some(&c.cert), &SolverOptions::default()) {
            Ok(rep) => {
                prop_assert!(rep.kappa_lower_r <= rep.kappa_upper_r);
                prop_assert!(rep.kappa_lower_e <= rep.kappa_upper_e);
                prop_assert!(rep.kappa_lower_e >= 1.0);
                prop_assert!(rep.delta > 0.0 && rep.delta <= 1.0);
                prop_assert!((0.0..=1.0).contains(&rep.beta));
                prop_assert!(rep.delta1 >= 0.0 && rep.delta2 >= 0.0);
                prop_assert!(rep.lower <= rep.pi_tilde_r && rep.pi_tilde_r <= rep.upper);
                prop_assert!(rep.certified_lower <= pr && pr <= rep.certified_upper,
                    "{} not in [{}, {}]", pr, rep.certified_lower, rep.certified_upper);
                prop_assert_eq!(rep.tv_bound, 2.0 * rep.error_bound);
                prop_assert!((rep.pi_tilde.total() - 1.0).abs() <= 1e-11);
                prop_assert!(rep.pi_tilde.probs.iter().all(|&p| p >= 0.0));
            }
            Err(e) => prop_assert!(e.is_degenerate_delta(), "{}", e),
        }
    }

    #[test]
    fn solves_are_nonnegative_and_adjoint(seed in any::<u64>(), n in 6usize..40) {
        let c = case(seed, n);
        let opts = SolverOptions::default();
        let s = assemble_truncated_system(&c.problem(), Some(&c.cert), &opts).unwrap();
        let solver = Solver::new(&s, opts).unwrap();
        let mut rng = rng(seed ^ 0x5eed);
        let b: Vec<f64> = (0..s.dim()).map(|_| rng.random_range(0.0..3.0)).collect();
        let x = solver.solve(&b).unwrap();
        let y = solver.solve_transpose().unwrap();
        prop_assert!(x.x.iter().all(|&v| v >= 0.0));
        prop_assert!(y.x.iter().all(|&v| v >= 0.0));
        let lhs: f64 = y.x.iter().zip(&b).map(|(a, b)| a * b).sum();
        let rhs: f64 = s.nu.iter().zip(&x.x).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 10.0 * opts.tol * lhs.abs().max(1.0), "{} vs {}", lhs, rhs);
        // y·(p̃ + q̃) = Σ ν̃
        let exit = s.exit_mass();
        let mass: f64 = y.x.iter().zip(&exit).map(|(a, b)| a * b).sum();
        let nu: f64 = s.nu.iter().sum();
        prop_assert!((mass - nu).abs() <= 10.0 * opts.tol);
        let ones = solver.solve(&exit).unwrap();
        prop_assert!(ones.x.iter().all(|v| (v - 1.0).abs() <= 10.0 * opts.tol));
    }

    #[test]
    fn lower_bounds_grow_with_truncation_set(seed in any::<u64>(), n in 8usize..40) {
        let mut rng = rng(seed);
        let chain = Arc::new(random_chain(n, 3, &mut rng));
        let r = random_reward(n, &mut rng);
        let cut = rng.random_range(2..n);
        let small = TruncationProblem::prefix(as_dyn(&chain), cut, StateIndex(0), 0, r.clone()).unwrap();
        let large = TruncationProblem::prefix(as_dyn(&chain), n, StateIndex(0), 0, r).unwrap();
        let opts = SolverOptions::default();
        let lower = |p: &TruncationProblem| {
            let s = assemble_truncated_system(p, None, &opts).unwrap();
            let solver = Solver::new(&s, opts).unwrap();
            stattrunc::compute_lower_bounds(&solver).unwrap()
        };
        let (a, b) = (lower(&small), lower(&large));
        prop_assert!(a.kappa_r <= b.kappa_r * (1.0 + 1e-12));
        prop_assert!(a.kappa_e <= b.kappa_e * (1.0 + 1e-12));
    }

    #[test]
    fn reward_scaling_is_covariant(seed in any::<u64>(), n in 6usize..30, scale in 0.1f64..20.0) {
        let c = case(seed, n);
        let base = run_pipeline(&c.problem(), Some(&c.cert), &SolverOptions::default());
        let scaled_problem = c.problem().with_reward(c.r.scaled(scale)).unwrap();
        let scaled = run_pipeline(&scaled_problem, Some(&c.cert.scale_reward_part(scale)), &SolverOptions::default());
        if let (Ok(b), Ok(s)) = (base, scaled) {
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1e-300);
            prop_assert!(close(s.lower, scale * b.lower));
            prop_assert!(close(s.upper, scale * b.upper));
            prop_assert!(close(s.kappa_upper_r, scale * b.kappa_upper_r));
            prop_assert!(close(s.delta1, scale * b.delta1));
            prop_assert!(close(s.kappa_upper_e, b.kappa_upper_e));
        }
    }

    #[test]
    fn simulation_is_reproducible(seed in any::<u64>()) {
        let c = case(seed, 12);
        let opts = SimulationOptions { n_cycles: 300, seed, ..Default::default() };
        let a = simulate_cycles(c.chain.as_ref(), c.z, &c.k, &c.a, &c.r, opts).unwrap();
        let b = simulate_cycles(c.chain.as_ref(), c.z, &c.k, &c.a, &c.r, opts).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.mean_length >= 1.0);
        prop_assert!(a.excursion_survival.windows(2).all(|w| w[1] <= w[0]));
    }
}
