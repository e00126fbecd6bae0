//! Regenerative a posteriori error bounds for truncated Markov chain stationary
//! expectations.
//!
//! A [`TruncationProblem`] fixes a chain, a finite truncation set `A`, a
//! regeneration state `z` and a set `K ⊆ A` outside of which a
//! [`LyapunovCertificate`] holds. [`run_pipeline`] returns the truncation
//! approximation `π̃r` together with certified bounds on `πr`.
//!
//! ```
//! use std::sync::Arc;
//! use stattrunc::{run_pipeline, random_walk_certificate, RandomWalkChain, Reward, SolverOptions,
//!     StateIndex, TruncationProblem};
//!
//! let problem = TruncationProblem::prefix(
//!     Arc::new(RandomWalkChain), 500, StateIndex(0), 300, Reward::half()).unwrap();
//! let report = run_pipeline(&problem, Some(&random_walk_certificate()), &SolverOptions::default()).unwrap();
//! assert!(report.certified_lower <= 0.75 && 0.75 <= report.certified_upper);
//! ```

pub mod bounds;
pub mod chain;
pub mod error;
pub mod models;
pub mod oracle;
pub mod solver;

pub use bounds::{
    compute_delta_beta, compute_error_bound, compute_h, compute_lower_bounds, compute_pi_tilde,
    compute_tv_bound, compute_upper_bounds, default_drift_window, run_pipeline, verify_lyapunov_drift,
    BoundReport, DeltaBeta, Distribution, DriftKind, DriftReport, DriftViolation, LowerBounds, UpperBounds,
};
pub use chain::{
    one_step_fringe, validate_rows, ChainModel, FiniteChain, Reward, SparseRow, StateIndex, TruncationProblem,
    ValidationReport,
};
pub use error::{Error, Result, Stage};
pub use models::{
    gm1_certificate, gm1_certificate_paper_literal, gm1_row, load_chain_from_file, parse_chain,
    random_walk_certificate, random_walk_certificate_paper_literal, random_walk_row, Gm1Chain, Gm1Params, HMode,
    LyapunovCertificate, RandomWalkChain,
};
pub use solver::{assemble_truncated_system, Method, SolveResult, Solver, SolverOptions, TruncatedSystem};
