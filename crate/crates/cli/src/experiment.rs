//! Truncation-size sweeps.

use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use stattrunc::oracle::{exact_stationary_finite, simulate_cycles, SimulationOptions};
use stattrunc::{
    default_drift_window, gm1_certificate, gm1_certificate_paper_literal, load_chain_from_file,
    random_walk_certificate, random_walk_certificate_paper_literal, run_pipeline, verify_lyapunov_drift, BoundReport,
    ChainModel, Error, Gm1Chain, Gm1Params, HMode, LyapunovCertificate, RandomWalkChain, Reward, StateIndex,
    TruncationProblem,
};

use crate::config::{ConfigError, ExperimentConfig, ModelSpec, PolynomialCertificate, RewardSpec};

/// Oracle cross-checks only run on sweep points with `a` at most this.
pub const VALIDATE_MAX_A: usize = 2000;

/// One sweep point. Bound columns are empty when the point failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub a: usize,
    pub kappa_lower_r: Option<f64>,
    pub kappa_lower_e: Option<f64>,
    pub kappa_upper_r: Option<f64>,
    pub kappa_upper_e: Option<f64>,
    pub delta: Option<f64>,
    pub beta: Option<f64>,
    pub delta1: Option<f64>,
    pub delta2: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub pi_tilde_r: Option<f64>,
    pub error_bound: Option<f64>,
    pub tv_bound: Option<f64>,
    pub wall_time_seconds: f64,
    pub status: String,
    pub validation: String,
}

impl Row {
    fn failed(a: usize, status: String, wall: f64) -> Self {
        Row {
            a,
            kappa_lower_r: None,
            kappa_lower_e: None,
            kappa_upper_r: None,
            kappa_upper_e: None,
            delta: None,
            beta: None,
            delta1: None,
            delta2: None,
            lower: None,
            upper: None,
            pi_tilde_r: None,
            error_bound: None,
            tv_bound: None,
            wall_time_seconds: wall,
            status,
            validation: String::new(),
        }
    }

    fn from_report(a: usize, r: &BoundReport, wall: f64) -> Self {
        Row {
            a,
            kappa_lower_r: Some(r.kappa_lower_r),
            kappa_lower_e: Some(r.kappa_lower_e),
            kappa_upper_r: Some(r.kappa_upper_r),
            kappa_upper_e: Some(r.kappa_upper_e),
            delta: Some(r.delta),
            beta: Some(r.beta),
            delta1: Some(r.delta1),
            delta2: Some(r.delta2),
            lower: Some(r.lower),
            upper: Some(r.upper),
            pi_tilde_r: Some(r.pi_tilde_r),
            error_bound: Some(r.error_bound),
            tv_bound: Some(r.tv_bound),
            wall_time_seconds: wall,
            status: "ok".into(),
            validation: String::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub rows: Vec<Row>,
    pub warnings: Vec<String>,
}

impl ExperimentResult {
    pub fn all_failed(&self) -> bool {
        self.rows.iter().all(|r| !r.is_ok())
    }
}

struct Model {
    chain: Arc<dyn ChainModel>,
    states: Option<usize>,
    beta0: f64,
}

fn build_model(cfg: &ExperimentConfig) -> Result<Model, ConfigError> {
    let invalid = |e: Error| ConfigError::Invalid(e.to_string());
    Ok(match &cfg.model {
        ModelSpec::Gm1 => {
            let params = Gm1Params {
                c: cfg.model_params.c,
                max_coeff: cfg.model_params.max_coeff,
            };
            let chain = Gm1Chain::new(params).map_err(invalid)?;
            let beta0 = chain.beta(0);
            Model {
                chain: Arc::new(chain),
                states: None,
                beta0,
            }
        }
        ModelSpec::RandomWalk => Model {
            chain: Arc::new(RandomWalkChain),
            states: None,
            beta0: 0.0,
        },
        ModelSpec::File(path) => {
            let chain = load_chain_from_file(path)
                .map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
            Model {
                states: Some(chain.len()),
                chain: Arc::new(chain),
                beta0: 0.0,
            }
        }
    })
}

fn load_table(path: &Path) -> Result<Vec<f64>, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| {
                ConfigError::Invalid(format!("{}:{}: bad reward value {tok:?}", path.display(), i + 1))
            })?;
            out.push(v);
        }
    }
    Ok(out)
}

fn build_reward(cfg: &ExperimentConfig) -> Result<Reward, ConfigError> {
    Ok(match &cfg.reward {
        RewardSpec::Identity => Reward::identity(),
        RewardSpec::Half => Reward::half(),
        RewardSpec::Table(path) => {
            let values = load_table(path)?;
            let last = *cfg.a_values.last().expect("validated non-empty");
            if values.len() < last {
                return Err(ConfigError::Invalid(format!(
                    "reward table {} has {} values, the sweep needs {last}",
                    path.display(),
                    values.len()
                )));
            }
            Reward::table(values)
        }
    })
}

fn certificate(cfg: &ExperimentConfig, model: &Model, a: usize) -> Option<LyapunovCertificate> {
    match (&cfg.model, cfg.h_mode) {
        (ModelSpec::Gm1, HMode::Exact) => Some(gm1_certificate()),
        (ModelSpec::Gm1, HMode::PaperLiteral) => Some(gm1_certificate_paper_literal(a, model.beta0)),
        (ModelSpec::RandomWalk, HMode::Exact) => Some(random_walk_certificate()),
        (ModelSpec::RandomWalk, HMode::PaperLiteral) => Some(random_walk_certificate_paper_literal(a)),
        (ModelSpec::File(_), _) => cfg.certificate.as_ref().map(|c| {
            let (g1, g2) = (c.g1.clone(), c.g2.clone());
            LyapunovCertificate::new(
                "polynomial",
                move |x| PolynomialCertificate::eval(&g1, x.0 as f64),
                move |x| PolynomialCertificate::eval(&g2, x.0 as f64),
            )
        }),
    }
}

fn validate_point(
    cfg: &ExperimentConfig,
    model: &Model,
    problem: &TruncationProblem,
    cert: Option<&LyapunovCertificate>,
    report: &BoundReport,
) -> String {
    let (lo, hi) = report.certified_interval();
    let mut parts = Vec::new();
    if let Some(cert) = cert {
        let drift = verify_lyapunov_drift(problem, cert, &default_drift_window(problem));
        if drift.passed() {
            parts.push(format!("drift ok on {} states", drift.checked_states.len()));
        } else {
            parts.push(format!("FAIL drift violated at {} checks", drift.violations.len()));
        }
    }
    if let Some(n) = model.states {
        match exact_stationary_finite(model.chain.as_ref(), n) {
            Ok(pi) => {
                let pr: f64 = (0..n).map(|x| pi[x] * problem.reward.eval(StateIndex(x))).sum();
                let verdict = if lo <= pr && pr <= hi { "inside" } else { "FAIL outside" };
                parts.push(format!("exact {pr:.12e} {verdict}"));
            }
            Err(e) => parts.push(format!("FAIL exact solve: {e}")),
        }
    } else {
        let opts = SimulationOptions {
            n_cycles: cfg.oracle.n_cycles,
            seed: cfg.oracle.seed,
            ..Default::default()
        };
        match simulate_cycles(model.chain.as_ref(), problem.z(), problem.k(), problem.a(), &problem.reward, opts) {
            Ok(s) => {
                let gap = (s.ratio - s.ratio.clamp(lo, hi)).abs();
                let verdict = if gap <= 3.0 * s.half_width { "consistent" } else { "FAIL inconsistent" };
                parts.push(format!(
                    "simulated {:.6e} +/- {:.1e} ({} cycles) {verdict}",
                    s.ratio, s.half_width, s.n_cycles
                ));
            }
            Err(e) => parts.push(format!("FAIL simulation: {e}")),
        }
    }
    parts.join("; ")
}

fn run_point(
    cfg: &ExperimentConfig,
    model: &Model,
    reward: &Reward,
    a: usize,
    validate: bool,
) -> Row {
    let start = Instant::now();
    let len = cfg.h_mode.truncation_len(a);
    if let Some(n) = model.states {
        if len > n {
            return Row::failed(a, format!("error: a = {a} exceeds the {n}-state chain"), 0.0);
        }
    }
    let problem = match TruncationProblem::prefix(
        Arc::clone(&model.chain),
        len,
        StateIndex(cfg.z),
        cfg.k_max,
        reward.clone(),
    ) {
        Ok(p) => p,
        Err(e) => return Row::failed(a, format!("error: {e}"), 0.0),
    };
    let cert = certificate(cfg, model, a);
    let result = run_pipeline(&problem, cert.as_ref(), &cfg.solver);
    let wall = start.elapsed().as_secs_f64();
    match result {
        Ok(report) => {
            let mut row = Row::from_report(a, &report, wall);
            row.validation = if validate && a <= VALIDATE_MAX_A {
                validate_point(cfg, model, &problem, cert.as_ref(), &report)
            } else {
                "skipped".into()
            };
            row
        }
        Err(e) if e.is_degenerate_delta() => Row::failed(a, format!("degenerate_delta: {e}"), wall),
        Err(e) => Row::failed(a, format!("error: {e}"), wall),
    }
}

fn sweep_warnings(rows: &[Row]) -> Vec<String> {
    let mut out = Vec::new();
    let ok: Vec<&Row> = rows.iter().filter(|r| r.is_ok()).collect();
    for w in ok.windows(2) {
        let (p, n) = (w[0], w[1]);
        let (Some(pl), Some(pu), Some(nl), Some(nu)) = (p.lower, p.upper, n.lower, n.upper) else {
            continue;
        };
        if nl < pl {
            out.push(format!("lower bound decreased from a={} ({pl}) to a={} ({nl})", p.a, n.a));
        }
        if nu - nl > pu - pl {
            out.push(format!(
                "interval widened from a={} ({:e}) to a={} ({:e})",
                p.a,
                pu - pl,
                n.a,
                nu - nl
            ));
        }
    }
    for r in rows.iter().filter(|r| r.validation.contains("FAIL")) {
        out.push(format!("validation failed at a={}: {}", r.a, r.validation));
    }
    out
}

/// Runs every sweep point (in parallel) and returns rows in `a_values` order.
pub fn run_experiment(cfg: &ExperimentConfig, validate: bool) -> Result<ExperimentResult, ConfigError> {
    let model = build_model(cfg)?;
    let reward = build_reward(cfg)?;
    let validate = validate || cfg.oracle.enabled;
    let rows: Vec<Row> = thread::scope(|s| {
        let handles: Vec<_> = cfg
            .a_values
            .iter()
            .map(|&a| {
                let (model, reward) = (&model, &reward);
                s.spawn(move || run_point(cfg, model, reward, a, validate))
            })
            .collect();
        handles
            .into_iter()
            .zip(&cfg.a_values)
            .map(|(h, &a)| {
                h.join()
                    .unwrap_or_else(|_| Row::failed(a, "error: sweep point panicked".into(), 0.0))
            })
            .collect()
    });
    let warnings = sweep_warnings(&rows);
    Ok(ExperimentResult { rows, warnings })
}
