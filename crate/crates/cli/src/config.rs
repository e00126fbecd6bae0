//! TOML experiment configuration.
//!
//! ```toml
//! model = "gm1"                 # gm1 | random_walk | "file:chain.txt"
//! z = 0
//! k_max = 200                   # K = {0, .., k_max}
//! a_values = [1000, 5000, 10000] # A = {0, .., a-1}; {0, .., a} with paper_literal
//! reward = "identity"           # identity | half | "table:reward.txt"
//! h_mode = "exact"              # exact | paper_literal
//!
//! [model_params]
//! c = 2.01
//!
//! [solver]
//! tol = 1e-12
//!
//! [oracle]
//! enabled = false
//! n_cycles = 100000
//! seed = 1
//!
//! [output]
//! format = "csv"
//! path = "gm1.csv"
//!
//! # Polynomial certificate for file models: g(x) = Σ_i c_i x^i.
//! [certificate]
//! g1 = [0.0, 0.0, 1.0]
//! g2 = [0.0, 0.0, 1.0]
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use stattrunc::{HMode, Method, SolverOptions};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {err}", path = .0.display(), err = .1)]
    Io(PathBuf, #[source] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelSpec {
    Gm1,
    RandomWalk,
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub enum RewardSpec {
    Identity,
    Half,
    Table(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum HModeRaw {
    #[default]
    Exact,
    PaperLiteral,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum MethodRaw {
    #[default]
    Auto,
    Direct,
    FixedPoint,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Raw {
    model: String,
    #[serde(default)]
    model_params: ModelParams,
    #[serde(default)]
    z: usize,
    k_max: usize,
    a_values: Vec<usize>,
    #[serde(default = "default_reward")]
    reward: String,
    #[serde(default)]
    h_mode: HModeRaw,
    #[serde(default)]
    solver: SolverSection,
    #[serde(default)]
    oracle: OracleConfig,
    #[serde(default)]
    output: OutputSection,
    certificate: Option<PolynomialCertificate>,
}

fn default_reward() -> String {
    "identity".into()
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// G/M/1 interarrival support endpoint.
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_max_coeff")]
    pub max_coeff: usize,
}

fn default_c() -> f64 {
    stattrunc::models::GM1_DEFAULT_C
}

fn default_max_coeff() -> usize {
    256
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            c: default_c(),
            max_coeff: default_max_coeff(),
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverSection {
    tol: Option<f64>,
    max_iter: Option<usize>,
    memory_budget: Option<usize>,
    #[serde(default)]
    method: MethodRaw,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_cycles")]
    pub n_cycles: u64,
    #[serde(default)]
    pub seed: u64,
}

fn default_cycles() -> u64 {
    100_000
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            enabled: false,
            n_cycles: default_cycles(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    #[serde(default)]
    format: Format,
    path: Option<PathBuf>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PolynomialCertificate {
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
}

impl PolynomialCertificate {
    pub fn eval(coeffs: &[f64], x: f64) -> f64 {
        coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub model_params: ModelParams,
    pub z: usize,
    pub k_max: usize,
    pub a_values: Vec<usize>,
    pub reward: RewardSpec,
    pub h_mode: HMode,
    pub solver: SolverOptions,
    pub oracle: OracleConfig,
    pub format: Format,
    pub output_path: Option<PathBuf>,
    pub certificate: Option<PolynomialCertificate>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let raw: Raw = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let model = match raw.model.as_str() {
            "gm1" => ModelSpec::Gm1,
            "random_walk" => ModelSpec::RandomWalk,
            m => match m.strip_prefix("file:") {
                Some(p) if !p.is_empty() => ModelSpec::File(resolve(p)),
                _ => {
                    return Err(ConfigError::Invalid(format!(
                        "model must be gm1, random_walk or file:<path>, got {m:?}"
                    )))
                }
            },
        };
        let reward = match raw.reward.as_str() {
            "identity" => RewardSpec::Identity,
            "half" => RewardSpec::Half,
            r => match r.strip_prefix("table:") {
                Some(p) if !p.is_empty() => RewardSpec::Table(resolve(p)),
                _ => {
                    return Err(ConfigError::Invalid(format!(
                        "reward must be identity, half or table:<path>, got {r:?}"
                    )))
                }
            },
        };
        let h_mode = match raw.h_mode {
            HModeRaw::Exact => HMode::Exact,
            HModeRaw::PaperLiteral => HMode::PaperLiteral,
        };
        let mut solver = SolverOptions::default();
        if let Some(t) = raw.solver.tol {
            solver.tol = t;
        }
        if let Some(m) = raw.solver.max_iter {
            solver.max_iter = m;
        }
        if let Some(b) = raw.solver.memory_budget {
            solver.memory_budget = b;
        }
        solver.method = match raw.solver.method {
            MethodRaw::Auto => Method::Auto,
            MethodRaw::Direct => Method::Direct,
            MethodRaw::FixedPoint => Method::FixedPoint,
        };
        let cfg = ExperimentConfig {
            model,
            model_params: raw.model_params,
            z: raw.z,
            k_max: raw.k_max,
            a_values: raw.a_values,
            reward,
            h_mode,
            solver,
            oracle: raw.oracle,
            format: raw.output.format,
            output_path: raw.output.path.map(|p| resolve(&p.to_string_lossy())),
            certificate: raw.certificate,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let Some(&first) = self.a_values.first() else {
            return bad("a_values is empty".into());
        };
        if self.a_values.windows(2).any(|w| w[0] >= w[1]) {
            return bad("a_values must be strictly increasing".into());
        }
        if self.z > self.k_max {
            return bad(format!("z = {} exceeds k_max = {}", self.z, self.k_max));
        }
        if self.k_max >= first {
            return bad(format!("k_max = {} must be below the smallest a = {first}", self.k_max));
        }
        if !(self.solver.tol > 0.0) {
            return bad(format!("solver.tol must be positive, got {}", self.solver.tol));
        }
        if !(self.model_params.c > 0.0) || self.model_params.max_coeff == 0 {
            return bad("model_params.c must be positive and max_coeff at least 1".into());
        }
        if self.oracle.enabled && self.oracle.n_cycles == 0 {
            return bad("oracle.n_cycles must be at least 1".into());
        }
        if let ModelSpec::File(_) = self.model {
            if self.h_mode == HMode::PaperLiteral {
                return bad("h_mode = paper_literal applies only to gm1 and random_walk".into());
            }
        } else if self.certificate.is_some() {
            return bad("[certificate] applies only to file models".into());
        }
        if let Some(c) = &self.certificate {
            if c.g1.is_empty() || c.g2.is_empty() {
                return bad("certificate polynomials need at least one coefficient".into());
            }
        }
        Ok(())
    }
}
