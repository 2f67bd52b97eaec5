//! Flat `key = value` experiment configs.
//!
//! One entry per line, `#` starts a comment line, keys are dotted
//! (`problem.d`, `method.eta`, `run.replicates`). Lists are comma-separated.
//! Unknown or repeated keys are rejected so typos cannot silently fall back
//! to defaults.
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `problem.name` | `noisy_quadratic`, `linear_regression`, `logistic_regression` | required |
//! | `problem.d` | dimension | required |
//! | `problem.spectrum` | mean-Hessian eigenvalues (quadratic) | required for quadratic |
//! | `problem.hessian_noise_scale` | quadratic Hessian noise | 0 |
//! | `problem.grad_noise_diag` | diagonal gradient-noise covariance (quadratic) | ones |
//! | `problem.design_diag` | diagonal design covariance (regression) | ones |
//! | `problem.noise_std` | response noise (linear) | 1 |
//! | `problem.optimum` | θ* (quadratic, linear) | origin |
//! | `problem.generating_theta` | logistic generating parameter | zeros |
//! | `problem.ridge` | logistic ridge | 0.1 |
//! | `problem.seed` | construction seed | 0 |
//! | `problem.moment_samples` | draws for non-analytic moments | generator default |
//! | `problem.eval_samples` | logistic frozen sample size | generator default |
//! | `method.name` | `root_sgd`, `root_sgd_restart`, `sgd`, `prj_sgd` | required |
//! | `method.setting` | `lsn` or `isc` | `lsn` |
//! | `method.eta` | step size or `max` | required |
//! | `method.step_exponent` | SGD: `η_t = η·t^{-α}`; constant when unset | unset |
//! | `method.burn_in` | override of `⌈24/(μη)⌉` | unset |
//! | `method.strict` | reject runs outside the theory | false |
//! | `run.horizon` | samples per replicate `T` | derived from `run.epsilon` |
//! | `run.epsilon` | target gradient norm `ε` | unset |
//! | `run.theta0` | start point | `θ* + 1` |
//! | `run.replicates` | Monte Carlo replicates | required |
//! | `run.master_seed` | seed for all replicate streams | 0 |
//! | `run.probes` | iterations to record | `T` (restart: each `Δ_k`) |
//! | `run.analysis` | write the covariance report | false |
//! | `run.output` | results directory | `results` |

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use rootsgd::rootsgd::Setting;

/// One problem with a config, tied to the key that caused it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    NoisyQuadratic,
    LinearRegression,
    LogisticRegression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodKind {
    RootSgd,
    RootSgdRestart,
    Sgd,
    PrjSgd,
}

impl MethodKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::RootSgd => "root_sgd",
            Self::RootSgdRestart => "root_sgd_restart",
            Self::Sgd => "sgd",
            Self::PrjSgd => "prj_sgd",
        }
    }
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::NoisyQuadratic => "noisy_quadratic",
            Self::LinearRegression => "linear_regression",
            Self::LogisticRegression => "logistic_regression",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaSpec {
    /// Resolve through the step-size ceiling of the declared setting.
    Max,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    pub d: usize,
    pub spectrum: Option<Vec<f64>>,
    pub hessian_noise_scale: f64,
    pub grad_noise_diag: Option<Vec<f64>>,
    pub design_diag: Option<Vec<f64>>,
    pub noise_std: f64,
    pub optimum: Option<Vec<f64>>,
    pub generating_theta: Option<Vec<f64>>,
    pub ridge: f64,
    pub seed: u64,
    pub moment_samples: Option<usize>,
    pub eval_samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub method: MethodKind,
    pub setting: Setting,
    pub eta: EtaSpec,
    pub step_exponent: Option<f64>,
    pub burn_in: Option<usize>,
    pub strict: bool,
    pub horizon: Option<usize>,
    pub epsilon: Option<f64>,
    pub theta0: Option<Vec<f64>>,
    pub replicates: usize,
    pub master_seed: u64,
    pub probes: Option<Vec<usize>>,
    pub analysis: bool,
    pub output: PathBuf,
}

const KEYS: &[&str] = &[
    "problem.name",
    "problem.d",
    "problem.spectrum",
    "problem.hessian_noise_scale",
    "problem.grad_noise_diag",
    "problem.design_diag",
    "problem.noise_std",
    "problem.optimum",
    "problem.generating_theta",
    "problem.ridge",
    "problem.seed",
    "problem.moment_samples",
    "problem.eval_samples",
    "method.name",
    "method.setting",
    "method.eta",
    "method.step_exponent",
    "method.burn_in",
    "method.strict",
    "run.horizon",
    "run.epsilon",
    "run.theta0",
    "run.replicates",
    "run.master_seed",
    "run.probes",
    "run.analysis",
    "run.output",
];

/// Collects typed values and violations while reading the raw map.
struct Reader {
    raw: BTreeMap<String, String>,
    violations: Vec<Violation>,
}

impl Reader {
    fn get<T>(&mut self, key: &str, parse: impl Fn(&str) -> Result<T, String>) -> Option<T> {
        let text = self.raw.get(key)?.clone();
        match parse(&text) {
            Ok(v) => Some(v),
            Err(msg) => {
                self.violations.push(Violation::new(key, msg));
                None
            }
        }
    }

    fn required<T>(&mut self, key: &str, parse: impl Fn(&str) -> Result<T, String>) -> Option<T> {
        if !self.raw.contains_key(key) {
            self.violations.push(Violation::new(key, "missing required key"));
            return None;
        }
        self.get(key, parse)
    }
}

fn parse_f64(s: &str) -> Result<f64, String> {
    s.parse::<f64>().map_err(|_| format!("expected a number, got {s:?}"))
}

fn parse_usize(s: &str) -> Result<usize, String> {
    s.parse::<usize>()
        .map_err(|_| format!("expected a nonnegative integer, got {s:?}"))
}

fn parse_u64(s: &str) -> Result<u64, String> {
    s.parse::<u64>()
        .map_err(|_| format!("expected a nonnegative integer, got {s:?}"))
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got {s:?}")),
    }
}

fn parse_list<T>(s: &str, item: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    s.split(',').map(|x| item(x.trim())).collect()
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>, String> {
    parse_list(s, parse_f64)
}

impl ExperimentConfig {
    /// Parses config text. Every malformed, missing or unknown key is
    /// reported, not just the first.
    pub fn parse(text: &str) -> Result<Self, Vec<Violation>> {
        let mut raw = BTreeMap::new();
        let mut violations = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                violations.push(Violation::new(
                    format!("line {}", n + 1),
                    format!("expected `key = value`, got {line:?}"),
                ));
                continue;
            };
            let key = key.trim().to_string();
            if !KEYS.contains(&key.as_str()) {
                violations.push(Violation::new(key, "unknown key"));
                continue;
            }
            if raw.insert(key.clone(), value.trim().to_string()).is_some() {
                violations.push(Violation::new(key, "key given more than once"));
            }
        }

        let mut r = Reader { raw, violations };
        let kind = r.required("problem.name", |s| match s {
            "noisy_quadratic" => Ok(ProblemKind::NoisyQuadratic),
            "linear_regression" => Ok(ProblemKind::LinearRegression),
            "logistic_regression" => Ok(ProblemKind::LogisticRegression),
            _ => Err(format!("unknown problem {s:?}")),
        });
        let d = r.required("problem.d", parse_usize);
        let problem = ProblemConfig {
            kind: kind.unwrap_or(ProblemKind::NoisyQuadratic),
            d: d.unwrap_or(0),
            spectrum: r.get("problem.spectrum", parse_f64_list),
            hessian_noise_scale: r.get("problem.hessian_noise_scale", parse_f64).unwrap_or(0.0),
            grad_noise_diag: r.get("problem.grad_noise_diag", parse_f64_list),
            design_diag: r.get("problem.design_diag", parse_f64_list),
            noise_std: r.get("problem.noise_std", parse_f64).unwrap_or(1.0),
            optimum: r.get("problem.optimum", parse_f64_list),
            generating_theta: r.get("problem.generating_theta", parse_f64_list),
            ridge: r.get("problem.ridge", parse_f64).unwrap_or(0.1),
            seed: r.get("problem.seed", parse_u64).unwrap_or(0),
            moment_samples: r.get("problem.moment_samples", parse_usize),
            eval_samples: r.get("problem.eval_samples", parse_usize),
        };
        let method = r.required("method.name", |s| match s {
            "root_sgd" => Ok(MethodKind::RootSgd),
            "root_sgd_restart" => Ok(MethodKind::RootSgdRestart),
            "sgd" => Ok(MethodKind::Sgd),
            "prj_sgd" => Ok(MethodKind::PrjSgd),
            _ => Err(format!("unknown method {s:?}")),
        });
        let setting = r
            .get("method.setting", |s| s.parse::<Setting>().map_err(|e| e.to_string()))
            .unwrap_or(Setting::Lsn);
        let eta = r.required("method.eta", |s| {
            if s == "max" {
                Ok(EtaSpec::Max)
            } else {
                parse_f64(s).map(EtaSpec::Value)
            }
        });
        let cfg = ExperimentConfig {
            problem,
            method: method.unwrap_or(MethodKind::RootSgd),
            setting,
            eta: eta.unwrap_or(EtaSpec::Max),
            step_exponent: r.get("method.step_exponent", parse_f64),
            burn_in: r.get("method.burn_in", parse_usize),
            strict: r.get("method.strict", parse_bool).unwrap_or(false),
            horizon: r.get("run.horizon", parse_usize),
            epsilon: r.get("run.epsilon", parse_f64),
            theta0: r.get("run.theta0", parse_f64_list),
            replicates: r.required("run.replicates", parse_usize).unwrap_or(0),
            master_seed: r.get("run.master_seed", parse_u64).unwrap_or(0),
            probes: r.get("run.probes", |s| parse_list(s, parse_usize)),
            analysis: r.get("run.analysis", parse_bool).unwrap_or(false),
            output: r
                .get("run.output", |s| Ok(PathBuf::from(s)))
                .unwrap_or_else(|| PathBuf::from("results")),
        };
        if r.violations.is_empty() {
            Ok(cfg)
        } else {
            Err(r.violations)
        }
    }
}
