//! Turning a config into a concrete run plan.

use std::path::PathBuf;

use rootsgd::analysis::HessianNoiseModel;
use rootsgd::linalg::{norm_sq, DenseMatrix};
use rootsgd::oracle::{
    LinearRegression, LogisticRegression, LogisticSpec, NoisyQuadratic, NoisyQuadraticSpec,
};
use rootsgd::rootsgd::{
    asymptotic_step_ceiling, burn_in_length, max_step_size, restart_schedule, single_loop_complexity,
    RestartSchedule, Setting, StepPlan,
};
use rootsgd::{ProblemConstants, StochasticProblem};

use crate::config::{EtaSpec, ExperimentConfig, MethodKind, ProblemConfig, ProblemKind, Violation};

/// Any of the built-in generators.
#[derive(Debug, Clone)]
pub enum AnyProblem {
    Quadratic(NoisyQuadratic),
    Linear(LinearRegression),
    Logistic(LogisticRegression),
}

/// Runs `$body` with `$p` bound to the concrete problem.
#[macro_export]
macro_rules! with_problem {
    ($any:expr, $p:ident => $body:expr) => {
        match $any {
            $crate::plan::AnyProblem::Quadratic($p) => $body,
            $crate::plan::AnyProblem::Linear($p) => $body,
            $crate::plan::AnyProblem::Logistic($p) => $body,
        }
    };
}

impl AnyProblem {
    pub fn build(cfg: &ProblemConfig) -> rootsgd::Result<Self> {
        let d = cfg.d;
        let ones = || vec![1.0; d];
        let diag = |v: &Option<Vec<f64>>| DenseMatrix::from_diag(&v.clone().unwrap_or_else(ones));
        Ok(match cfg.kind {
            ProblemKind::NoisyQuadratic => {
                let spectrum = cfg.spectrum.clone().unwrap_or_default();
                let mut spec = NoisyQuadraticSpec::new(
                    spectrum,
                    cfg.hessian_noise_scale,
                    diag(&cfg.grad_noise_diag),
                    cfg.seed,
                );
                if let Some(opt) = &cfg.optimum {
                    spec = spec.with_optimum(opt.clone());
                }
                if let Some(n) = cfg.moment_samples {
                    spec = spec.with_moment_samples(n);
                }
                Self::Quadratic(NoisyQuadratic::new(spec)?)
            }
            ProblemKind::LinearRegression => {
                let opt = cfg.optimum.clone().unwrap_or_else(|| vec![0.0; d]);
                Self::Linear(LinearRegression::new(d, &diag(&cfg.design_diag), cfg.noise_std, &opt)?)
            }
            ProblemKind::LogisticRegression => Self::Logistic(LogisticRegression::new(LogisticSpec {
                design_cov: diag(&cfg.design_diag),
                generating_theta: cfg.generating_theta.clone().unwrap_or_else(|| vec![0.0; d]),
                ridge: cfg.ridge,
                seed: cfg.seed,
                eval_samples: cfg.eval_samples.unwrap_or(1_000_000),
            })?),
        })
    }

    pub fn constants(&self) -> &ProblemConstants {
        with_problem!(self, p => p.constants())
    }

    pub fn dim(&self) -> usize {
        with_problem!(self, p => p.dim())
    }

    pub fn population_grad(&self, theta: &[f64]) -> rootsgd::Result<Vec<f64>> {
        with_problem!(self, p => p.population_grad(theta))
    }
}

/// What each replicate executes.
#[derive(Debug, Clone)]
pub enum ResolvedMethod {
    RootSgd(StepPlan),
    RootSgdRestart(RestartSchedule),
    /// `η_t = eta·t^{-exponent}` (constant when `exponent` is `None`);
    /// `averaged` selects the PRJ average as the reported iterate.
    Sgd {
        eta: f64,
        exponent: Option<f64>,
        averaged: bool,
    },
}

/// A fully concrete experiment: nothing is left to resolve once sampling
/// starts.
#[derive(Debug, Clone)]
pub struct RunPlan {
    pub problem: AnyProblem,
    pub problem_name: &'static str,
    pub method: ResolvedMethod,
    pub method_name: &'static str,
    pub setting: Setting,
    pub eta: f64,
    /// `η_max` of the declared setting, when its constants are known.
    pub eta_ceiling: Option<f64>,
    pub asymptotic_ceiling: Option<f64>,
    pub burn_in: Option<usize>,
    pub theta0: Vec<f64>,
    pub horizon: usize,
    pub replicates: usize,
    pub master_seed: u64,
    pub probes: Vec<usize>,
    pub analysis: bool,
    pub in_theory: bool,
    pub output: PathBuf,
}

impl RunPlan {
    pub fn samples_consumed(&self) -> usize {
        self.horizon * self.replicates
    }

    pub fn noise_model(&self) -> rootsgd::Result<HessianNoiseModel> {
        HessianNoiseModel::from_constants(self.problem.constants())
    }
}

/// Every reason `cfg` cannot run; empty iff [`resolve`] succeeds.
pub fn validate_config(cfg: &ExperimentConfig) -> Vec<Violation> {
    resolve(cfg).err().unwrap_or_default()
}

/// Builds the problem, resolves `η`, `B`, `T` and probes, and applies the
/// strict-mode ceilings.
pub fn resolve(cfg: &ExperimentConfig) -> Result<RunPlan, Vec<Violation>> {
    let mut v = Vec::new();
    if cfg.problem.d == 0 {
        v.push(Violation::new("problem.d", "dimension must be positive"));
    }
    if cfg.replicates == 0 {
        v.push(Violation::new("run.replicates", "need at least one replicate"));
    }
    if cfg.problem.kind == ProblemKind::NoisyQuadratic && cfg.problem.spectrum.is_none() {
        v.push(Violation::new("problem.spectrum", "required for noisy_quadratic"));
    }
    for (key, list) in [
        ("problem.spectrum", &cfg.problem.spectrum),
        ("problem.grad_noise_diag", &cfg.problem.grad_noise_diag),
        ("problem.design_diag", &cfg.problem.design_diag),
        ("problem.optimum", &cfg.problem.optimum),
        ("problem.generating_theta", &cfg.problem.generating_theta),
        ("run.theta0", &cfg.theta0),
    ] {
        if let Some(l) = list {
            if l.len() != cfg.problem.d {
                v.push(Violation::new(key, format!("expected {} entries, got {}", cfg.problem.d, l.len())));
            }
        }
    }
    if !v.is_empty() {
        return Err(v);
    }

    let problem = AnyProblem::build(&cfg.problem).map_err(|e| vec![Violation::new("problem", e.to_string())])?;
    let c = problem.constants().clone();
    let theta0 = cfg
        .theta0
        .clone()
        .unwrap_or_else(|| c.optimum.iter().map(|x| x + 1.0).collect());
    let g0_sq = norm_sq(&problem.population_grad(&theta0).map_err(|e| vec![Violation::new("run.theta0", e.to_string())])?);

    let eta_ceiling = max_step_size(&c, cfg.setting).ok();
    let asymptotic_ceiling = asymptotic_step_ceiling(&c).ok();
    let eta = match cfg.eta {
        EtaSpec::Value(x) => x,
        EtaSpec::Max => match eta_ceiling {
            Some(x) => x,
            None => {
                return Err(vec![Violation::new(
                    "method.eta",
                    "`max` needs the smoothness constants of the declared setting, which this problem lacks",
                )])
            }
        },
    };
    if !(eta > 0.0 && eta.is_finite()) {
        v.push(Violation::new("method.eta", format!("step size must be positive, got {eta}")));
        return Err(v);
    }
    let mut in_theory = eta_ceiling.is_some_and(|ceil| eta <= ceil);
    if cfg.strict {
        match eta_ceiling {
            Some(ceil) if eta > ceil => v.push(Violation::new(
                "method.eta",
                format!("η = {eta} exceeds η_max = {ceil} of the declared setting"),
            )),
            None => v.push(Violation::new(
                "method.eta",
                "strict mode needs the constants of the declared setting",
            )),
            _ => {}
        }
        if cfg.analysis {
            match asymptotic_ceiling {
                Some(ceil) if eta > ceil => v.push(Violation::new(
                    "method.eta",
                    format!("η = {eta} exceeds the limiting-covariance ceiling {ceil}"),
                )),
                None => v.push(Violation::new(
                    "method.eta",
                    "strict mode needs the fourth-moment constant for covariance analysis",
                )),
                _ => {}
            }
        }
    }
    if cfg.analysis {
        in_theory &= asymptotic_ceiling.is_some_and(|ceil| eta <= ceil);
        if cfg.method == MethodKind::RootSgdRestart || cfg.method == MethodKind::Sgd {
            v.push(Violation::new(
                "run.analysis",
                "covariance analysis is available for root_sgd and prj_sgd",
            ));
        }
    }
    if cfg.burn_in == Some(0) {
        v.push(Violation::new("method.burn_in", "must be at least 1"));
    }
    if let Some(eps) = cfg.epsilon {
        if !(eps > 0.0 && eps.is_finite()) {
            v.push(Violation::new("run.epsilon", format!("must be positive, got {eps}")));
        }
    }
    if !v.is_empty() {
        return Err(v);
    }

    let default_b = burn_in_length(c.mu, eta);
    let (method, horizon, burn_in, default_probes) = match cfg.method {
        MethodKind::RootSgd => {
            let b = cfg.burn_in.unwrap_or(default_b);
            if cfg.burn_in.is_some_and(|x| x != default_b) {
                in_theory = false;
            }
            let plan = StepPlan::new(eta, b).map_err(|e| vec![Violation::new("method", e.to_string())])?;
            let horizon = match (cfg.horizon, cfg.epsilon) {
                (Some(t), _) => t,
                (None, Some(eps)) => {
                    single_loop_complexity(g0_sq.sqrt(), eps, eta, c.mu, c.sigma_star_sq).ceil() as usize
                }
                (None, None) => {
                    return Err(vec![Violation::new("run.horizon", "set run.horizon or run.epsilon")]);
                }
            };
            if horizon < b {
                v.push(Violation::new(
                    "run.horizon",
                    format!("T = {horizon} is below the burn-in length B = ⌈24/(μη)⌉ = {b}"),
                ));
            }
            (ResolvedMethod::RootSgd(plan), horizon, Some(b), vec![horizon])
        }
        MethodKind::RootSgdRestart => {
            if cfg.horizon.is_some() {
                v.push(Violation::new(
                    "run.horizon",
                    "root_sgd_restart derives its horizon from run.epsilon",
                ));
            }
            if cfg.burn_in.is_some() {
                v.push(Violation::new("method.burn_in", "restart loops always use ⌈24/(μη)⌉"));
            }
            let Some(eps) = cfg.epsilon else {
                v.push(Violation::new("run.epsilon", "required for root_sgd_restart"));
                return Err(v);
            };
            if g0_sq == 0.0 {
                v.push(Violation::new("run.theta0", "start point is already optimal"));
                return Err(v);
            }
            let schedule =
                restart_schedule(&c, g0_sq, eps * eps, eta).map_err(|e| vec![Violation::new("run.epsilon", e.to_string())])?;
            if schedule.loops() == 0 {
                v.push(Violation::new("run.epsilon", "ε ≥ ‖∇F(θ₀)‖, so no loop is needed"));
                return Err(v);
            }
            let horizon = schedule.total_samples();
            let probes = schedule.timestamps[1..].to_vec();
            (ResolvedMethod::RootSgdRestart(schedule), horizon, Some(default_b), probes)
        }
        MethodKind::Sgd | MethodKind::PrjSgd => {
            if let Some(a) = cfg.step_exponent {
                if !(a > 0.5 && a < 1.0) {
                    v.push(Violation::new("method.step_exponent", format!("must lie in (0.5, 1), got {a}")));
                }
            }
            let Some(horizon) = cfg.horizon else {
                v.push(Violation::new("run.horizon", "required for sgd and prj_sgd"));
                return Err(v);
            };
            // The ROOT-SGD ceilings say nothing about SGD.
            in_theory = false;
            (
                ResolvedMethod::Sgd {
                    eta,
                    exponent: cfg.step_exponent,
                    averaged: cfg.method == MethodKind::PrjSgd,
                },
                horizon,
                None,
                vec![horizon],
            )
        }
    };
    if horizon == 0 {
        v.push(Violation::new("run.horizon", "must be positive"));
    }
    let mut probes = cfg.probes.clone().unwrap_or(default_probes);
    probes.sort_unstable();
    probes.dedup();
    if let Some(bad) = probes.iter().find(|&&t| t == 0 || t > horizon) {
        v.push(Violation::new("run.probes", format!("probe {bad} outside 1..={horizon}")));
    }
    if !v.is_empty() {
        return Err(v);
    }
    Ok(RunPlan {
        problem,
        problem_name: cfg.problem.kind.name(),
        method,
        method_name: cfg.method.name(),
        setting: cfg.setting,
        eta,
        eta_ceiling,
        asymptotic_ceiling,
        burn_in,
        theta0,
        horizon,
        replicates: cfg.replicates,
        master_seed: cfg.master_seed,
        probes,
        analysis: cfg.analysis,
        in_theory,
        output: cfg.output.clone(),
    })
}
