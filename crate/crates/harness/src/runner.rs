//! Replicate execution and CSV output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rootsgd::analysis::{empirical_covariance, mean_and_se, CovarianceReport};
use rootsgd::baselines::{SgdState, StepSchedule};
use rootsgd::linalg::{dist_sq, norm_sq};
use rootsgd::rng::{replicate_stream, Stream};
use rootsgd::rootsgd::{run, run_with_restarts, ProbeRecorder};
use rootsgd::StochasticProblem;

use crate::plan::{ResolvedMethod, RunPlan};
use crate::with_problem;
use crate::HarnessError;

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "ROOTSGD_WORKERS";

pub const REPLICATES_HEADER: &str = "replicate,t,grad_norm_sq,dist_sq,v_norm_sq,z_norm_sq";
pub const SUMMARY_HEADER: &str = "t,replicates,grad_norm_sq_mean,grad_norm_sq_se,dist_sq_mean,dist_sq_se,\
v_norm_sq_mean,v_norm_sq_se,z_norm_sq_mean,z_norm_sq_se";

/// One probed iteration of one replicate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRow {
    pub t: usize,
    pub grad_norm_sq: f64,
    pub dist_sq: f64,
    pub v_norm_sq: f64,
    pub z_norm_sq: f64,
}

#[derive(Debug, Clone)]
pub struct ReplicateResult {
    pub rows: Vec<ProbeRow>,
    /// `√T(θ_T − θ*)`, with `θ_T` the reported iterate (the PRJ average for
    /// `prj_sgd`).
    pub scaled_error: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub t: usize,
    pub replicates: usize,
    /// `(mean, standard error)` of each probed quantity.
    pub grad_norm_sq: (f64, f64),
    pub dist_sq: (f64, f64),
    pub v_norm_sq: (f64, f64),
    pub z_norm_sq: (f64, f64),
}

#[derive(Debug)]
pub struct RunOutcome {
    pub replicates: Vec<ReplicateResult>,
    pub summary: Vec<SummaryRow>,
    pub covariance: Option<CovarianceReport>,
    pub samples_consumed: usize,
    /// Paths written, in order.
    pub files: Vec<PathBuf>,
}

/// Worker count from [`WORKERS_ENV`], else the available parallelism.
pub fn workers_from_env() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn run_replicate(plan: &RunPlan, r: usize) -> rootsgd::Result<ReplicateResult> {
    with_problem!(&plan.problem, p => run_replicate_on(p, plan, r))
}

fn run_replicate_on<P: StochasticProblem>(p: &P, plan: &RunPlan, r: usize) -> rootsgd::Result<ReplicateResult> {
    let mut rng = replicate_stream(plan.master_seed, r as u64);
    let opt = &p.constants().optimum;
    let (rows, theta) = match &plan.method {
        ResolvedMethod::RootSgd(step_plan) => {
            let mut rec = ProbeRecorder::new(&plan.probes);
            let out = run(p, &plan.theta0, step_plan, plan.horizon, &mut rng, &mut rec)?;
            (probe_rows(rec), out.theta)
        }
        ResolvedMethod::RootSgdRestart(schedule) => {
            let mut rec = ProbeRecorder::new(&plan.probes);
            let out = run_with_restarts(p, &plan.theta0, schedule, &mut rng, &mut rec)?;
            (probe_rows(rec), out.theta)
        }
        ResolvedMethod::Sgd { eta, exponent, averaged } => {
            let schedule = match exponent {
                Some(a) => StepSchedule::polynomial(*eta, *a)?,
                None => StepSchedule::constant(*eta)?,
            };
            sgd_rows(p, plan, &schedule, *averaged, &mut rng)?
        }
    };
    let scale = (plan.horizon as f64).sqrt();
    let scaled_error = theta.iter().zip(opt).map(|(t, o)| scale * (t - o)).collect();
    Ok(ReplicateResult { rows, scaled_error })
}

fn probe_rows(rec: ProbeRecorder) -> Vec<ProbeRow> {
    rec.into_records()
        .into_iter()
        .map(|r| ProbeRow {
            t: r.t,
            grad_norm_sq: r.grad_norm_sq,
            dist_sq: r.dist_sq,
            v_norm_sq: r.v_norm_sq(),
            z_norm_sq: r.z_norm_sq(),
        })
        .collect()
}

/// SGD with probes. `v` is the stochastic gradient of the step and `z` its
/// deviation from `∇F(θ̂_{t-1})`; gradient norm and distance are taken at the
/// reported iterate.
fn sgd_rows<P: StochasticProblem>(
    p: &P,
    plan: &RunPlan,
    schedule: &StepSchedule,
    averaged: bool,
    rng: &mut Stream,
) -> rootsgd::Result<(Vec<ProbeRow>, Vec<f64>)> {
    let d = p.dim();
    let opt = &p.constants().optimum;
    let mut state = SgdState::new(&plan.theta0);
    let mut sample = p.empty_sample();
    let mut before = vec![0.0; d];
    let mut pop = vec![0.0; d];
    let mut rows = Vec::with_capacity(plan.probes.len());
    let mut next = 0;
    for t in 1..=plan.horizon {
        let probed = plan.probes.get(next) == Some(&t);
        if probed {
            before.copy_from_slice(state.theta());
        }
        p.draw_into(rng, &mut sample);
        state.sgd_step(p, &sample, schedule.at(t))?;
        state.prj_update();
        if probed {
            next += 1;
            let g = state.last_gradient();
            p.population_grad_into(&before, &mut pop);
            let z_norm_sq = g.iter().zip(&pop).map(|(a, b)| (a - b) * (a - b)).sum();
            let shown = if averaged { state.average() } else { state.theta() };
            p.population_grad_into(shown, &mut pop);
            rows.push(ProbeRow {
                t,
                grad_norm_sq: norm_sq(&pop),
                dist_sq: dist_sq(shown, opt),
                v_norm_sq: norm_sq(g),
                z_norm_sq,
            });
        }
    }
    let theta = if averaged { state.average() } else { state.theta() };
    Ok((rows, theta.to_vec()))
}

fn summarize(plan: &RunPlan, reps: &[ReplicateResult]) -> Vec<SummaryRow> {
    plan.probes
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let col = |f: fn(&ProbeRow) -> f64| {
                let vals: Vec<f64> = reps.iter().map(|r| f(&r.rows[k])).collect();
                mean_and_se(&vals)
            };
            SummaryRow {
                t,
                replicates: reps.len(),
                grad_norm_sq: col(|r| r.grad_norm_sq),
                dist_sq: col(|r| r.dist_sq),
                v_norm_sq: col(|r| r.v_norm_sq),
                z_norm_sq: col(|r| r.z_norm_sq),
            }
        })
        .collect()
}

pub fn replicates_csv(reps: &[ReplicateResult]) -> String {
    let mut out = format!("{REPLICATES_HEADER}\n");
    for (i, r) in reps.iter().enumerate() {
        for row in &r.rows {
            let _ = writeln!(
                out,
                "{i},{},{:.16e},{:.16e},{:.16e},{:.16e}",
                row.t, row.grad_norm_sq, row.dist_sq, row.v_norm_sq, row.z_norm_sq
            );
        }
    }
    out
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.t,
            r.replicates,
            r.grad_norm_sq.0,
            r.grad_norm_sq.1,
            r.dist_sq.0,
            r.dist_sq.1,
            r.v_norm_sq.0,
            r.v_norm_sq.1,
            r.z_norm_sq.0,
            r.z_norm_sq.1
        );
    }
    out
}

/// `key,value` lines describing the resolved plan. Everything in it is a
/// function of the config, so it is byte-stable across runs.
pub fn manifest_csv(plan: &RunPlan) -> String {
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.16e}"));
    let mut out = String::from("key,value\n");
    let _ = writeln!(out, "problem,{}", plan.problem_name);
    let _ = writeln!(out, "method,{}", plan.method_name);
    let _ = writeln!(out, "setting,{:?}", plan.setting);
    let _ = writeln!(out, "eta,{:.16e}", plan.eta);
    let _ = writeln!(out, "eta_ceiling,{}", opt(plan.eta_ceiling));
    let _ = writeln!(out, "asymptotic_ceiling,{}", opt(plan.asymptotic_ceiling));
    let _ = writeln!(out, "burn_in,{}", plan.burn_in.map_or(String::new(), |b| b.to_string()));
    let _ = writeln!(out, "horizon,{}", plan.horizon);
    let _ = writeln!(out, "replicates,{}", plan.replicates);
    let _ = writeln!(out, "master_seed,{}", plan.master_seed);
    let _ = writeln!(out, "samples_consumed,{}", plan.samples_consumed());
    let _ = writeln!(out, "in_theory,{}", plan.in_theory);
    if let ResolvedMethod::RootSgdRestart(s) = &plan.method {
        let ts: Vec<String> = s.timestamps.iter().map(|t| t.to_string()).collect();
        let _ = writeln!(out, "restart_loops,{}", s.loops());
        let _ = writeln!(out, "restart_timestamps,{}", ts.join(" "));
        let _ = writeln!(out, "restart_complexity_bound,{:.16e}", s.complexity_bound());
    }
    out
}

/// Runs every replicate on `workers` threads and returns the results in
/// replicate order, without touching the filesystem.
pub fn execute(plan: &RunPlan, workers: usize) -> Result<RunOutcome, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Runtime(e.to_string()))?;
    let replicates: Vec<ReplicateResult> = pool.install(|| {
        (0..plan.replicates)
            .into_par_iter()
            .map(|r| run_replicate(plan, r))
            .collect::<rootsgd::Result<Vec<_>>>()
    })?;
    let summary = summarize(plan, &replicates);
    let covariance = if plan.analysis {
        let model = plan.noise_model()?;
        let report = match plan.method {
            ResolvedMethod::RootSgd(_) => CovarianceReport::predict(&model, plan.eta)?,
            _ => CovarianceReport::against_cramer_rao(&model)?,
        };
        if replicates.len() >= 2 {
            let errs: Vec<Vec<f64>> = replicates.iter().map(|r| r.scaled_error.clone()).collect();
            Some(report.with_empirical(empirical_covariance(&errs)?)?)
        } else {
            Some(report)
        }
    } else {
        None
    };
    Ok(RunOutcome {
        replicates,
        summary,
        covariance,
        samples_consumed: plan.samples_consumed(),
        files: Vec::new(),
    })
}

/// [`execute`], then write `manifest.csv`, `replicates.csv`, `summary.csv`
/// and (with analysis) `covariance.csv` into `dir`.
pub fn run_experiment_in(plan: &RunPlan, dir: &Path, workers: usize) -> Result<RunOutcome, HarnessError> {
    let mut outcome = execute(plan, workers)?;
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut write = |name: &str, body: String| -> Result<(), HarnessError> {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| HarnessError::io(&path, e))?;
        outcome.files.push(path);
        Ok(())
    };
    write("manifest.csv", manifest_csv(plan))?;
    write("replicates.csv", replicates_csv(&outcome.replicates))?;
    write("summary.csv", summary_csv(&outcome.summary))?;
    if let Some(report) = &outcome.covariance {
        write("covariance.csv", report.to_csv())?;
    }
    Ok(outcome)
}

/// [`run_experiment_in`] the plan's own output directory.
pub fn run_experiment(plan: &RunPlan, workers: usize) -> Result<RunOutcome, HarnessError> {
    let dir = plan.output.clone();
    run_experiment_in(plan, &dir, workers)
}
