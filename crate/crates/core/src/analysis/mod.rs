//! Limiting-covariance toolkit.
//!
//! ROOT-SGD with constant step `η` satisfies
//! `√T(θ_T − θ*) → N(0, H⁻¹(Σ* + E[ΞΛ_ηΞ])H⁻¹)` where `Λ_η` solves
//!
//! ```text
//! ΛH + HΛ − η·E[ΞΛΞ] − η·HΛH = η·Σ*
//! ```
//!
//! Matrices are vectorized row-major, so `vec(AXB) = (A ⊗ Bᵀ)·vec(X)` and the
//! equation becomes `(H⊗I + I⊗H − η·E[Ξ⊗Ξ] − η·H⊗H)·vec(Λ) = η·vec(Σ*)`.

use std::fmt::Write as _;

use rand::Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::linalg::{kron, norm_sq, DenseMatrix, Lu, SymmetricEigen};
use crate::oracle::{apply_noise_tensor, ProblemConstants, Provenance, StochasticProblem};
use crate::rootsgd::{drive_step, Observer, RootSgdState, StepPlan, StepView};

/// `H*`, `Σ*` and the flattened `E[Ξ(θ*) ⊗ Ξ(θ*)]`.
#[derive(Debug, Clone)]
pub struct HessianNoiseModel {
    pub hessian: DenseMatrix,
    pub noise_cov: DenseMatrix,
    pub noise_tensor: DenseMatrix,
    pub provenance: Provenance,
}

impl HessianNoiseModel {
    pub fn new(
        hessian: DenseMatrix,
        noise_cov: DenseMatrix,
        noise_tensor: DenseMatrix,
        provenance: Provenance,
    ) -> Result<Self> {
        let d = hessian.rows();
        if !hessian.is_square() {
            return Err(Error::NotSquare {
                rows: hessian.rows(),
                cols: hessian.cols(),
            });
        }
        if noise_cov.rows() != d || noise_cov.cols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: noise_cov.rows(),
            });
        }
        if noise_tensor.rows() != d * d || noise_tensor.cols() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                found: noise_tensor.rows(),
            });
        }
        hessian.check_symmetric()?;
        noise_cov.check_symmetric()?;
        // The tensor must map symmetric matrices to symmetric matrices.
        for i in 0..d {
            for j in i..d {
                let mut e = DenseMatrix::zeros(d, d);
                e[(i, j)] = 1.0;
                e[(j, i)] = 1.0;
                apply_noise_tensor(&noise_tensor, &e)?.check_symmetric()?;
            }
        }
        Ok(Self {
            hessian,
            noise_cov,
            noise_tensor,
            provenance,
        })
    }

    pub fn from_constants(c: &ProblemConstants) -> Result<Self> {
        Self::new(
            c.hessian_at_optimum.clone(),
            c.noise_cov_at_optimum.clone(),
            c.hessian_noise_tensor.clone(),
            c.provenance,
        )
    }

    pub fn dim(&self) -> usize {
        self.hessian.rows()
    }

    /// `H⊗I + I⊗H − η·E[Ξ⊗Ξ] − η·H⊗H`.
    pub fn lambda_operator(&self, eta: f64) -> DenseMatrix {
        let d = self.dim();
        let id = DenseMatrix::identity(d);
        let h = &self.hessian;
        let mut op = kron(h, &id);
        let hh = kron(h, h);
        let hi = kron(&id, h);
        let out = op.as_mut_slice();
        for (k, o) in out.iter_mut().enumerate() {
            *o += hi.as_slice()[k] - eta * (self.noise_tensor.as_slice()[k] + hh.as_slice()[k]);
        }
        op
    }

    /// Left side of the `Λ` equation applied to `m`, scaled by `1/η`:
    /// `(MH + HM − η·E[ΞMΞ] − η·HMH)/η`.
    fn apply_operator(&self, m: &DenseMatrix, eta: f64) -> Result<DenseMatrix> {
        let h = &self.hessian;
        let mh = m.matmul(h)?;
        let hm = h.matmul(m)?;
        let hmh = hm.matmul(h)?;
        let xmx = apply_noise_tensor(&self.noise_tensor, m)?;
        mh.add(&hm)?.sub(&xmx.scale(eta))?.sub(&hmh.scale(eta))
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {eta}")));
    }
    Ok(())
}

/// `H⁻¹ Σ H⁻¹`, the optimal limiting covariance.
pub fn cramer_rao(hessian: &DenseMatrix, noise_cov: &DenseMatrix) -> Result<DenseMatrix> {
    hessian.check_symmetric()?;
    let lu = Lu::factor(hessian)?;
    let left = lu.solve_matrix(noise_cov)?;
    // (H⁻¹ Σ) H⁻¹ = (H⁻¹ (H⁻¹ Σ)ᵀ)ᵀ for symmetric H
    let both = lu.solve_matrix(&left.transpose())?.transpose();
    Ok(both.symmetrized())
}

/// Solves `op·vec(X) = rhs` and enforces the residual and symmetry checks
/// shared by the `Λ` and `Q` equations.
fn solve_vectorized(model: &HessianNoiseModel, eta: f64, rhs: &DenseMatrix) -> Result<DenseMatrix> {
    let d = model.dim();
    let op = model.lambda_operator(eta);
    let x = Lu::factor(&op)?.solve(rhs.as_slice())?;
    let ax = op.matvec(&x)?;
    let residual = ax
        .iter()
        .zip(rhs.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let tolerance = 1e-10 * rhs.frobenius_norm().max(f64::MIN_POSITIVE);
    if residual > tolerance {
        return Err(Error::SolveResidual { residual, tolerance });
    }
    let m = DenseMatrix::from_row_major(d, d, x)?;
    let asym = m.asymmetry();
    if asym > 1e-10 * (1.0 + m.max_abs()) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(m.symmetrized())
}

/// `Λ_η` by a direct solve of the vectorized equation.
pub fn solve_lambda(model: &HessianNoiseModel, eta: f64) -> Result<DenseMatrix> {
    check_eta(eta)?;
    solve_vectorized(model, eta, &model.noise_cov.scale(eta))
}

/// Stationary covariance `Q_η` of the auxiliary process, solved directly from
/// `HQ + QH − η(HQH + E[ΞQΞ]) = Σ*/η`. Equals `Λ_η/η²`.
pub fn stationary_q(model: &HessianNoiseModel, eta: f64) -> Result<DenseMatrix> {
    check_eta(eta)?;
    solve_vectorized(model, eta, &model.noise_cov.scale(1.0 / eta))
}

/// `‖ΛH + HΛ − η·E[ΞΛΞ] − η·HΛH − η·Σ*‖_F / ‖η·Σ*‖_F`.
pub fn lambda_residual(model: &HessianNoiseModel, eta: f64, lambda: &DenseMatrix) -> Result<f64> {
    let lhs = model.apply_operator(lambda, eta)?;
    let rhs = model.noise_cov.scale(eta);
    Ok(lhs.sub(&rhs)?.frobenius_norm() / rhs.frobenius_norm().max(f64::MIN_POSITIVE))
}

/// `H⁻¹ E[ΞΛΞ] H⁻¹`.
pub fn correction(model: &HessianNoiseModel, lambda: &DenseMatrix) -> Result<DenseMatrix> {
    let xlx = apply_noise_tensor(&model.noise_tensor, lambda)?.symmetrized();
    cramer_rao(&model.hessian, &xlx)
}

/// Sample covariance with per-entry jackknife standard errors.
#[derive(Debug, Clone)]
pub struct EmpiricalCovariance {
    pub mean: Vec<f64>,
    pub covariance: DenseMatrix,
    pub std_errors: DenseMatrix,
    pub replicates: usize,
}

impl EmpiricalCovariance {
    /// True when every entry of `target` lies within `k` standard errors.
    pub fn within_std_errors(&self, target: &DenseMatrix, k: f64) -> bool {
        let d = self.covariance.rows();
        (0..d).all(|i| {
            (0..d).all(|j| (self.covariance[(i, j)] - target[(i, j)]).abs() <= k * self.std_errors[(i, j)])
        })
    }
}

/// Mean-centered covariance (divisor `n − 1`) of the rows of `samples`.
///
/// Jackknife errors use the closed-form leave-one-out covariance
/// `c₋ₖ = (S − n/(n−1)·aₖaₖᵀ)/(n−2)` with `aₖ` the centered sample, so the
/// cost is one pass. With two samples the errors are infinite.
pub fn empirical_covariance(samples: &[Vec<f64>]) -> Result<EmpiricalCovariance> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InsufficientReplicates { required: 2, found: n });
    }
    let d = samples[0].len();
    if let Some(bad) = samples.iter().find(|s| s.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: bad.len(),
        });
    }
    let nf = n as f64;
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(s) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nf);

    // Products aₖᵢaₖⱼ: mean and spread across k.
    let mut sum = DenseMatrix::zeros(d, d);
    let mut a = vec![0.0; d];
    for s in samples {
        for i in 0..d {
            a[i] = s[i] - mean[i];
        }
        for i in 0..d {
            for j in 0..d {
                sum[(i, j)] += a[i] * a[j];
            }
        }
    }
    let pbar = sum.scale(1.0 / nf);
    let mut spread = DenseMatrix::zeros(d, d);
    for s in samples {
        for i in 0..d {
            a[i] = s[i] - mean[i];
        }
        for i in 0..d {
            for j in 0..d {
                let dev = a[i] * a[j] - pbar[(i, j)];
                spread[(i, j)] += dev * dev;
            }
        }
    }
    let covariance = sum.scale(1.0 / (nf - 1.0)).symmetrized();
    let std_errors = if n == 2 {
        DenseMatrix::from_row_major(d, d, vec![f64::INFINITY; d * d])?
    } else {
        let r = nf / (nf - 1.0) / (nf - 2.0);
        spread.scale((nf - 1.0) / nf * r * r).symmetrized()
    };
    let std_errors =
        DenseMatrix::from_row_major(d, d, std_errors.as_slice().iter().map(|v| v.sqrt()).collect())?;
    Ok(EmpiricalCovariance {
        mean,
        covariance,
        std_errors,
        replicates: n,
    })
}

/// Predicted and (optionally) observed limiting covariance.
#[derive(Debug, Clone)]
pub struct CovarianceReport {
    /// `None` for a report against the Cramér–Rao matrix alone.
    pub eta: Option<f64>,
    pub cramer_rao: DenseMatrix,
    pub lambda_eta: DenseMatrix,
    pub correction: DenseMatrix,
    pub predicted_total: DenseMatrix,
    pub empirical: Option<EmpiricalCovariance>,
    /// `‖empirical − predicted_total‖_F / ‖predicted_total‖_F`.
    pub frobenius_relative_gap: Option<f64>,
}

impl CovarianceReport {
    pub fn predict(model: &HessianNoiseModel, eta: f64) -> Result<Self> {
        let cr = cramer_rao(&model.hessian, &model.noise_cov)?;
        let lambda_eta = solve_lambda(model, eta)?;
        let corr = correction(model, &lambda_eta)?;
        let predicted_total = cr.add(&corr)?.symmetrized();
        Ok(Self {
            eta: Some(eta),
            cramer_rao: cr,
            lambda_eta,
            correction: corr,
            predicted_total,
            empirical: None,
            frobenius_relative_gap: None,
        })
    }

    /// Report whose prediction is the Cramér–Rao matrix itself, as for
    /// averaged SGD. `Λ` and the correction are zero.
    pub fn against_cramer_rao(model: &HessianNoiseModel) -> Result<Self> {
        let cr = cramer_rao(&model.hessian, &model.noise_cov)?;
        let d = model.dim();
        Ok(Self {
            eta: None,
            predicted_total: cr.clone(),
            cramer_rao: cr,
            lambda_eta: DenseMatrix::zeros(d, d),
            correction: DenseMatrix::zeros(d, d),
            empirical: None,
            frobenius_relative_gap: None,
        })
    }

    pub fn with_empirical(mut self, empirical: EmpiricalCovariance) -> Result<Self> {
        let gap = empirical.covariance.sub(&self.predicted_total)?.frobenius_norm()
            / self.predicted_total.frobenius_norm().max(f64::MIN_POSITIVE);
        self.frobenius_relative_gap = Some(gap);
        self.empirical = Some(empirical);
        Ok(self)
    }

    /// The acceptance band: within `frob_rel` Frobenius-relative, or every
    /// entry within `k` jackknife standard errors. False without empirical data.
    pub fn within_tolerance(&self, k: f64, frob_rel: f64) -> bool {
        match (&self.empirical, self.frobenius_relative_gap) {
            (Some(emp), Some(gap)) => gap <= frob_rel || emp.within_std_errors(&self.predicted_total, k),
            _ => false,
        }
    }

    /// Flat CSV block with header `quantity,row,col,value`. Matrix entries
    /// come first (`cramer_rao`, `lambda_eta`, `correction`,
    /// `predicted_total`, then `empirical` and `empirical_se` when present),
    /// followed by scalar rows (`eta`, `replicates`,
    /// `frobenius_relative_gap`, each only when known) with empty `row` and
    /// `col`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("quantity,row,col,value\n");
        let mut put = |name: &str, m: &DenseMatrix| {
            for i in 0..m.rows() {
                for j in 0..m.cols() {
                    let _ = writeln!(out, "{name},{i},{j},{:.16e}", m[(i, j)]);
                }
            }
        };
        put("cramer_rao", &self.cramer_rao);
        put("lambda_eta", &self.lambda_eta);
        put("correction", &self.correction);
        put("predicted_total", &self.predicted_total);
        if let Some(emp) = &self.empirical {
            put("empirical", &emp.covariance);
            put("empirical_se", &emp.std_errors);
        }
        if let Some(eta) = self.eta {
            let _ = writeln!(out, "eta,,,{eta:.16e}");
        }
        if let Some(emp) = &self.empirical {
            let _ = writeln!(out, "replicates,,,{}", emp.replicates);
        }
        if let Some(gap) = self.frobenius_relative_gap {
            let _ = writeln!(out, "frobenius_relative_gap,,,{gap:.16e}");
        }
        out
    }
}

/// Trajectory summary of the auxiliary process.
#[derive(Debug, Clone)]
pub struct YTrace {
    /// Final `y`.
    pub y: Vec<f64>,
    /// `(step, y)` at the requested steps.
    pub records: Vec<(usize, Vec<f64>)>,
    /// Time average of `y yᵀ` over all simulated steps.
    pub second_moment: DenseMatrix,
    pub steps: usize,
}

/// Scratch for one `y ← y − ηH_ξ(θ*)y + ε_ξ(θ*)` update.
struct YStepper {
    grad: Vec<f64>,
    pop: Vec<f64>,
    hy: Vec<f64>,
}

impl YStepper {
    fn new<P: StochasticProblem>(p: &P) -> Self {
        let d = p.dim();
        let mut pop = vec![0.0; d];
        p.population_grad_into(&p.constants().optimum, &mut pop);
        Self {
            grad: vec![0.0; d],
            pop,
            hy: vec![0.0; d],
        }
    }

    fn step<P: StochasticProblem>(&mut self, p: &P, sample: &P::Sample, eta: f64, y: &mut [f64]) -> Result<()> {
        let opt = &p.constants().optimum;
        p.hessian_vec_into(opt, sample, y, &mut self.hy)?;
        p.grad_into(opt, sample, &mut self.grad);
        for i in 0..y.len() {
            y[i] += -eta * self.hy[i] + (self.grad[i] - self.pop[i]);
        }
        Ok(())
    }
}

/// Simulates `y_t = y_{t-1} − ηH_t(θ*)y_{t-1} + ε_t(θ*)` for `steps` steps
/// from `y0`, recording `y` after the steps listed in `record`.
pub fn simulate_y<P, R>(
    p: &P,
    eta: f64,
    y0: &[f64],
    steps: usize,
    rng: &mut R,
    record: &[usize],
) -> Result<YTrace>
where
    P: StochasticProblem,
    R: Rng + ?Sized,
{
    check_eta(eta)?;
    p.check_dim(y0)?;
    let d = p.dim();
    let mut stepper = YStepper::new(p);
    let mut sample = p.empty_sample();
    let mut y = y0.to_vec();
    let mut acc = vec![0.0; d * d];
    let mut records = Vec::new();
    for t in 1..=steps {
        p.draw_into(rng, &mut sample);
        stepper.step(p, &sample, eta, &mut y)?;
        for i in 0..d {
            for j in 0..d {
                acc[i * d + j] += y[i] * y[j];
            }
        }
        if record.contains(&t) {
            records.push((t, y.clone()));
        }
    }
    let second_moment = DenseMatrix::from_row_major(d, d, acc)?.scale(1.0 / steps.max(1) as f64);
    Ok(YTrace {
        y,
        records,
        second_moment,
        steps,
    })
}

/// Couples `y_t` to a ROOT-SGD run on the same samples, starting from
/// `y_B = B·v_B`, and records `‖t·v_t − y_t‖²`.
struct Coupling<'a> {
    eta: f64,
    burn_in: usize,
    probes: &'a [usize],
    y: Vec<f64>,
    stepper: YStepper,
    out: Vec<(usize, f64)>,
    err: Option<Error>,
}

impl<P: StochasticProblem> Observer<P> for Coupling<'_> {
    fn wants(&self, t: usize) -> bool {
        t >= self.burn_in && self.err.is_none()
    }

    fn observe(&mut self, p: &P, view: &StepView<'_, P::Sample>) {
        if view.t == self.burn_in {
            let b = self.burn_in as f64;
            self.y.iter_mut().zip(view.v).for_each(|(y, v)| *y = b * v);
        } else if let Err(e) = self.stepper.step(p, view.sample, self.eta, &mut self.y) {
            self.err = Some(e);
            return;
        }
        if self.probes.contains(&view.t) {
            let t = view.t as f64;
            let gap: f64 = view.v.iter().zip(&self.y).map(|(v, y)| (t * v - y).powi(2)).sum();
            self.out.push((view.t, gap));
        }
    }
}

/// One replicate of the coupling estimate: `(t, ‖t·v_t − y_t‖²)` at each
/// probe `t ≥ B`, for a ROOT-SGD run of `horizon` steps from `θ₀`.
pub fn coupling_diagnostic<P, R>(
    p: &P,
    theta0: &[f64],
    plan: &StepPlan,
    horizon: usize,
    probes: &[usize],
    rng: &mut R,
) -> Result<Vec<(usize, f64)>>
where
    P: StochasticProblem,
    R: Rng + ?Sized,
{
    p.check_dim(theta0)?;
    if horizon < plan.burn_in() {
        return Err(Error::HorizonTooShort {
            horizon,
            burn_in: plan.burn_in(),
        });
    }
    // Surface an unsupported Hessian before any sampling.
    let probe_sample = p.empty_sample();
    let mut scratch = vec![0.0; p.dim()];
    p.hessian_vec_into(theta0, &probe_sample, theta0, &mut scratch)?;

    let mut obs = Coupling {
        eta: plan.eta(),
        burn_in: plan.burn_in(),
        probes,
        y: vec![0.0; p.dim()],
        stepper: YStepper::new(p),
        out: Vec::new(),
        err: None,
    };
    let mut state = RootSgdState::new(theta0);
    let mut sample = p.empty_sample();
    let mut lag2 = theta0.to_vec();
    for _ in 0..horizon {
        p.draw_into(rng, &mut sample);
        drive_step(p, &mut state, &sample, plan, &mut obs, &mut lag2)?;
        if let Some(e) = obs.err.take() {
            return Err(e);
        }
    }
    Ok(obs.out)
}

/// Least-squares fit of `log value = intercept + slope·log t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// 95% confidence half-width of the slope (Student t, `n − 2` dof).
    pub half_width: f64,
}

pub fn rate_slope(ts: &[usize], values: &[f64]) -> Result<RateFit> {
    if ts.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: ts.len(),
            found: values.len(),
        });
    }
    if ts.len() < 4 {
        return Err(Error::InsufficientSpan(format!("need at least 4 points, got {}", ts.len())));
    }
    let lo = *ts.iter().min().unwrap_or(&0);
    let hi = *ts.iter().max().unwrap_or(&0);
    if lo == 0 || (hi as f64) < 10.0 * lo as f64 {
        return Err(Error::InsufficientSpan(format!(
            "t must span at least a decade, got [{lo}, {hi}]"
        )));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(format!("values must be positive, got {v}")));
    }
    let x: Vec<f64> = ts.iter().map(|&t| (t as f64).ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(&y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let se = (sse / (n - 2.0) / sxx).sqrt();
    let q = StudentsT::new(0.0, 1.0, n - 2.0)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(RateFit {
        slope,
        intercept,
        half_width: q * se,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceBound {
    pub trace_actual: f64,
    pub trace_bound: f64,
    pub satisfied: bool,
}

/// Compares `tr(H⁻¹E[ΞΛ_ηΞ]H⁻¹)` with `η·ℓ_Ξ²·σ*²/μ³`.
pub fn correction_trace_bound(
    model: &HessianNoiseModel,
    eta: f64,
    mu: f64,
    noise_lipschitz: f64,
    sigma_star_sq: f64,
) -> Result<TraceBound> {
    let lambda = solve_lambda(model, eta)?;
    let trace_actual = correction(model, &lambda)?.trace();
    let trace_bound = eta * noise_lipschitz * noise_lipschitz * sigma_star_sq / mu.powi(3);
    Ok(TraceBound {
        trace_actual,
        trace_bound,
        satisfied: trace_actual <= trace_bound + 1e-9,
    })
}

/// Smallest eigenvalue relative to the trace; `≥ −1e-10` for a PSD matrix
/// up to rounding.
pub fn relative_min_eigenvalue(m: &DenseMatrix) -> Result<f64> {
    let eig = SymmetricEigen::new(&m.symmetrized())?;
    Ok(eig.min() / m.trace().abs().max(f64::MIN_POSITIVE))
}

/// Mean of `‖x‖²` over rows, with its standard error.
pub fn mean_norm_sq(rows: &[Vec<f64>]) -> (f64, f64) {
    let vals: Vec<f64> = rows.iter().map(|r| norm_sq(r)).collect();
    mean_and_se(&vals)
}

/// Sample mean and standard error of the mean.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
