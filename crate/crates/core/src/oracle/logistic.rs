use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    fill_standard_normal, gaussian_hessian_fourth_root, validate_covariance, ProblemConstants,
    Provenance, RegressionSample, StochasticProblem,
};
use crate::error::{Error, Result};
use crate::linalg::{self, psd_sqrt, DenseMatrix, Lu, SymmetricEigen};

#[derive(Debug, Clone)]
pub struct LogisticSpec {
    pub design_cov: DenseMatrix,
    /// Parameter of the label model `P(y = 1 | x) = σ(xᵀθ_gen)`.
    pub generating_theta: Vec<f64>,
    pub ridge: f64,
    pub seed: u64,
    /// Size of the frozen sample that defines the population objective.
    pub eval_samples: usize,
}

/// Ridge-regularized logistic regression:
/// `f(θ; (x, y)) = log(1 + exp(−y xᵀθ)) + ½·ridge·‖θ‖²`.
///
/// The population objective has no closed form. It is pinned to the average
/// over a frozen evaluation sample drawn at construction, so `θ*`, `H*`,
/// `Σ*` and the Hessian-noise tensor are all estimates on that sample
/// (reported as [`Provenance::MonteCarlo`]). `θ*` is found by Newton's
/// method to gradient norm ≤ 1e-10.
#[derive(Debug, Clone)]
pub struct LogisticRegression {
    d: usize,
    design_factor: DenseMatrix,
    generating_theta: Vec<f64>,
    ridge: f64,
    eval_x: Vec<f64>,
    eval_y: Vec<f64>,
    constants: ProblemConstants,
}

pub fn make_logistic_regression(
    d: usize,
    design_cov: &DenseMatrix,
    generating_theta: &[f64],
    ridge: f64,
    seed: u64,
) -> Result<LogisticRegression> {
    if generating_theta.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: generating_theta.len(),
        });
    }
    LogisticRegression::new(LogisticSpec {
        design_cov: design_cov.clone(),
        generating_theta: generating_theta.to_vec(),
        ridge,
        seed,
        eval_samples: 1_000_000,
    })
}

#[inline]
fn sigmoid(m: f64) -> f64 {
    if m >= 0.0 {
        1.0 / (1.0 + (-m).exp())
    } else {
        let e = m.exp();
        e / (1.0 + e)
    }
}

impl LogisticRegression {
    pub fn new(spec: LogisticSpec) -> Result<Self> {
        let d = spec.generating_theta.len();
        if d == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        let eig = validate_covariance(&spec.design_cov, d, true)?;
        if !(spec.ridge > 0.0 && spec.ridge.is_finite()) {
            return Err(Error::InvalidArgument(format!("ridge must be positive, got {}", spec.ridge)));
        }
        if spec.eval_samples < 2 {
            return Err(Error::InvalidArgument("eval_samples must be at least 2".into()));
        }

        let mut p = Self {
            d,
            design_factor: psd_sqrt(&spec.design_cov)?,
            generating_theta: spec.generating_theta.clone(),
            ridge: spec.ridge,
            eval_x: Vec::with_capacity(spec.eval_samples * d),
            eval_y: Vec::with_capacity(spec.eval_samples),
            constants: ProblemConstants {
                optimum: vec![0.0; d],
                mu: spec.ridge,
                smoothness: spec.ridge + 0.25 * eig.max(),
                noise_lipschitz: None,
                individual_smoothness: None,
                sigma_star_sq: 0.0,
                hessian_at_optimum: DenseMatrix::identity(d),
                noise_cov_at_optimum: DenseMatrix::zeros(d, d),
                hessian_noise_tensor: DenseMatrix::zeros(d * d, d * d),
                hessian_noise_fourth_root: Some(0.25 * gaussian_hessian_fourth_root(&eig)),
                hessian_lipschitz: None,
                provenance: Provenance::Analytic,
            },
        };

        // |s(1−s)| ≤ ¼, so E‖Ξu‖² ≤ (1/16)·uᵀ(tr(Σ)Σ + 2Σ²)u.
        let s = &spec.design_cov;
        let bound = s.scale(s.trace()).add(&s.matmul(s)?.scale(2.0))?.symmetrized();
        p.constants.noise_lipschitz = Some(0.25 * SymmetricEigen::new(&bound)?.max().sqrt());

        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(u64::MAX);
        let mut sample = p.empty_sample();
        for _ in 0..spec.eval_samples {
            p.draw_into(&mut rng, &mut sample);
            p.eval_x.extend_from_slice(&sample.x);
            p.eval_y.push(sample.y);
        }

        p.constants.optimum = p.newton_optimum()?;
        p.estimate_moments()?;
        p.constants.validate()?;
        Ok(p)
    }

    pub fn generating_theta(&self) -> &[f64] {
        &self.generating_theta
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn eval_samples(&self) -> usize {
        self.eval_y.len()
    }

    fn eval_points(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.eval_x.chunks_exact(self.d).zip(self.eval_y.iter().copied())
    }

    /// Full-batch gradient and Hessian on the frozen sample.
    fn batch_grad_hessian(&self, theta: &[f64]) -> (Vec<f64>, DenseMatrix) {
        let d = self.d;
        let mut g = vec![0.0; d];
        let mut h = DenseMatrix::zeros(d, d);
        for (x, y) in self.eval_points() {
            let m = y * linalg::dot(x, theta);
            let sm = sigmoid(-m);
            let w = sm * (1.0 - sm);
            for i in 0..d {
                g[i] -= y * x[i] * sm;
                for j in 0..d {
                    h[(i, j)] += w * x[i] * x[j];
                }
            }
        }
        let n = self.eval_y.len() as f64;
        for i in 0..d {
            g[i] = g[i] / n + self.ridge * theta[i];
            for j in 0..d {
                h[(i, j)] /= n;
            }
            h[(i, i)] += self.ridge;
        }
        (g, h)
    }

    fn newton_optimum(&self) -> Result<Vec<f64>> {
        let mut theta = vec![0.0; self.d];
        for _ in 0..100 {
            let (g, h) = self.batch_grad_hessian(&theta);
            if linalg::norm_sq(&g).sqrt() <= 1e-10 {
                return Ok(theta);
            }
            let step = Lu::factor(&h)?.solve(&g)?;
            theta.iter_mut().zip(&step).for_each(|(t, s)| *t -= s);
        }
        let (g, _) = self.batch_grad_hessian(&theta);
        let gn = linalg::norm_sq(&g).sqrt();
        // Rounding in the 1e6-term sums can stall Newton a hair above 1e-10.
        if gn <= 1e-9 {
            Ok(theta)
        } else {
            Err(Error::InvalidArgument(format!(
                "optimum search did not converge (gradient norm {gn:e})"
            )))
        }
    }

    fn estimate_moments(&mut self) -> Result<()> {
        let d = self.d;
        let dd = d * d;
        let opt = self.constants.optimum.clone();
        let n = self.eval_y.len() as f64;

        let mut h_mean = DenseMatrix::zeros(d, d);
        let mut gg = DenseMatrix::zeros(d, d);
        let mut gg_sq = DenseMatrix::zeros(d, d);
        let mut g = vec![0.0; d];
        for (x, y) in self.eval_points() {
            let sm = sigmoid(-y * linalg::dot(x, &opt));
            let w = sm * (1.0 - sm);
            for i in 0..d {
                g[i] = -y * x[i] * sm + self.ridge * opt[i];
            }
            for i in 0..d {
                for j in 0..d {
                    h_mean[(i, j)] += w * x[i] * x[j];
                    let q = g[i] * g[j];
                    gg[(i, j)] += q;
                    gg_sq[(i, j)] += q * q;
                }
            }
        }
        h_mean = h_mean.scale(1.0 / n);
        gg = gg.scale(1.0 / n);

        // Ξ = w xxᵀ − E[w xxᵀ]; ridge cancels.
        let mut tensor = DenseMatrix::zeros(dd, dd);
        let mut xi = vec![0.0; dd];
        for (x, y) in self.eval_points() {
            let sm = sigmoid(-y * linalg::dot(x, &opt));
            let w = sm * (1.0 - sm);
            for i in 0..d {
                for j in 0..d {
                    xi[i * d + j] = w * x[i] * x[j] - h_mean[(i, j)];
                }
            }
            for i in 0..d {
                for j in 0..d {
                    let r = i * d + j;
                    for k in 0..d {
                        let a = xi[i * d + k];
                        for l in 0..d {
                            tensor[(r, k * d + l)] += a * xi[j * d + l];
                        }
                    }
                }
            }
        }
        tensor = tensor.scale(1.0 / n);

        let max_se = (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| ((gg_sq[(i, j)] / n - gg[(i, j)].powi(2)).max(0.0) / (n - 1.0)).sqrt())
            .fold(0.0, f64::max);

        for i in 0..d {
            h_mean[(i, i)] += self.ridge;
        }
        let c = &mut self.constants;
        c.hessian_at_optimum = h_mean.symmetrized();
        c.noise_cov_at_optimum = gg.symmetrized();
        c.sigma_star_sq = gg.trace();
        c.hessian_noise_tensor = tensor;
        c.provenance = Provenance::MonteCarlo {
            samples: self.eval_y.len(),
            max_std_error: max_se,
        };
        Ok(())
    }
}

impl StochasticProblem for LogisticRegression {
    type Sample = RegressionSample;

    fn dim(&self) -> usize {
        self.d
    }

    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    fn empty_sample(&self) -> RegressionSample {
        RegressionSample::zeros(self.d)
    }

    fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, s: &mut RegressionSample) {
        fill_standard_normal(rng, &mut s.z);
        for i in 0..self.d {
            s.x[i] = linalg::dot(self.design_factor.row(i), &s.z);
        }
        let p = sigmoid(linalg::dot(&s.x, &self.generating_theta));
        s.y = if rng.gen::<f64>() < p { 1.0 } else { -1.0 };
    }

    fn grad_into(&self, theta: &[f64], s: &RegressionSample, out: &mut [f64]) {
        let sm = sigmoid(-s.y * linalg::dot(&s.x, theta));
        for i in 0..self.d {
            out[i] = -s.y * s.x[i] * sm + self.ridge * theta[i];
        }
    }

    fn population_grad_into(&self, theta: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (x, y) in self.eval_points() {
            let c = -y * sigmoid(-y * linalg::dot(x, theta));
            for (o, xi) in out.iter_mut().zip(x) {
                *o += c * xi;
            }
        }
        let n = self.eval_y.len() as f64;
        for (o, t) in out.iter_mut().zip(theta) {
            *o = *o / n + self.ridge * t;
        }
    }

    fn hessian_vec_into(&self, theta: &[f64], s: &RegressionSample, v: &[f64], out: &mut [f64]) -> Result<()> {
        let sm = sigmoid(-s.y * linalg::dot(&s.x, theta));
        let c = sm * (1.0 - sm) * linalg::dot(&s.x, v);
        for i in 0..self.d {
            out[i] = c * s.x[i] + self.ridge * v[i];
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;

    fn small(design: DenseMatrix, gen: Vec<f64>, ridge: f64, n: usize) -> LogisticRegression {
        LogisticRegression::new(LogisticSpec {
            design_cov: design,
            generating_theta: gen,
            ridge,
            seed: 17,
            eval_samples: n,
        })
        .unwrap()
    }

    #[test]
    fn symmetric_instance_optimum_and_curvature() {
        let p = small(DenseMatrix::identity(1), vec![0.0], 1.0, 200_000);
        let c = p.constants();
        assert_eq!(c.mu, 1.0);
        // θ* = 0 by symmetry up to frozen-sample fluctuation ~ 1/sqrt(n)
        assert!(c.optimum[0].abs() < 5e-3, "{:?}", c.optimum);
        // H* = ridge + ¼ E[x²]; relative fluctuation of the x² mean ~ sqrt(2/n)
        assert!((c.hessian_at_optimum[(0, 0)] - 1.25).abs() < 5.0 * 0.25 * (2.0f64 / 200_000.0).sqrt());
    }

    #[test]
    fn curvature_matches_quadrature() {
        // H* at θ = 0 equals ridge + ¼·∫x²φ(x)dx; check the quadrature side.
        let (a, b, n) = (-10.0f64, 10.0f64, 20_000);
        let h = (b - a) / n as f64;
        let integral: f64 = (0..=n)
            .map(|k| {
                let x = a + k as f64 * h;
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                w * x * x * (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
            })
            .sum::<f64>()
            * h;
        assert!((1.0 + 0.25 * integral - 1.25).abs() < 1e-10);
    }

    #[test]
    fn population_gradient_vanishes_at_optimum() {
        let cov = DenseMatrix::from_rows(&[vec![1.0, 0.3], vec![0.3, 0.8]]).unwrap();
        let p = small(cov, vec![1.0, -2.0], 0.1, 100_000);
        let g = p.population_grad(&p.constants().optimum).unwrap();
        assert!(linalg::norm_sq(&g).sqrt() <= 1e-9);
        // ridge pulls the optimum away from the generating parameter
        assert!(linalg::dist_sq(&p.constants().optimum, p.generating_theta()) > 1e-2);
        assert_eq!(p.constants().mu, 0.1);
        assert!((p.constants().smoothness - (0.1 + 0.25 * SymmetricEigen::new(&DenseMatrix::from_rows(&[vec![1.0, 0.3], vec![0.3, 0.8]]).unwrap()).unwrap().max())).abs() < 1e-15);
    }

    #[test]
    fn gradient_is_unbiased_against_frozen_population() {
        let cov = DenseMatrix::identity(2);
        let p = small(cov, vec![0.5, 0.5], 0.5, 400_000);
        let theta = [0.2, -0.1];
        let est = mc_mean(&p, 100_000, 9, |s| p.stochastic_grad(&theta, s).unwrap());
        // frozen population error is ~sqrt(1/4) of the 1e5-draw SE; widen slightly.
        let pop = p.population_grad(&theta).unwrap();
        for k in 0..2 {
            let slack = 5.0 * est.std_error[k] * (1.0f64 + 0.25).sqrt();
            assert!((est.mean[k] - pop[k]).abs() <= slack);
        }
    }

    #[test]
    fn hessian_matches_finite_differences() {
        let p = small(DenseMatrix::identity(2), vec![1.0, 0.0], 0.2, 1_000);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let s = p.draw(&mut rng);
            let theta = [0.3, -0.7];
            let h = p.stochastic_hessian(&theta, &s).unwrap();
            assert!(h.asymmetry() < 1e-15);
            for j in 0..2 {
                let mut tp = theta;
                let mut tm = theta;
                tp[j] += 1e-5;
                tm[j] -= 1e-5;
                let gp = p.stochastic_grad(&tp, &s).unwrap();
                let gm = p.stochastic_grad(&tm, &s).unwrap();
                for i in 0..2 {
                    let fd = (gp[i] - gm[i]) / 2e-5;
                    assert!((fd - h[(i, j)]).abs() <= 1e-5 * (1.0 + h[(i, j)].abs()));
                }
            }
        }
    }

    #[test]
    fn sigma_star_is_trace_of_noise_covariance() {
        let p = small(DenseMatrix::identity(2), vec![0.5, 0.5], 0.5, 50_000);
        let c = p.constants();
        assert!((c.sigma_star_sq - c.noise_cov_at_optimum.trace()).abs() < 1e-15);
        assert!(matches!(c.provenance, Provenance::MonteCarlo { samples: 50_000, .. }));
    }

    #[test]
    fn invalid_parameters_rejected() {
        let spec = |cov: DenseMatrix, ridge: f64| LogisticSpec {
            design_cov: cov,
            generating_theta: vec![0.0, 0.0],
            ridge,
            seed: 0,
            eval_samples: 10,
        };
        assert!(matches!(
            LogisticRegression::new(spec(DenseMatrix::from_diag(&[1.0, 0.0]), 1.0)),
            Err(Error::InvalidCovariance(_))
        ));
        assert!(LogisticRegression::new(spec(DenseMatrix::identity(2), 0.0)).is_err());
    }
}
