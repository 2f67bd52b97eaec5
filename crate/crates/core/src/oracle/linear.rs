use rand::Rng;

use super::{
    fill_standard_normal, gaussian_hessian_fourth_root, validate_covariance, ProblemConstants,
    Provenance, RegressionSample, StochasticProblem,
};
use crate::error::{Error, Result};
use crate::linalg::{self, psd_sqrt, DenseMatrix, SymmetricEigen};

/// Least squares with Gaussian random design:
/// `f(θ; (x, y)) = ½(xᵀθ − y)²`, `x ~ N(0, Σ_x)`, `y = xᵀθ* + σ·z`.
///
/// `H* = Σ_x`, `Σ* = σ²Σ_x`, and the Hessian-noise tensor follows from
/// Isserlis' theorem, so every constant is exact.
#[derive(Debug, Clone)]
pub struct LinearRegression {
    d: usize,
    design_cov: DenseMatrix,
    design_factor: DenseMatrix,
    noise_std: f64,
    constants: ProblemConstants,
}

pub fn make_linear_regression(
    d: usize,
    design_cov: &DenseMatrix,
    noise_std: f64,
    optimum: &[f64],
    // Accepted for interface symmetry with the other generators; every
    // constant here is analytic so no randomness is consumed at construction.
    _seed: u64,
) -> Result<LinearRegression> {
    LinearRegression::new(d, design_cov, noise_std, optimum)
}

impl LinearRegression {
    pub fn new(d: usize, design_cov: &DenseMatrix, noise_std: f64, optimum: &[f64]) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        let eig = validate_covariance(design_cov, d, true)?;
        if !(noise_std > 0.0 && noise_std.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise_std must be positive, got {noise_std}"
            )));
        }
        if optimum.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: optimum.len(),
            });
        }

        let s = design_cov;
        let mut tensor = DenseMatrix::zeros(d * d, d * d);
        // E[Ξ_ik Ξ_jl] = Σ_ij Σ_kl + Σ_il Σ_kj for Ξ = xxᵀ − Σ.
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    for l in 0..d {
                        tensor[(i * d + j, k * d + l)] = s[(i, j)] * s[(k, l)] + s[(i, l)] * s[(k, j)];
                    }
                }
            }
        }
        // E[Ξ²] = tr(Σ)Σ + Σ²
        let second = s
            .scale(s.trace())
            .add(&s.matmul(s)?)?
            .symmetrized();
        let noise_lipschitz = SymmetricEigen::new(&second)?.max().sqrt();

        let constants = ProblemConstants {
            optimum: optimum.to_vec(),
            mu: eig.min(),
            smoothness: eig.max(),
            noise_lipschitz: Some(noise_lipschitz),
            individual_smoothness: None,
            sigma_star_sq: noise_std * noise_std * s.trace(),
            hessian_at_optimum: s.clone(),
            noise_cov_at_optimum: s.scale(noise_std * noise_std),
            hessian_noise_tensor: tensor,
            hessian_noise_fourth_root: Some(gaussian_hessian_fourth_root(&eig)),
            hessian_lipschitz: Some(0.0),
            provenance: Provenance::Analytic,
        };
        constants.validate()?;
        Ok(Self {
            d,
            design_cov: s.clone(),
            design_factor: psd_sqrt(s)?,
            noise_std,
            constants,
        })
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }
}

impl StochasticProblem for LinearRegression {
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
        let e: f64 = rng.sample(rand_distr::StandardNormal);
        s.y = linalg::dot(&s.x, &self.constants.optimum) + self.noise_std * e;
    }

    fn grad_into(&self, theta: &[f64], s: &RegressionSample, out: &mut [f64]) {
        debug_assert_eq!(theta.len(), self.d);
        let r = linalg::dot(&s.x, theta) - s.y;
        for (o, x) in out.iter_mut().zip(&s.x) {
            *o = x * r;
        }
    }

    fn population_grad_into(&self, theta: &[f64], out: &mut [f64]) {
        let opt = &self.constants.optimum;
        for i in 0..self.d {
            out[i] = self
                .design_cov
                .row(i)
                .iter()
                .zip(theta.iter().zip(opt))
                .map(|(h, (t, o))| h * (t - o))
                .sum();
        }
    }

    fn hessian_vec_into(&self, _theta: &[f64], s: &RegressionSample, v: &[f64], out: &mut [f64]) -> Result<()> {
        let xv = linalg::dot(&s.x, v);
        for (o, x) in out.iter_mut().zip(&s.x) {
            *o = x * xv;
        }
        Ok(())
    }
}
