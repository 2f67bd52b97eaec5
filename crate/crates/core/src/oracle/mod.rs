//! Stochastic first-order oracles.
//!
//! A problem draws i.i.d. samples `ξ ~ P` and evaluates `∇f(θ; ξ)` at any
//! number of points for one sample. The recursive estimator relies on that:
//! each step evaluates the same sample at `θ_{t-1}` and `θ_{t-2}`.

mod linear;
mod logistic;
mod quadratic;

pub use linear::{make_linear_regression, LinearRegression};
pub use logistic::{make_logistic_regression, LogisticRegression, LogisticSpec};
pub use quadratic::{make_noisy_quadratic, NoisyQuadratic, NoisyQuadraticSpec, QuadraticSample};

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, SymmetricEigen};

/// How the moment-type constants of a problem were obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Provenance {
    Analytic,
    /// Estimated from `samples` draws; `max_std_error` is the largest
    /// entrywise standard error among the estimated matrices.
    MonteCarlo { samples: usize, max_std_error: f64 },
}

/// Everything known about a problem instance in closed form (or pinned by a
/// large frozen sample, see [`Provenance`]).
#[derive(Debug, Clone)]
pub struct ProblemConstants {
    pub optimum: Vec<f64>,
    /// Strong convexity of the population objective.
    pub mu: f64,
    /// Smoothness of the population objective.
    pub smoothness: f64,
    /// Mean-squared Lipschitz constant of the gradient noise.
    pub noise_lipschitz: Option<f64>,
    /// Almost-sure smoothness of each sample function.
    pub individual_smoothness: Option<f64>,
    /// `E‖∇f(θ*; ξ)‖²`.
    pub sigma_star_sq: f64,
    pub hessian_at_optimum: DenseMatrix,
    pub noise_cov_at_optimum: DenseMatrix,
    /// `E[Ξ(θ*) ⊗ Ξ(θ*)]`, flattened to `d² × d²`, where `Ξ` is the
    /// stochastic Hessian minus its mean.
    pub hessian_noise_tensor: DenseMatrix,
    /// Fourth-moment bound on the stochastic Hessian at the optimum.
    pub hessian_noise_fourth_root: Option<f64>,
    /// Mean-square Lipschitz constant of the stochastic Hessian around θ*.
    pub hessian_lipschitz: Option<f64>,
    pub provenance: Provenance,
}

impl ProblemConstants {
    pub fn dim(&self) -> usize {
        self.optimum.len()
    }

    /// Checks the structural invariants shared by every generator.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if !(self.mu > 0.0 && self.mu <= self.smoothness) {
            return Err(Error::InvalidSpectrum(format!(
                "need 0 < mu <= L, got mu = {}, L = {}",
                self.mu, self.smoothness
            )));
        }
        for m in [&self.hessian_at_optimum, &self.noise_cov_at_optimum] {
            if m.rows() != d || m.cols() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: m.rows(),
                });
            }
            m.check_symmetric()?;
        }
        if self.hessian_noise_tensor.rows() != d * d || self.hessian_noise_tensor.cols() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                found: self.hessian_noise_tensor.rows(),
            });
        }
        Ok(())
    }
}

/// A stochastic objective `F(θ) = E f(θ; ξ)`.
///
/// The `*_into` methods are the hot path and only `debug_assert` their
/// lengths; the allocating methods check dimensions and return errors.
pub trait StochasticProblem: Send + Sync {
    type Sample: Clone + Send;

    fn dim(&self) -> usize;

    fn constants(&self) -> &ProblemConstants;

    /// A sample buffer to be filled by [`draw_into`](Self::draw_into).
    fn empty_sample(&self) -> Self::Sample;

    fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, sample: &mut Self::Sample);

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::Sample {
        let mut s = self.empty_sample();
        self.draw_into(rng, &mut s);
        s
    }

    /// `out ← ∇f(θ; ξ)`.
    fn grad_into(&self, theta: &[f64], sample: &Self::Sample, out: &mut [f64]);

    /// `out ← ∇F(θ)`.
    fn population_grad_into(&self, theta: &[f64], out: &mut [f64]);

    /// `out ← ∇²f(θ; ξ) · v`.
    fn hessian_vec_into(
        &self,
        _theta: &[f64],
        _sample: &Self::Sample,
        _v: &[f64],
        _out: &mut [f64],
    ) -> Result<()> {
        Err(Error::Unsupported("stochastic Hessian"))
    }

    fn stochastic_hessian(&self, theta: &[f64], sample: &Self::Sample) -> Result<DenseMatrix> {
        self.check_dim(theta)?;
        let d = self.dim();
        let mut h = DenseMatrix::zeros(d, d);
        let mut e = vec![0.0; d];
        let mut col = vec![0.0; d];
        for j in 0..d {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[j] = 1.0;
            self.hessian_vec_into(theta, sample, &e, &mut col)?;
            for i in 0..d {
                h[(i, j)] = col[i];
            }
        }
        Ok(h)
    }

    fn stochastic_grad(&self, theta: &[f64], sample: &Self::Sample) -> Result<Vec<f64>> {
        self.check_dim(theta)?;
        let mut out = vec![0.0; self.dim()];
        self.grad_into(theta, sample, &mut out);
        Ok(out)
    }

    fn population_grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(theta)?;
        let mut out = vec![0.0; self.dim()];
        self.population_grad_into(theta, &mut out);
        Ok(out)
    }

    /// `ε(θ; ξ) = ∇f(θ; ξ) − ∇F(θ)`.
    fn noise_at(&self, theta: &[f64], sample: &Self::Sample) -> Result<Vec<f64>> {
        let mut g = self.stochastic_grad(theta, sample)?;
        let pop = self.population_grad(theta)?;
        g.iter_mut().zip(&pop).for_each(|(a, b)| *a -= b);
        Ok(g)
    }

    fn check_dim(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: theta.len(),
            });
        }
        Ok(())
    }
}

/// A design vector and response, shared by the regression generators.
#[derive(Debug, Clone)]
pub struct RegressionSample {
    pub x: Vec<f64>,
    pub y: f64,
    z: Vec<f64>,
}

impl RegressionSample {
    pub fn zeros(d: usize) -> Self {
        Self {
            x: vec![0.0; d],
            y: 0.0,
            z: vec![0.0; d],
        }
    }
}

/// `E[Ξ M Ξ]` from the flattened tensor `E[Ξ ⊗ Ξ]` (row-major vec).
pub fn apply_noise_tensor(tensor: &DenseMatrix, m: &DenseMatrix) -> Result<DenseMatrix> {
    let d = m.rows();
    if tensor.rows() != d * d || !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: tensor.rows(),
            found: d * d,
        });
    }
    let flat = tensor.matvec(m.as_slice())?;
    DenseMatrix::from_row_major(d, d, flat)
}

/// Noise-Lipschitz constant implied by a Hessian-noise tensor:
/// `ℓ_Ξ = sqrt(λ_max(E[Ξ²]))`. Exact for problems whose noise is linear in θ.
pub fn noise_lipschitz_from_tensor(tensor: &DenseMatrix, d: usize) -> Result<f64> {
    let second = apply_noise_tensor(tensor, &DenseMatrix::identity(d))?.symmetrized();
    Ok(SymmetricEigen::new(&second)?.max().max(0.0).sqrt())
}

fn validate_covariance(cov: &DenseMatrix, d: usize, positive_definite: bool) -> Result<SymmetricEigen> {
    if cov.rows() != d || cov.cols() != d {
        return Err(Error::InvalidCovariance(format!(
            "expected {d}x{d}, got {}x{}",
            cov.rows(),
            cov.cols()
        )));
    }
    cov.check_symmetric()
        .map_err(|e| Error::InvalidCovariance(e.to_string()))?;
    let eig = SymmetricEigen::new(cov)?;
    let tol = 1e-12 * (1.0 + cov.trace().abs());
    if positive_definite && eig.min() <= tol {
        return Err(Error::InvalidCovariance(format!(
            "not positive definite (min eigenvalue {:e})",
            eig.min()
        )));
    }
    if eig.min() < -tol {
        return Err(Error::InvalidCovariance(format!(
            "not positive semidefinite (min eigenvalue {:e})",
            eig.min()
        )));
    }
    Ok(eig)
}

#[inline]
fn fill_standard_normal<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for z in out.iter_mut() {
        *z = rng.sample(rand_distr::StandardNormal);
    }
}

/// Upper bound on `E‖x xᵀ v‖⁴` for Gaussian `x ~ N(0, Σ)`, unit `v`:
/// `105 · λ_max(Σ)² · tr(Σ)²` via Cauchy–Schwarz and Gaussian eighth moments.
fn gaussian_hessian_fourth_root(eig: &SymmetricEigen) -> f64 {
    let tr: f64 = eig.values.iter().sum();
    105f64.powf(0.25) * (eig.max() * tr).sqrt()
}

#[cfg(test)]
pub(crate) mod testutil {
    //! Monte Carlo helpers shared by the generator tests.
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub struct MeanEstimate {
        pub mean: Vec<f64>,
        pub std_error: Vec<f64>,
    }

    /// Sample mean and standard error of `f(ξ)` over `n` draws.
    pub fn mc_mean<P: StochasticProblem>(
        p: &P,
        n: usize,
        seed: u64,
        mut f: impl FnMut(&P::Sample) -> Vec<f64>,
    ) -> MeanEstimate {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = p.empty_sample();
        let mut sum: Vec<f64> = Vec::new();
        let mut sum_sq: Vec<f64> = Vec::new();
        for _ in 0..n {
            p.draw_into(&mut rng, &mut s);
            let v = f(&s);
            if sum.is_empty() {
                sum = vec![0.0; v.len()];
                sum_sq = vec![0.0; v.len()];
            }
            for k in 0..v.len() {
                sum[k] += v[k];
                sum_sq[k] += v[k] * v[k];
            }
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std_error = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| ((sq / nf - m * m).max(0.0) * nf / (nf - 1.0) / nf).sqrt())
            .collect();
        MeanEstimate { mean, std_error }
    }

    pub fn assert_within_se(est: &MeanEstimate, expected: &[f64], k: f64) {
        for i in 0..expected.len() {
            let slack = k * est.std_error[i] + 1e-12;
            assert!(
                (est.mean[i] - expected[i]).abs() <= slack,
                "component {i}: mean {} vs expected {} (slack {slack})",
                est.mean[i],
                expected[i]
            );
        }
    }
}
