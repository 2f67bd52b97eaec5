use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    fill_standard_normal, noise_lipschitz_from_tensor, validate_covariance, ProblemConstants,
    Provenance, StochasticProblem,
};
use crate::error::{Error, Result};
use crate::linalg::{self, kron, psd_sqrt, DenseMatrix, SymmetricEigen};

/// Construction parameters for [`NoisyQuadratic`].
#[derive(Debug, Clone)]
pub struct NoisyQuadraticSpec {
    /// Eigenvalues of the nominal mean Hessian, which is `diag(spectrum)`.
    pub spectrum: Vec<f64>,
    pub hessian_noise_scale: f64,
    pub grad_noise_cov: DenseMatrix,
    /// Defaults to the origin.
    pub optimum: Option<Vec<f64>>,
    /// Seeds the moment estimation; sampling streams are supplied by callers.
    pub seed: u64,
    /// Draws used when the Hessian-noise moments have no closed form.
    pub moment_samples: usize,
}

impl NoisyQuadraticSpec {
    pub fn new(spectrum: Vec<f64>, hessian_noise_scale: f64, grad_noise_cov: DenseMatrix, seed: u64) -> Self {
        Self {
            spectrum,
            hessian_noise_scale,
            grad_noise_cov,
            optimum: None,
            seed,
            moment_samples: 1_000_000,
        }
    }

    pub fn with_optimum(mut self, optimum: Vec<f64>) -> Self {
        self.optimum = Some(optimum);
        self
    }

    pub fn with_moment_samples(mut self, n: usize) -> Self {
        self.moment_samples = n;
        self
    }
}

/// `f(θ; ξ) = ½ θᵀA_ξθ − b_ξᵀθ` with `A_ξ = Ā + s·S_ξ` and
/// `b_ξ = A_ξ θ* + w_ξ`.
///
/// `S_ξ` is symmetric with independent entries uniform on `[−1, 1]`. When a
/// draw of `A_ξ` has an eigenvalue below `μ/2`, those eigenvalues are lifted
/// to `μ/2`, so every sample function is `μ/2`-strongly convex. The mean
/// Hessian after clipping is what the instance reports as `H*`.
#[derive(Debug, Clone)]
pub struct NoisyQuadratic {
    d: usize,
    nominal_hessian: Vec<f64>,
    mean_hessian: DenseMatrix,
    noise_scale: f64,
    clip_floor: f64,
    clip_free: bool,
    noise_factor: DenseMatrix,
    constants: ProblemConstants,
}

#[derive(Debug, Clone)]
pub struct QuadraticSample {
    /// `A_ξ`, row-major.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    z: Vec<f64>,
    scratch: Vec<f64>,
}

/// `make_noisy_quadratic(d, spectrum, hessian_noise_scale, grad_noise_cov, seed)`
/// with the optimum at the origin.
pub fn make_noisy_quadratic(
    d: usize,
    spectrum: &[f64],
    hessian_noise_scale: f64,
    grad_noise_cov: &DenseMatrix,
    seed: u64,
) -> Result<NoisyQuadratic> {
    if spectrum.len() != d {
        return Err(Error::InvalidSpectrum(format!(
            "expected {d} eigenvalues, got {}",
            spectrum.len()
        )));
    }
    NoisyQuadratic::new(NoisyQuadraticSpec::new(
        spectrum.to_vec(),
        hessian_noise_scale,
        grad_noise_cov.clone(),
        seed,
    ))
}

impl NoisyQuadratic {
    pub fn new(spec: NoisyQuadraticSpec) -> Result<Self> {
        let d = spec.spectrum.len();
        if d == 0 {
            return Err(Error::InvalidSpectrum("empty spectrum".into()));
        }
        if spec.spectrum.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidSpectrum(format!(
                "eigenvalues must be positive and finite: {:?}",
                spec.spectrum
            )));
        }
        if !(spec.hessian_noise_scale >= 0.0 && spec.hessian_noise_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "hessian_noise_scale must be nonnegative, got {}",
                spec.hessian_noise_scale
            )));
        }
        validate_covariance(&spec.grad_noise_cov, d, false)?;
        let optimum = spec.optimum.clone().unwrap_or_else(|| vec![0.0; d]);
        if optimum.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: optimum.len(),
            });
        }

        let mu = spec.spectrum.iter().cloned().fold(f64::INFINITY, f64::min);
        let l_nominal = spec.spectrum.iter().cloned().fold(0.0, f64::max);
        let scale = spec.hessian_noise_scale;
        // ‖S‖₂ ≤ ‖S‖_F ≤ d, so λ_min(A_ξ) ≥ μ − s·d.
        let clip_free = scale * d as f64 <= mu / 2.0;

        let mut problem = Self {
            d,
            nominal_hessian: DenseMatrix::from_diag(&spec.spectrum).into_vec(),
            mean_hessian: DenseMatrix::from_diag(&spec.spectrum),
            noise_scale: scale,
            clip_floor: mu / 2.0,
            clip_free,
            noise_factor: psd_sqrt(&spec.grad_noise_cov)?,
            constants: ProblemConstants {
                optimum,
                mu,
                smoothness: l_nominal,
                noise_lipschitz: None,
                individual_smoothness: Some(l_nominal + scale * d as f64),
                sigma_star_sq: spec.grad_noise_cov.trace(),
                hessian_at_optimum: DenseMatrix::from_diag(&spec.spectrum),
                noise_cov_at_optimum: spec.grad_noise_cov.clone(),
                hessian_noise_tensor: DenseMatrix::zeros(d * d, d * d),
                hessian_noise_fourth_root: Some(l_nominal + scale * d as f64),
                hessian_lipschitz: Some(0.0),
                provenance: Provenance::Analytic,
            },
        };

        if scale > 0.0 && clip_free {
            problem.constants.hessian_noise_tensor = uniform_symmetric_tensor(d).scale(scale * scale);
        } else if scale > 0.0 {
            problem.estimate_hessian_moments(spec.seed, spec.moment_samples)?;
        }
        problem.constants.noise_lipschitz =
            Some(noise_lipschitz_from_tensor(&problem.constants.hessian_noise_tensor, d)?);
        let lmax = SymmetricEigen::new(&problem.mean_hessian)?.max();
        problem.constants.smoothness = l_nominal.max(lmax);
        problem.constants.validate()?;
        Ok(problem)
    }

    /// Mean of `A_ξ` after clipping, i.e. `H*`.
    pub fn mean_hessian(&self) -> &DenseMatrix {
        &self.mean_hessian
    }

    pub fn hessian_noise_scale(&self) -> f64 {
        self.noise_scale
    }

    /// True when no draw can trigger eigenvalue clipping.
    pub fn is_clip_free(&self) -> bool {
        self.clip_free
    }

    fn estimate_hessian_moments(&mut self, seed: u64, n: usize) -> Result<()> {
        if n < 2 {
            return Err(Error::InvalidArgument("moment_samples must be at least 2".into()));
        }
        let d = self.d;
        let dd = d * d;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        let mut s = self.empty_sample();
        let mut dev = vec![0.0; dd];
        let mut sum = vec![0.0; dd];
        let mut sum_sq = vec![0.0; dd];
        let mut outer = vec![0.0; dd * dd];

        for _ in 0..n {
            self.draw_hessian(&mut rng, &mut s);
            for k in 0..dd {
                dev[k] = s.a[k] - self.nominal_hessian[k];
                sum[k] += dev[k];
                sum_sq[k] += dev[k] * dev[k];
            }
            // E[D ⊗ D][(i,j),(k,l)] = E[D_ik D_jl]
            for i in 0..d {
                for j in 0..d {
                    let row = &mut outer[(i * d + j) * dd..(i * d + j + 1) * dd];
                    for k in 0..d {
                        let dik = dev[i * d + k];
                        for l in 0..d {
                            row[k * d + l] += dik * dev[j * d + l];
                        }
                    }
                }
            }
        }

        let nf = n as f64;
        let mean_dev: Vec<f64> = sum.iter().map(|x| x / nf).collect();
        let mut tensor = DenseMatrix::from_row_major(dd, dd, outer.iter().map(|x| x / nf).collect())?;
        let mean_dev_m = DenseMatrix::from_row_major(d, d, mean_dev.clone())?;
        tensor = tensor.sub(&kron(&mean_dev_m, &mean_dev_m))?;

        let max_se = sum_sq
            .iter()
            .zip(&mean_dev)
            .map(|(sq, m)| ((sq / nf - m * m).max(0.0) / (nf - 1.0)).sqrt())
            .fold(0.0, f64::max);

        let mean = DenseMatrix::from_row_major(
            d,
            d,
            self.nominal_hessian.iter().zip(&mean_dev).map(|(a, b)| a + b).collect(),
        )?
        .symmetrized();
        self.mean_hessian = mean.clone();
        self.constants.hessian_at_optimum = mean;
        self.constants.hessian_noise_tensor = tensor;
        self.constants.provenance = Provenance::MonteCarlo {
            samples: n,
            max_std_error: max_se,
        };
        Ok(())
    }

    fn draw_hessian<R: Rng + ?Sized>(&self, rng: &mut R, s: &mut QuadraticSample) {
        let d = self.d;
        s.a.copy_from_slice(&self.nominal_hessian);
        if self.noise_scale == 0.0 {
            return;
        }
        for i in 0..d {
            for j in i..d {
                let e = self.noise_scale * rng.gen_range(-1.0..=1.0);
                s.a[i * d + j] += e;
                if j != i {
                    s.a[j * d + i] += e;
                }
            }
        }
        if self.clip_free {
            return;
        }
        for i in 0..d {
            s.a[i * d + i] -= self.clip_floor;
        }
        let ok = linalg::is_positive_definite(&s.a, d, &mut s.scratch);
        for i in 0..d {
            s.a[i * d + i] += self.clip_floor;
        }
        if !ok {
            let m = DenseMatrix::from_row_major(d, d, s.a.clone()).expect("sized");
            let floor = self.clip_floor;
            let clipped = SymmetricEigen::new(&m)
                .expect("symmetric by construction")
                .reconstruct_with(|l| l.max(floor))
                .symmetrized();
            s.a.copy_from_slice(clipped.as_slice());
        }
    }
}

/// `E[S ⊗ S]` for symmetric `S` with independent uniform[−1, 1] entries:
/// `E[S_ik S_jl] = 1/3` when `{i,k} = {j,l}`, else 0.
fn uniform_symmetric_tensor(d: usize) -> DenseMatrix {
    let mut t = DenseMatrix::zeros(d * d, d * d);
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                for l in 0..d {
                    if (i == j && k == l) || (i == l && k == j) {
                        t[(i * d + j, k * d + l)] = 1.0 / 3.0;
                    }
                }
            }
        }
    }
    t
}

impl StochasticProblem for NoisyQuadratic {
    type Sample = QuadraticSample;

    fn dim(&self) -> usize {
        self.d
    }

    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    fn empty_sample(&self) -> QuadraticSample {
        QuadraticSample {
            a: vec![0.0; self.d * self.d],
            b: vec![0.0; self.d],
            z: vec![0.0; self.d],
            scratch: vec![0.0; self.d * self.d],
        }
    }

    fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, s: &mut QuadraticSample) {
        self.draw_hessian(rng, s);
        fill_standard_normal(rng, &mut s.z);
        let d = self.d;
        let opt = &self.constants.optimum;
        for i in 0..d {
            let row = &s.a[i * d..(i + 1) * d];
            s.b[i] = linalg::dot(row, opt) + linalg::dot(self.noise_factor.row(i), &s.z);
        }
    }

    fn grad_into(&self, theta: &[f64], s: &QuadraticSample, out: &mut [f64]) {
        let d = self.d;
        debug_assert_eq!(theta.len(), d);
        for i in 0..d {
            out[i] = linalg::dot(&s.a[i * d..(i + 1) * d], theta) - s.b[i];
        }
    }

    fn population_grad_into(&self, theta: &[f64], out: &mut [f64]) {
        let d = self.d;
        let opt = &self.constants.optimum;
        for i in 0..d {
            out[i] = self
                .mean_hessian
                .row(i)
                .iter()
                .zip(theta.iter().zip(opt))
                .map(|(h, (t, o))| h * (t - o))
                .sum();
        }
    }

    fn hessian_vec_into(&self, _theta: &[f64], s: &QuadraticSample, v: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.d;
        for i in 0..d {
            out[i] = linalg::dot(&s.a[i * d..(i + 1) * d], v);
        }
        Ok(())
    }
}
