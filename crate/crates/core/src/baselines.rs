//! Plain SGD and Polyak–Ruppert–Juditsky averaged SGD.

use rand::Rng;

use crate::error::{Error, Result};
use crate::oracle::StochasticProblem;

/// Step-size schedule `η_t` for SGD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    Constant(f64),
    /// `η_t = scale · t^{-exponent}` with `exponent ∈ (1/2, 1)`.
    Polynomial { scale: f64, exponent: f64 },
}

impl StepSchedule {
    pub fn polynomial(scale: f64, exponent: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
        }
        if !(exponent > 0.5 && exponent < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "exponent must lie in (0.5, 1), got {exponent}"
            )));
        }
        Ok(Self::Polynomial { scale, exponent })
    }

    pub fn constant(eta: f64) -> Result<Self> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size must be nonnegative, got {eta}")));
        }
        Ok(Self::Constant(eta))
    }

    /// `η_t` for `t ≥ 1`.
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            Self::Constant(eta) => eta,
            Self::Polynomial { scale, exponent } => scale * (t.max(1) as f64).powf(-exponent),
        }
    }
}

/// SGD iterate `θ̂_t` and its running average `ẑ_t`.
#[derive(Debug, Clone)]
pub struct SgdState {
    t: usize,
    theta: Vec<f64>,
    average: Vec<f64>,
    averaged: usize,
    discard_prefix: usize,
    grad: Vec<f64>,
}

impl SgdState {
    pub fn new(theta0: &[f64]) -> Self {
        Self {
            t: 0,
            theta: theta0.to_vec(),
            average: theta0.to_vec(),
            averaged: 0,
            discard_prefix: 0,
            grad: vec![0.0; theta0.len()],
        }
    }

    /// Leaves the first `n` iterates out of the average. Off by default.
    pub fn with_discard_prefix(mut self, n: usize) -> Self {
        self.discard_prefix = n;
        self
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// `θ̂_t`.
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// `ẑ_t`; equals `θ₀` until the first averaged iterate arrives.
    pub fn average(&self) -> &[f64] {
        &self.average
    }

    /// `∇f(θ̂_{t-1}; ξ_t)` from the latest step.
    pub fn last_gradient(&self) -> &[f64] {
        &self.grad
    }

    /// Number of iterates in the average.
    pub fn averaged(&self) -> usize {
        self.averaged
    }

    /// `θ̂_t = θ̂_{t-1} − η_t ∇f(θ̂_{t-1}; ξ_t)`.
    pub fn sgd_step<P: StochasticProblem>(&mut self, p: &P, sample: &P::Sample, eta: f64) -> Result<()> {
        p.check_dim(&self.theta)?;
        p.grad_into(&self.theta, sample, &mut self.grad);
        for (t, g) in self.theta.iter_mut().zip(&self.grad) {
            *t -= eta * g;
        }
        self.t += 1;
        Ok(())
    }

    /// `ẑ_t = (1/t)θ̂_t + ((t−1)/t)ẑ_{t-1}`, counting only iterates past the
    /// discard prefix.
    pub fn prj_update(&mut self) {
        if self.t <= self.discard_prefix {
            return;
        }
        self.averaged += 1;
        let w = 1.0 / self.averaged as f64;
        for (z, t) in self.average.iter_mut().zip(&self.theta) {
            *z += (t - *z) * w;
        }
    }
}

#[derive(Debug, Clone)]
pub struct SgdOutput {
    pub theta: Vec<f64>,
    pub average: Vec<f64>,
    pub samples_drawn: usize,
}

/// `T` steps of SGD with PRJ averaging, one sample per step.
pub fn run_sgd<P, R>(p: &P, theta0: &[f64], schedule: &StepSchedule, horizon: usize, rng: &mut R) -> Result<SgdOutput>
where
    P: StochasticProblem,
    R: Rng + ?Sized,
{
    run_sgd_observed(p, theta0, schedule, horizon, rng, |_| {})
}

/// [`run_sgd`] that hands the state to `observe` after every step.
pub fn run_sgd_observed<P, R, F>(
    p: &P,
    theta0: &[f64],
    schedule: &StepSchedule,
    horizon: usize,
    rng: &mut R,
    mut observe: F,
) -> Result<SgdOutput>
where
    P: StochasticProblem,
    R: Rng + ?Sized,
    F: FnMut(&SgdState),
{
    p.check_dim(theta0)?;
    let mut state = SgdState::new(theta0);
    let mut sample = p.empty_sample();
    for t in 1..=horizon {
        p.draw_into(rng, &mut sample);
        state.sgd_step(p, &sample, schedule.at(t))?;
        state.prj_update();
        observe(&state);
    }
    Ok(SgdOutput {
        theta: state.theta,
        average: state.average,
        samples_drawn: horizon,
    })
}
