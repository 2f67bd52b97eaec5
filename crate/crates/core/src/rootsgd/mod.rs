//! ROOT-SGD: a recursive gradient estimator with `1/t` weights driving a
//! constant-step gradient method.
//!
//! ```text
//! v_t = ∇f(θ_{t-1}; ξ_t) + (t-1)/t · (v_{t-1} − ∇f(θ_{t-2}; ξ_t))
//! θ_t = θ_{t-1} − η_t v_t
//! ```
//!
//! Both gradients in the correction term are evaluated on the same sample.
//! A burn-in of `B` steps first averages gradients at the frozen start point;
//! the θ update switches on at `t = B`, which consumes the `B`-th sample for
//! both the average and the first step, so a run of horizon `T` draws exactly
//! `T` samples.

mod observe;
mod restart;

pub use observe::{NoObserver, Observer, ProbeRecord, ProbeRecorder, StepView};
pub use restart::{restart_schedule, run_with_restarts, RestartRun, RestartSchedule};

use rand::Rng;

use crate::error::{Error, Result};
use crate::oracle::{ProblemConstants, StochasticProblem};

/// Which assumption set the step-size ceiling is taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setting {
    /// Lipschitz stochastic noise.
    Lsn,
    /// Individually smooth and convex sample functions.
    Isc,
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lsn" => Ok(Setting::Lsn),
            "isc" => Ok(Setting::Isc),
            other => Err(Error::InvalidArgument(format!("unknown setting {other:?}"))),
        }
    }
}

/// `η_max`: `1/(4L) ∧ μ/(8ℓ_Ξ²)` under LSN, `1/(4ℓ_max)` under ISC.
pub fn max_step_size(c: &ProblemConstants, setting: Setting) -> Result<f64> {
    match setting {
        Setting::Lsn => {
            let l_xi = c.noise_lipschitz.ok_or(Error::MissingConstant("noise_lipschitz"))?;
            let noise_cap = if l_xi == 0.0 {
                f64::INFINITY
            } else {
                c.mu / (8.0 * l_xi * l_xi)
            };
            Ok((1.0 / (4.0 * c.smoothness)).min(noise_cap))
        }
        Setting::Isc => {
            let l_max = c
                .individual_smoothness
                .ok_or(Error::MissingConstant("individual_smoothness"))?;
            Ok(1.0 / (4.0 * l_max))
        }
    }
}

/// `ω_max`: `2ℓ_Ξ²/μ²` under LSN, `2ℓ_max/μ` under ISC. Diagnostic only.
pub fn omega_max(c: &ProblemConstants, setting: Setting) -> Result<f64> {
    match setting {
        Setting::Lsn => {
            let l_xi = c.noise_lipschitz.ok_or(Error::MissingConstant("noise_lipschitz"))?;
            Ok(2.0 * l_xi * l_xi / (c.mu * c.mu))
        }
        Setting::Isc => {
            let l_max = c
                .individual_smoothness
                .ok_or(Error::MissingConstant("individual_smoothness"))?;
            Ok(2.0 * l_max / c.mu)
        }
    }
}

/// Ceiling that ignores floating-point dust: values within `1e-9` relative
/// of an integer round to it, so `24/(0.1·0.1)` gives 2400, not 2401.
pub(crate) fn ceil_exact(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

/// `B = ⌈24/(μη)⌉`, at least 1.
pub fn burn_in_length(mu: f64, eta: f64) -> usize {
    let b = ceil_exact(24.0 / (mu * eta));
    if b.is_finite() && b >= 1.0 {
        b as usize
    } else {
        1
    }
}

/// Step-size ceiling under which the auxiliary linear process is stable
/// with bounded fourth moments: `1/(2L) ∧ μ/(16ℓ_Ξ²) ∧ μ^{1/3}/(6ℓ′^{4/3})`.
pub fn asymptotic_step_ceiling(c: &ProblemConstants) -> Result<f64> {
    let l_xi = c.noise_lipschitz.ok_or(Error::MissingConstant("noise_lipschitz"))?;
    let l4 = c
        .hessian_noise_fourth_root
        .ok_or(Error::MissingConstant("hessian_noise_fourth_root"))?;
    let mut ceiling = 1.0 / (2.0 * c.smoothness);
    if l_xi > 0.0 {
        ceiling = ceiling.min(c.mu / (16.0 * l_xi * l_xi));
    }
    if l4 > 0.0 {
        ceiling = ceiling.min(c.mu.cbrt() / (6.0 * l4.powf(4.0 / 3.0)));
    }
    Ok(ceiling)
}

/// `2700‖∇F(θ₀)‖²/(η²μ²(T+1)²) + 28σ*²/(T+1)`, the guaranteed bound on
/// `E‖∇F(θ_T)‖²` for `η ≤ η_max`, `B = ⌈24/(μη)⌉` and `T ≥ B`.
pub fn gradient_norm_bound(g0_sq: f64, eta: f64, mu: f64, sigma_star_sq: f64, horizon: usize) -> f64 {
    let t1 = horizon as f64 + 1.0;
    2700.0 * g0_sq / (eta * eta * mu * mu * t1 * t1) + 28.0 * sigma_star_sq / t1
}

/// Single-loop sample complexity for `E‖∇F‖² ≤ ε²`:
/// `max(74/(ημ)·(G₀/ε ∨ 1), 56σ*²/ε²)`.
pub fn single_loop_complexity(g0: f64, eps: f64, eta: f64, mu: f64, sigma_star_sq: f64) -> f64 {
    (74.0 / (eta * mu) * (g0 / eps).max(1.0)).max(56.0 * sigma_star_sq / (eps * eps))
}

/// Constant step size and burn-in length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepPlan {
    eta: f64,
    burn_in: usize,
    in_theory: bool,
    omega_max: Option<f64>,
}

impl StepPlan {
    /// A plan with no theory attached (tagged out-of-theory).
    pub fn new(eta: f64, burn_in: usize) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {eta}")));
        }
        if burn_in == 0 {
            return Err(Error::InvalidArgument("burn-in length must be at least 1".into()));
        }
        Ok(Self {
            eta,
            burn_in,
            in_theory: false,
            omega_max: None,
        })
    }

    /// Plan with `B = ⌈24/(μη)⌉`. In strict mode `η > η_max` is rejected;
    /// otherwise such plans are allowed but tagged out-of-theory.
    pub fn for_problem(c: &ProblemConstants, setting: Setting, eta: f64, strict: bool) -> Result<Self> {
        let ceiling = max_step_size(c, setting)?;
        if strict && eta > ceiling {
            return Err(Error::StepSizeAboveCeiling { eta, ceiling });
        }
        let mut plan = Self::new(eta, burn_in_length(c.mu, eta))?;
        plan.in_theory = eta <= ceiling;
        plan.omega_max = omega_max(c, setting).ok();
        Ok(plan)
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Result<Self> {
        if burn_in == 0 {
            return Err(Error::InvalidArgument("burn-in length must be at least 1".into()));
        }
        self.burn_in = burn_in;
        Ok(self)
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    /// False when the plan was built without a ceiling check or above it.
    pub fn in_theory(&self) -> bool {
        self.in_theory
    }

    pub fn omega_max(&self) -> Option<f64> {
        self.omega_max
    }

    /// `η_t`: zero for `t < B`, `η` from `t = B` on.
    pub fn step_size_at(&self, t: usize) -> f64 {
        if t >= self.burn_in {
            self.eta
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    BurnIn,
    Running,
}

/// `(t, θ_t, θ_{t-1}, v_t)` plus the loop counter `s` used by restarting.
#[derive(Debug, Clone)]
pub struct RootSgdState {
    t: usize,
    loop_step: usize,
    theta: Vec<f64>,
    theta_lag: Vec<f64>,
    v: Vec<f64>,
    phase: Phase,
    g1: Vec<f64>,
    g2: Vec<f64>,
}

impl RootSgdState {
    /// Fresh state at `θ₀`, entering burn-in. `θ_{-1}` is set to `θ₀`.
    pub fn new(theta0: &[f64]) -> Self {
        let d = theta0.len();
        Self {
            t: 0,
            loop_step: 0,
            theta: theta0.to_vec(),
            theta_lag: theta0.to_vec(),
            v: vec![0.0; d],
            phase: Phase::BurnIn,
            g1: vec![0.0; d],
            g2: vec![0.0; d],
        }
    }

    /// Fresh state that skips burn-in: the first [`step`](Self::step) uses
    /// `v₁ = ∇f(θ₀; ξ₁)` alone.
    pub fn without_burn_in(theta0: &[f64]) -> Self {
        let mut s = Self::new(theta0);
        s.phase = Phase::Running;
        s
    }

    /// Arbitrary state, for resuming or constructing fixed points.
    pub fn from_parts(
        t: usize,
        loop_step: usize,
        theta: Vec<f64>,
        theta_lag: Vec<f64>,
        v: Vec<f64>,
        phase: Phase,
    ) -> Result<Self> {
        let d = theta.len();
        for len in [theta_lag.len(), v.len()] {
            if len != d {
                return Err(Error::DimensionMismatch { expected: d, found: len });
            }
        }
        Ok(Self {
            t,
            loop_step,
            theta,
            theta_lag,
            v,
            phase,
            g1: vec![0.0; d],
            g2: vec![0.0; d],
        })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Counter `s` within the current restart loop.
    pub fn loop_step(&self) -> usize {
        self.loop_step
    }

    /// `θ_t`.
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// `θ_{t-1}`.
    pub fn theta_lag(&self) -> &[f64] {
        &self.theta_lag
    }

    /// `v_t`.
    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Resets the loop counter and re-enters burn-in at the current iterate.
    pub fn restart(&mut self) {
        self.loop_step = 0;
        self.phase = Phase::BurnIn;
        self.theta_lag.copy_from_slice(&self.theta);
        self.v.iter_mut().for_each(|x| *x = 0.0);
    }

    fn check_dim<P: StochasticProblem>(&self, p: &P) -> Result<()> {
        if self.theta.len() != p.dim() {
            return Err(Error::DimensionMismatch {
                expected: p.dim(),
                found: self.theta.len(),
            });
        }
        Ok(())
    }

    /// One burn-in step: `v ← v + (∇f(θ₀; ξ) − v)/s` with θ frozen. When
    /// `s` reaches `B` the first gradient step `θ_B = θ₀ − η v_B` is taken
    /// and the state switches to [`Phase::Running`].
    pub fn burn_in_step<P: StochasticProblem>(&mut self, p: &P, sample: &P::Sample, plan: &StepPlan) -> Result<()> {
        if self.phase != Phase::BurnIn {
            return Err(Error::PhaseViolation("burn_in_step called outside burn-in"));
        }
        if self.loop_step >= plan.burn_in {
            return Err(Error::PhaseViolation("burn-in already complete"));
        }
        self.check_dim(p)?;
        self.t += 1;
        self.loop_step += 1;
        let inv = 1.0 / self.loop_step as f64;
        p.grad_into(&self.theta, sample, &mut self.g1);
        for (v, g) in self.v.iter_mut().zip(&self.g1) {
            *v += (g - *v) * inv;
        }
        if self.loop_step == plan.burn_in {
            self.advance_theta(plan.eta);
            self.phase = Phase::Running;
        }
        Ok(())
    }

    /// One running step with the recursive estimator
    /// `v ← g₁ + ((s−1)/s)(v − g₂)`, `g₁ = ∇f(θ_{t-1}; ξ)`, `g₂ = ∇f(θ_{t-2}; ξ)`.
    pub fn step<P: StochasticProblem>(&mut self, p: &P, sample: &P::Sample, eta: f64) -> Result<()> {
        self.running_step(p, sample, eta, false)
    }

    /// Same update written as a mix of a plain stochastic gradient and a
    /// SARAH-type recursive gradient:
    /// `v ← (1/s)·g₁ + ((s−1)/s)·(v + g₁ − g₂)`.
    pub fn step_hybrid_form<P: StochasticProblem>(&mut self, p: &P, sample: &P::Sample, eta: f64) -> Result<()> {
        self.running_step(p, sample, eta, true)
    }

    fn running_step<P: StochasticProblem>(&mut self, p: &P, sample: &P::Sample, eta: f64, hybrid: bool) -> Result<()> {
        if self.phase != Phase::Running {
            return Err(Error::PhaseViolation("step called during burn-in"));
        }
        self.check_dim(p)?;
        self.t += 1;
        self.loop_step += 1;
        let s = self.loop_step as f64;
        p.grad_into(&self.theta, sample, &mut self.g1);
        if self.loop_step == 1 {
            self.v.copy_from_slice(&self.g1);
        } else {
            p.grad_into(&self.theta_lag, sample, &mut self.g2);
            let w = (s - 1.0) / s;
            if hybrid {
                let inv = 1.0 / s;
                for ((v, g1), g2) in self.v.iter_mut().zip(&self.g1).zip(&self.g2) {
                    *v = inv * g1 + w * (*v + g1 - g2);
                }
            } else {
                for ((v, g1), g2) in self.v.iter_mut().zip(&self.g1).zip(&self.g2) {
                    *v = g1 + w * (*v - g2);
                }
            }
        }
        self.advance_theta(eta);
        Ok(())
    }

    fn advance_theta(&mut self, eta: f64) {
        std::mem::swap(&mut self.theta, &mut self.theta_lag);
        for ((t, lag), v) in self.theta.iter_mut().zip(&self.theta_lag).zip(&self.v) {
            *t = lag - eta * v;
        }
    }

    /// Burn-in or running step, whichever the phase calls for.
    pub fn advance<P: StochasticProblem>(&mut self, p: &P, sample: &P::Sample, plan: &StepPlan) -> Result<()> {
        match self.phase {
            Phase::BurnIn => self.burn_in_step(p, sample, plan),
            Phase::Running => self.step(p, sample, plan.eta),
        }
    }
}

/// Result of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub theta: Vec<f64>,
    pub samples_drawn: usize,
    pub in_theory: bool,
}

/// Runs `T` iterations (burn-in included) from `θ₀`, drawing one sample per
/// iteration from `rng` and reporting each iteration to `observer`.
pub fn run<P, R, O>(
    p: &P,
    theta0: &[f64],
    plan: &StepPlan,
    horizon: usize,
    rng: &mut R,
    observer: &mut O,
) -> Result<RunOutput>
where
    P: StochasticProblem,
    R: Rng + ?Sized,
    O: Observer<P> + ?Sized,
{
    if horizon < plan.burn_in {
        return Err(Error::HorizonTooShort {
            horizon,
            burn_in: plan.burn_in,
        });
    }
    p.check_dim(theta0)?;
    let mut state = RootSgdState::new(theta0);
    let mut sample = p.empty_sample();
    let mut lag2 = theta0.to_vec();
    for _ in 0..horizon {
        p.draw_into(rng, &mut sample);
        drive_step(p, &mut state, &sample, plan, observer, &mut lag2)?;
    }
    Ok(RunOutput {
        theta: state.theta,
        samples_drawn: horizon,
        in_theory: plan.in_theory,
    })
}

/// Advances `state` by one sample and notifies `observer` when it asks for
/// this iteration.
pub(crate) fn drive_step<P, O>(
    p: &P,
    state: &mut RootSgdState,
    sample: &P::Sample,
    plan: &StepPlan,
    observer: &mut O,
    lag2: &mut [f64],
) -> Result<()>
where
    P: StochasticProblem,
    O: Observer<P> + ?Sized,
{
    let t = state.t + 1;
    let wanted = observer.wants(t);
    if wanted {
        lag2.copy_from_slice(&state.theta_lag);
    }
    let burn_in = state.phase == Phase::BurnIn;
    state.advance(p, sample, plan)?;
    if wanted {
        observer.observe(
            p,
            &StepView {
                t,
                loop_step: state.loop_step,
                burn_in,
                sample,
                theta_before: &state.theta_lag,
                theta_lag_before: lag2,
                v: &state.v,
                theta: &state.theta,
            },
        );
    }
    Ok(())
}
