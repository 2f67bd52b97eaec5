use rand::Rng;

use super::{burn_in_length, ceil_exact, drive_step, Observer, RootSgdState, StepPlan};
use crate::error::{Error, Result};
use crate::oracle::{ProblemConstants, StochasticProblem};

/// Loop boundaries for ROOT-SGD with restarting.
///
/// Loop `k` (1-based) runs iterations `Δ_{k-1}+1 ..= Δ_k` and targets
/// `E‖∇F(θ_{Δ_k})‖² ≤ G²_k = G²_{k-1}/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartSchedule {
    /// `[G²_0, …, G²_K]`.
    pub targets: Vec<f64>,
    /// `[Δ_0 = 0, …, Δ_K]`.
    pub timestamps: Vec<usize>,
    pub eta: f64,
    pub mu: f64,
    pub sigma_star_sq: f64,
    pub eps_sq: f64,
}

impl RestartSchedule {
    /// `K`.
    pub fn loops(&self) -> usize {
        self.timestamps.len() - 1
    }

    pub fn total_samples(&self) -> usize {
        *self.timestamps.last().unwrap_or(&0)
    }

    /// Per-loop burn-in, the same `⌈24/(μη)⌉` in every loop.
    pub fn burn_in(&self) -> usize {
        burn_in_length(self.mu, self.eta)
    }

    /// `C(ε) = (105/(ημ))·K + 224σ*²·(1/ε² ∨ 1/G₀²)`.
    pub fn complexity_bound(&self) -> f64 {
        let g0_sq = self.targets[0];
        105.0 / (self.eta * self.mu) * self.loops() as f64
            + 224.0 * self.sigma_star_sq * (1.0 / self.eps_sq).max(1.0 / g0_sq)
    }
}

/// `K = ⌈log₂(G₀²/ε² ∨ 1)⌉` loops with
/// `Δ_k − Δ_{k-1} = ⌈max(105/(ημ), 112σ*²/G²_{k-1})⌉`.
pub fn restart_schedule(c: &ProblemConstants, g0_sq: f64, eps_sq: f64, eta: f64) -> Result<RestartSchedule> {
    for (name, x) in [("G0^2", g0_sq), ("eps^2", eps_sq), ("eta", eta)] {
        if !(x > 0.0 && x.is_finite()) {
            return Err(Error::InvalidArgument(format!("{name} must be positive, got {x}")));
        }
    }
    let loops = ceil_exact((g0_sq / eps_sq).max(1.0).log2()) as usize;
    let floor = 105.0 / (eta * c.mu);
    let mut targets = vec![g0_sq];
    let mut timestamps = vec![0usize];
    for k in 1..=loops {
        let prev = targets[k - 1];
        let len = ceil_exact(floor.max(112.0 * c.sigma_star_sq / prev)) as usize;
        timestamps.push(timestamps[k - 1] + len);
        targets.push(prev / 2.0);
    }
    Ok(RestartSchedule {
        targets,
        timestamps,
        eta,
        mu: c.mu,
        sigma_star_sq: c.sigma_star_sq,
        eps_sq,
    })
}

#[derive(Debug, Clone)]
pub struct RestartRun {
    pub theta: Vec<f64>,
    /// `θ_{Δ_k}` for `k = 0..=K`.
    pub checkpoints: Vec<Vec<f64>>,
    pub samples_drawn: usize,
}

/// Runs each loop of `schedule` as a fresh burn-in-plus-recursion from the
/// previous loop's final iterate. The observer sees the global iteration
/// index `t` and the per-loop counter in [`StepView::loop_step`](super::StepView).
pub fn run_with_restarts<P, R, O>(
    p: &P,
    theta0: &[f64],
    schedule: &RestartSchedule,
    rng: &mut R,
    observer: &mut O,
) -> Result<RestartRun>
where
    P: StochasticProblem,
    R: Rng + ?Sized,
    O: Observer<P> + ?Sized,
{
    p.check_dim(theta0)?;
    let plan = StepPlan::new(schedule.eta, schedule.burn_in())?;
    let mut state = RootSgdState::new(theta0);
    let mut sample = p.empty_sample();
    let mut lag2 = theta0.to_vec();
    let mut checkpoints = vec![theta0.to_vec()];
    for k in 1..schedule.timestamps.len() {
        let len = schedule.timestamps[k] - schedule.timestamps[k - 1];
        if len < plan.burn_in() {
            return Err(Error::HorizonTooShort {
                horizon: len,
                burn_in: plan.burn_in(),
            });
        }
        state.restart();
        for _ in 0..len {
            p.draw_into(rng, &mut sample);
            drive_step(p, &mut state, &sample, &plan, observer, &mut lag2)?;
        }
        checkpoints.push(state.theta().to_vec());
    }
    Ok(RestartRun {
        theta: state.theta().to_vec(),
        checkpoints,
        samples_drawn: schedule.total_samples(),
    })
}
