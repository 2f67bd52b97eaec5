use crate::linalg::{dist_sq, norm_sq};
use crate::oracle::StochasticProblem;

/// Everything known about iteration `t` right after it completes.
#[derive(Debug)]
pub struct StepView<'a, S> {
    pub t: usize,
    /// Counter `s` within the current restart loop.
    pub loop_step: usize,
    /// Whether this iteration was a burn-in step (the last burn-in step also
    /// moves θ).
    pub burn_in: bool,
    pub sample: &'a S,
    /// `θ_{t-1}`.
    pub theta_before: &'a [f64],
    /// `θ_{t-2}`.
    pub theta_lag_before: &'a [f64],
    /// `v_t`.
    pub v: &'a [f64],
    /// `θ_t`.
    pub theta: &'a [f64],
}

/// Pull-based trace hook: the driver only builds a [`StepView`] for
/// iterations where [`wants`](Observer::wants) returns true.
pub trait Observer<P: StochasticProblem> {
    fn wants(&self, _t: usize) -> bool {
        true
    }

    fn observe(&mut self, p: &P, view: &StepView<'_, P::Sample>);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoObserver;

impl<P: StochasticProblem> Observer<P> for NoObserver {
    fn wants(&self, _t: usize) -> bool {
        false
    }

    fn observe(&mut self, _p: &P, _view: &StepView<'_, P::Sample>) {}
}

impl<P: StochasticProblem, F> Observer<P> for F
where
    F: FnMut(&P, &StepView<'_, P::Sample>),
{
    fn observe(&mut self, p: &P, view: &StepView<'_, P::Sample>) {
        self(p, view)
    }
}

/// Snapshot of one probed iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRecord {
    pub t: usize,
    pub theta: Vec<f64>,
    pub v: Vec<f64>,
    /// `z_t = v_t − ∇F(θ_{t-1})`.
    pub z: Vec<f64>,
    /// `‖∇F(θ_t)‖²`.
    pub grad_norm_sq: f64,
    /// `‖θ_t − θ*‖²`.
    pub dist_sq: f64,
}

impl ProbeRecord {
    pub fn v_norm_sq(&self) -> f64 {
        norm_sq(&self.v)
    }

    pub fn z_norm_sq(&self) -> f64 {
        norm_sq(&self.z)
    }
}

/// Records [`ProbeRecord`]s at a fixed set of iteration indices; memory is
/// O(number of probes).
#[derive(Debug, Clone)]
pub struct ProbeRecorder {
    probes: Vec<usize>,
    records: Vec<ProbeRecord>,
}

impl ProbeRecorder {
    pub fn new(probes: &[usize]) -> Self {
        let mut probes = probes.to_vec();
        probes.sort_unstable();
        probes.dedup();
        Self {
            records: Vec::with_capacity(probes.len()),
            probes,
        }
    }

    pub fn probes(&self) -> &[usize] {
        &self.probes
    }

    pub fn records(&self) -> &[ProbeRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ProbeRecord> {
        self.records
    }
}

impl<P: StochasticProblem> Observer<P> for ProbeRecorder {
    fn wants(&self, t: usize) -> bool {
        self.probes.binary_search(&t).is_ok()
    }

    fn observe(&mut self, p: &P, view: &StepView<'_, P::Sample>) {
        let d = p.dim();
        let mut pop = vec![0.0; d];
        p.population_grad_into(view.theta_before, &mut pop);
        let z = view.v.iter().zip(&pop).map(|(v, g)| v - g).collect();
        p.population_grad_into(view.theta, &mut pop);
        self.records.push(ProbeRecord {
            t: view.t,
            theta: view.theta.to_vec(),
            v: view.v.to_vec(),
            z,
            grad_norm_sq: norm_sq(&pop),
            dist_sq: dist_sq(view.theta, &p.constants().optimum),
        });
    }
}
