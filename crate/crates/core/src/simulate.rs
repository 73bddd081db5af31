//! Forward simulation of inclinations `Z_n` and empirical means `N_n`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{HierarchicalNetwork, StepSizeSchedule};
use crate::scalar::Real;
use crate::spectral::SpectralDecomposition;
use crate::stream::AgentStreams;

/// Probabilities outside [0, 1] by more than this are an upstream bug.
pub const PROBABILITY_TOL: f64 = 1e-12;

/// Initial inclinations: fixed entries, or `None` for an independent
/// uniform(0, 1) draw.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InitialSpec<T> {
    entries: Vec<Option<T>>,
}

impl<T: Real> InitialSpec<T> {
    pub fn fixed(z0: &[T]) -> Self {
        Self { entries: z0.iter().map(|&x| Some(x)).collect() }
    }

    pub fn from_entries(entries: Vec<Option<T>>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Option<T>] {
        &self.entries
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.entries.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: self.entries.len() });
        }
        for x in self.entries.iter().flatten() {
            if !(*x >= T::zero() && *x <= T::one()) {
                return Err(Error::InvalidParameter(format!("initial inclination {x} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Expected initial state.
    pub fn mean(&self) -> Vec<T> {
        self.entries.iter().map(|x| x.unwrap_or(T::lit(0.5))).collect()
    }

    fn realize(&self, streams: &AgentStreams) -> Vec<T> {
        self.entries
            .iter()
            .enumerate()
            .map(|(j, x)| x.unwrap_or_else(|| T::lit(streams.initial_unit(j))))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct ProcessState<T> {
    n: u64,
    z: Vec<T>,
    ncnt: Vec<T>,
    streams: AgentStreams,
    probs: Vec<T>,
    actions: Vec<T>,
}

impl<T: Real> ProcessState<T> {
    pub fn new(init: &InitialSpec<T>, seed: u64, run_index: u64) -> Result<Self> {
        let n = init.len();
        init.validate(n)?;
        let streams = AgentStreams::new(seed, run_index, n);
        let z = init.realize(&streams);
        Ok(Self {
            n: 0,
            z,
            ncnt: vec![T::zero(); n],
            streams,
            probs: vec![T::zero(); n],
            actions: vec![T::zero(); n],
        })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn z(&self) -> &[T] {
        &self.z
    }

    /// Empirical action means; all zero before the first step.
    pub fn ncnt(&self) -> &[T] {
        &self.ncnt
    }

    /// Last action vector `X_n`.
    pub fn actions(&self) -> &[T] {
        &self.actions
    }

    /// Probabilities `W^T Z_{n-1}` used for the last step.
    pub fn last_probabilities(&self) -> &[T] {
        &self.probs
    }

    pub fn streams(&self) -> &AgentStreams {
        &self.streams
    }
}

/// One transition `n -> n+1` using step size `r(n+1)`.
pub fn step<T: Real>(
    state: &mut ProcessState<T>,
    network: &HierarchicalNetwork<T>,
    schedule: &StepSizeSchedule<T>,
) -> Result<()> {
    let n_agents = state.z.len();
    if network.n_agents() != n_agents {
        return Err(Error::DimensionMismatch { expected: network.n_agents(), found: n_agents });
    }
    let w = network.weights().as_slice();
    for p in state.probs.iter_mut() {
        *p = T::zero();
    }
    for (h, &zh) in state.z.iter().enumerate() {
        if zh == T::zero() {
            continue;
        }
        let row = &w[h * n_agents..(h + 1) * n_agents];
        for (p, &wh) in state.probs.iter_mut().zip(row) {
            *p = *p + wh * zh;
        }
    }
    let tol = T::lit(PROBABILITY_TOL);
    for (j, p) in state.probs.iter_mut().enumerate() {
        if *p < -tol || *p > T::one() + tol || p.is_nan() {
            return Err(Error::ProbabilityOutOfRange { j, p: p.as_f64() });
        }
        *p = p.max(T::zero()).min(T::one());
    }

    let next = state.n + 1;
    let r = schedule.r(next);
    let a = T::one() / T::from_u64(next).expect("step count representable");
    for j in 0..n_agents {
        let u = T::lit(state.streams.next_unit(j));
        let x = if u < state.probs[j] { T::one() } else { T::zero() };
        state.actions[j] = x;
        // Written as z + r (x - z) so that x == z is a fixed point.
        state.z[j] = state.z[j] + r * (x - state.z[j]);
        state.ncnt[j] = state.ncnt[j] + a * (x - state.ncnt[j]);
    }
    state.n = next;
    Ok(())
}

/// Steps until `state.n() == target`.
pub fn advance_to<T: Real>(
    state: &mut ProcessState<T>,
    network: &HierarchicalNetwork<T>,
    schedule: &StepSizeSchedule<T>,
    target: u64,
) -> Result<()> {
    while state.n < target {
        step(state, network, schedule)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Record<T> {
    pub n: u64,
    pub z: Vec<T>,
    pub ncnt: Vec<T>,
    /// Martingale increment `X_n - W^T Z_{n-1}`.
    pub increment: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct Trajectory<T> {
    pub record_stride: u64,
    pub records: Vec<Record<T>>,
    pub final_state: ProcessState<T>,
    pub seed: u64,
    pub run_index: u64,
}

/// Runs `horizon` steps, recording every `record_stride`-th state and the
/// final one.
pub fn run_trajectory<T: Real>(
    network: &HierarchicalNetwork<T>,
    schedule: &StepSizeSchedule<T>,
    init: &InitialSpec<T>,
    horizon: u64,
    seed: u64,
    run_index: u64,
    record_stride: u64,
) -> Result<Trajectory<T>> {
    if horizon == 0 {
        return Err(Error::ZeroHorizon);
    }
    init.validate(network.n_agents())?;
    let stride = record_stride.max(1);
    let mut state = ProcessState::new(init, seed, run_index)?;
    let mut records = Vec::new();
    while state.n < horizon {
        step(&mut state, network, schedule)?;
        if state.n % stride == 0 || state.n == horizon {
            records.push(Record {
                n: state.n,
                z: state.z.clone(),
                ncnt: state.ncnt.clone(),
                increment: state
                    .actions
                    .iter()
                    .zip(&state.probs)
                    .map(|(&x, &p)| x - p)
                    .collect(),
            });
        }
    }
    Ok(Trajectory { record_stride: stride, records, final_state: state, seed, run_index })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProjectedSeries<T> {
    pub n: Vec<u64>,
    pub z_tilde: Vec<T>,
    pub z_hat: Vec<Vec<T>>,
    pub n_hat: Vec<Vec<T>>,
    pub increments: Vec<Vec<T>>,
}

/// `Z~ = N^{-1/2} q_1^T Z`, `Z^ = P Q^T Z`, `N^ = N - Z~ 1` per record.
pub fn project<T: Real>(
    trajectory: &Trajectory<T>,
    spectral: &SpectralDecomposition<T>,
) -> Result<ProjectedSeries<T>> {
    let n = spectral.n();
    let mut out = ProjectedSeries {
        n: Vec::new(),
        z_tilde: Vec::new(),
        z_hat: Vec::new(),
        n_hat: Vec::new(),
        increments: Vec::new(),
    };
    for rec in &trajectory.records {
        if rec.z.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: rec.z.len() });
        }
        let zt = spectral.z_tilde(&rec.z);
        out.n.push(rec.n);
        out.z_tilde.push(zt);
        out.z_hat.push(spectral.z_hat(&rec.z));
        out.n_hat.push(rec.ncnt.iter().map(|&x| x - zt).collect());
        out.increments.push(rec.increment.clone());
    }
    Ok(out)
}

/// `max_{i,j} |Z_i - Z_j|`.
pub fn spread<T: Real>(z: &[T]) -> T {
    let Some(&first) = z.first() else { return T::zero() };
    let (lo, hi) = z.iter().fold((first, first), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    hi - lo
}
