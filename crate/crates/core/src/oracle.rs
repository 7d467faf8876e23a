//! Brute-force reference computations.
//!
//! These share no code with the fast paths they check: the grid search
//! knows nothing about breakpoints, the Monte-Carlo check samples flows
//! directly, and the Lindley recursion works on waiting times rather than
//! departure instants.

use std::collections::BTreeMap;

use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envelope::{effective_envelope, EnvelopeError, FlowSpec};
use crate::sim::stream_rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub t_max: f64,
    pub steps: u64,
}

impl GridSpec {
    pub fn new(t_max: f64, steps: u64) -> Result<Self, OracleError> {
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(OracleError::Parameter(format!("t_max must be positive, got {t_max}")));
        }
        if steps < 2 {
            return Err(OracleError::Parameter(format!("need at least 2 steps, got {steps}")));
        }
        Ok(GridSpec { t_max, steps })
    }

    pub fn step(&self) -> f64 {
        self.t_max / self.steps as f64
    }

    /// The `i`-th of the `steps + 1` grid points.
    pub fn point(&self, i: u64) -> f64 {
        self.t_max * i as f64 / self.steps as f64
    }
}

/// `max (G(t) − C·t)/C` over the grid points, clipped at 0.
///
/// A lower bound on the continuous maximum, short of it by at most
/// `(max slope of G) · step / C`.
pub fn grid_delay_bound<F>(envelope: F, capacity: f64, grid: GridSpec) -> f64
where
    F: Fn(f64) -> f64 + Sync,
{
    (0..=grid.steps)
        .into_par_iter()
        .map(|i| {
            let t = grid.point(i);
            (envelope(t) - capacity * t) / capacity
        })
        .reduce(|| 0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McPoint {
    pub t: f64,
    pub envelope: f64,
    pub exceedances: u64,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub trials: u64,
    pub points: Vec<McPoint>,
    pub worst_frequency: f64,
}

const MC_CHUNK: u64 = 100_000;

/// Empirical frequency with which the aggregate of `specs` exceeds the
/// effective envelope at each `t`, sampling every flow from the two-point
/// law on `{0, A*(t)}` with mean `ρ·t`.
pub fn mc_envelope_check(
    specs: &[FlowSpec],
    epsilon: f64,
    t_samples: &[f64],
    trials: u64,
    seed: u64,
) -> Result<McReport, OracleError> {
    if specs.is_empty() {
        return Err(OracleError::Parameter("no flows".into()));
    }
    if trials == 0 {
        return Err(OracleError::Parameter("trials must be positive".into()));
    }
    if let Some(t) = t_samples.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
        return Err(OracleError::Parameter(format!("sample time {t} is not a finite non-negative value")));
    }
    let g = effective_envelope(specs, epsilon)?;

    // Identical flows are exchangeable: draw how many sit at the top point.
    let mut groups: BTreeMap<[u64; 3], (FlowSpec, u64)> = BTreeMap::new();
    for s in specs {
        let key = [s.peak_rate.as_f64().to_bits(), s.burst.to_bits(), s.sustained_rate.to_bits()];
        groups.entry(key).or_insert_with(|| (s.clone(), 0)).1 += 1;
    }

    let mut points = Vec::with_capacity(t_samples.len());
    for (ti, &t) in t_samples.iter().enumerate() {
        let threshold = g.eval(t)?;
        let laws: Vec<(f64, Binomial)> = groups
            .values()
            .map(|(spec, n)| {
                let top = spec.envelope().eval(t)?;
                let p = if top > 0.0 { (spec.sustained_rate * t / top).clamp(0.0, 1.0) } else { 0.0 };
                Ok((top, Binomial::new(*n, p).expect("p clamped to [0, 1]")))
            })
            .collect::<Result<_, EnvelopeError>>()?;
        let chunks = trials.div_ceil(MC_CHUNK);
        let exceedances: u64 = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = stream_rng(seed, &format!("mc:{ti}:{c}"));
                let n = MC_CHUNK.min(trials - c * MC_CHUNK);
                (0..n)
                    .filter(|_| {
                        let total: f64 = laws.iter().map(|(top, law)| law.sample(&mut rng) as f64 * top).sum();
                        total > threshold
                    })
                    .count() as u64
            })
            .sum();
        points.push(McPoint {
            t,
            envelope: threshold,
            exceedances,
            frequency: exceedances as f64 / trials as f64,
        });
    }
    let worst_frequency = points.iter().map(|p| p.frequency).fold(0.0, f64::max);
    Ok(McReport {
        trials,
        points,
        worst_frequency,
    })
}

/// Waiting times (before service starts) of `(arrival, size)` packets at a
/// FIFO server: `W₀ = 0`, `Wₙ₊₁ = max(0, Wₙ + Sₙ − Tₙ)`.
pub fn lindley_queue(schedule: &[(f64, f64)], capacity: f64) -> Result<Vec<f64>, OracleError> {
    if !(capacity > 0.0) {
        return Err(OracleError::Parameter(format!("capacity must be positive, got {capacity}")));
    }
    if let Some(i) = (1..schedule.len()).find(|&i| schedule[i].0 < schedule[i - 1].0) {
        return Err(OracleError::Parameter(format!("schedule not sorted at index {i}")));
    }
    let mut waits = Vec::with_capacity(schedule.len());
    let mut w = 0.0;
    for (n, &(arrival, _)) in schedule.iter().enumerate() {
        if n > 0 {
            let (prev_arrival, prev_size) = schedule[n - 1];
            w = (w + prev_size / capacity - (arrival - prev_arrival)).max(0.0);
        }
        waits.push(w);
    }
    Ok(waits)
}
