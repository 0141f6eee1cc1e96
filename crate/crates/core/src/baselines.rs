//! Reference policies: uniform random actions and the cross-entropy method.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Each coordinate uniform on `[−1, 1]`.
pub fn random_act<R: Rng + ?Sized>(d_action: usize, rng: &mut R) -> Vec<f64> {
    (0..d_action).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CemState {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub population: usize,
    pub elite_fraction: f64,
    pub sigma_min: f64,
}

impl CemState {
    pub fn new(d_action: usize, population: usize, elite_fraction: f64, sigma_min: f64) -> Result<Self> {
        let s = CemState {
            mu: vec![0.0; d_action],
            sigma: vec![1.0; d_action],
            population,
            elite_fraction,
            sigma_min,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.population == 0 {
            return Err(Error::Argument("CEM population must be positive".into()));
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction <= 1.0) {
            return Err(Error::Argument("CEM elite fraction must lie in (0, 1]".into()));
        }
        if !(self.sigma_min > 0.0) || self.mu.len() != self.sigma.len() {
            return Err(Error::Argument("invalid CEM sigma".into()));
        }
        Ok(())
    }

    /// `⌈ρN⌉`.
    pub fn num_elites(&self) -> usize {
        ((self.elite_fraction * self.population as f64).ceil() as usize).clamp(1, self.population)
    }
}

/// Samples `N` actions from `N(μ, σ)`, scores them with `evaluate`, and
/// refits `μ, σ` (mean and population std) to the best `⌈ρN⌉`. Equal
/// returns keep sample order.
pub fn cem_iteration<R, F>(state: &CemState, mut evaluate: F, rng: &mut R) -> Result<CemState>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64]) -> Result<f64>,
{
    state.validate()?;
    let samples: Vec<Vec<f64>> = (0..state.population)
        .map(|_| {
            state
                .mu
                .iter()
                .zip(&state.sigma)
                .map(|(m, s)| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + s * z
                })
                .collect()
        })
        .collect();
    refit(state, samples, &mut evaluate)
}

/// Refit step of [`cem_iteration`] on given samples.
pub fn refit<F>(state: &CemState, samples: Vec<Vec<f64>>, mut evaluate: F) -> Result<CemState>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut scored = Vec::with_capacity(samples.len());
    for (i, a) in samples.iter().enumerate() {
        let v = evaluate(a)?;
        if v.is_nan() {
            return Err(Error::Argument(format!("CEM sample {i} evaluated to NaN")));
        }
        scored.push((v, i));
    }
    // stable: ties keep the earlier sample
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let n = state.num_elites().min(samples.len());
    let elites: Vec<&Vec<f64>> = scored[..n].iter().map(|&(_, i)| &samples[i]).collect();
    let d = state.mu.len();
    let mut mu = vec![0.0; d];
    for e in &elites {
        for (m, x) in mu.iter_mut().zip(e.iter()) {
            *m += x / n as f64;
        }
    }
    let mut var = vec![0.0; d];
    for e in &elites {
        for ((v, x), m) in var.iter_mut().zip(e.iter()).zip(&mu) {
            *v += (x - m) * (x - m) / n as f64;
        }
    }
    Ok(CemState {
        mu,
        sigma: var.into_iter().map(|v| v.sqrt().max(state.sigma_min)).collect(),
        ..state.clone()
    })
}
