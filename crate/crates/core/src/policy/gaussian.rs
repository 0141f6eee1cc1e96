//! Diagonal Gaussian actor and deterministic top-K slate selection.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::dot;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl GaussianParams {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `a = μ + σ ⊙ z`.
    pub fn reparameterize(&self, z: &[f64]) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.sigma)
            .zip(z)
            .map(|((m, s), z)| m + s * z)
            .collect()
    }
}

/// Draws `a = μ + σ ⊙ z` and returns `(a, z)`.
pub fn sample_action<R: Rng + ?Sized>(g: &GaussianParams, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let z: Vec<f64> = (0..g.dim()).map(|_| StandardNormal.sample(rng)).collect();
    (g.reparameterize(&z), z)
}

/// `Σ_i −½ z_i² − ln σ_i − ½ ln 2π` with `z_i = (a_i − μ_i)/σ_i`.
pub fn forward_log_density(g: &GaussianParams, a: &[f64]) -> Result<f64> {
    if a.len() != g.dim() || g.sigma.len() != g.dim() {
        return Err(Error::Dimension(format!(
            "action of length {} for a {}-dimensional Gaussian",
            a.len(),
            g.dim()
        )));
    }
    let half_ln_2pi = 0.5 * (2.0 * PI).ln();
    Ok(g.mu
        .iter()
        .zip(&g.sigma)
        .zip(a)
        .map(|((m, s), x)| {
            let z = (x - m) / s;
            -0.5 * z * z - s.ln() - half_ln_2pi
        })
        .sum())
}

/// `(∂ld/∂μ, ∂ld/∂σ)` of [`forward_log_density`] at fixed `a`.
pub fn log_density_grad(g: &GaussianParams, a: &[f64]) -> (Vec<f64>, Vec<f64>) {
    g.mu
        .iter()
        .zip(&g.sigma)
        .zip(a)
        .map(|((m, s), x)| {
            let z = (x - m) / s;
            (z / s, (z * z - 1.0) / s)
        })
        .unzip()
}

/// The `k` items with the highest `⟨a, v_i⟩`, best first; ties go to the
/// smaller id.
pub fn action_to_slate(a: &[f64], catalog: &[Vec<f64>], k: usize) -> Result<Vec<usize>> {
    if k > catalog.len() {
        return Err(Error::Argument(format!(
            "slate of {k} from a catalog of {}",
            catalog.len()
        )));
    }
    if let Some(v) = catalog.iter().find(|v| v.len() != a.len()) {
        return Err(Error::Dimension(format!(
            "item embedding of length {} for an action of length {}",
            v.len(),
            a.len()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Argument("non-finite action".into()));
    }
    let scores: Vec<f64> = catalog.iter().map(|v| dot(a, v)).collect();
    let mut ids: Vec<usize> = (0..catalog.len()).collect();
    let by_score = |&i: &usize, &j: &usize| scores[j].total_cmp(&scores[i]).then(i.cmp(&j));
    if k < ids.len() && k > 0 {
        ids.select_nth_unstable_by(k - 1, by_score);
    }
    ids.truncate(k);
    ids.sort_by(by_score);
    Ok(ids)
}
