use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{squared_norm, ReferenceSampler, Target, TargetMetadata};
use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::rng::NoiseSource;

/// Mode placement used by [`make_circle_gmm`], written into resolved run configs.
pub const CIRCLE_LAYOUT_RULE: &str =
    "mode j at angle 2*pi*j/K on a circle of radius 2r in the first two coordinates";

/// Components of a unit-covariance Gaussian mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureSpec {
    pub means: Vec<Vec<f64>>,
    /// Unnormalized log weights; empty means equal weights.
    #[serde(default)]
    pub log_weights: Vec<f64>,
}

/// `p*(x) ∝ Σ_j w_j exp(-||x - μ_j||² / 2)`.
#[derive(Clone, Debug)]
pub struct GaussianMixture {
    dim: usize,
    means: Vec<Vec<f64>>,
    /// Normalized log weights.
    log_weights: Vec<f64>,
    cumulative: Vec<f64>,
}

pub fn make_gmm(spec: GaussianMixtureSpec) -> Result<GaussianMixture> {
    let GaussianMixtureSpec { means, log_weights } = spec;
    let dim = match means.first() {
        Some(m) if !m.is_empty() => m.len(),
        Some(_) => return Err(Error::domain("mixture means must have dimension >= 1")),
        None => return Err(Error::domain("mixture needs at least one component")),
    };
    if means.iter().any(|m| m.len() != dim) {
        return Err(Error::domain("all mixture means must have the same length"));
    }
    if means.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::domain("mixture means must be finite"));
    }
    let log_weights = if log_weights.is_empty() {
        vec![0.0; means.len()]
    } else {
        log_weights
    };
    if log_weights.len() != means.len() {
        return Err(Error::domain("need one log weight per mixture component"));
    }
    if log_weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::domain("log weights must be finite"));
    }
    let lse = log_sum_exp(&log_weights);
    let log_weights: Vec<f64> = log_weights.iter().map(|w| w - lse).collect();
    let mut acc = 0.0;
    let cumulative = log_weights
        .iter()
        .map(|w| {
            acc += w.exp();
            acc
        })
        .collect();
    Ok(GaussianMixture {
        dim,
        means,
        log_weights,
        cumulative,
    })
}

/// Mode centers of the circle layout: `num_modes` points at radius `2 r`.
pub fn circle_layout(num_modes: usize, radius_scale: f64, dim: usize) -> Result<Vec<Vec<f64>>> {
    if num_modes < 2 {
        return Err(Error::domain("circle layout needs at least 2 modes"));
    }
    if !(radius_scale.is_finite() && radius_scale > 0.0) {
        return Err(Error::domain("radius scale must be positive"));
    }
    if dim < 2 {
        return Err(Error::domain("circle layout needs dimension >= 2"));
    }
    let radius = 2.0 * radius_scale;
    Ok((0..num_modes)
        .map(|j| {
            let angle = std::f64::consts::TAU * j as f64 / num_modes as f64;
            let mut m = vec![0.0; dim];
            m[0] = radius * angle.cos();
            m[1] = radius * angle.sin();
            m
        })
        .collect())
}

/// Equal-weight mixture with modes on a circle; see [`CIRCLE_LAYOUT_RULE`].
pub fn make_circle_gmm(num_modes: usize, radius_scale: f64, dim: usize) -> Result<GaussianMixture> {
    make_gmm(GaussianMixtureSpec {
        means: circle_layout(num_modes, radius_scale, dim)?,
        log_weights: Vec::new(),
    })
}

impl GaussianMixture {
    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    /// Normalized component weights.
    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    fn component_log_terms(&self, x: &[f64], terms: &mut [f64]) {
        for ((t, m), lw) in terms.iter_mut().zip(&self.means).zip(&self.log_weights) {
            let d2: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
            *t = lw - 0.5 * d2;
        }
    }
}

impl Target for GaussianMixture {
    fn dim(&self) -> usize {
        self.dim
    }

    fn neg_log_density(&self, x: &[f64]) -> f64 {
        let mut terms = vec![0.0; self.means.len()];
        self.component_log_terms(x, &mut terms);
        -log_sum_exp(&terms)
    }

    fn grad_neg_log_density(&self, x: &[f64], out: &mut [f64]) {
        let mut terms = vec![0.0; self.means.len()];
        self.component_log_terms(x, &mut terms);
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        terms.iter_mut().for_each(|t| {
            *t = (*t - max).exp();
            total += *t;
        });
        out.copy_from_slice(x);
        for (r, m) in terms.iter().zip(&self.means) {
            let r = r / total;
            out.iter_mut().zip(m).for_each(|(o, mi)| *o -= r * mi);
        }
    }

    fn metadata(&self) -> TargetMetadata {
        let w = self.weights();
        let second_moment = w
            .iter()
            .zip(&self.means)
            .map(|(wj, m)| wj * (squared_norm(m) + self.dim as f64))
            .sum();
        TargetMetadata {
            smoothness: None,
            second_moment: Some(second_moment),
        }
    }
}

impl ReferenceSampler for GaussianMixture {
    fn draw(&self, count: usize, rng: &mut dyn RngCore) -> ParticleEnsemble {
        let total = *self.cumulative.last().expect("non-empty mixture");
        let mut data = Vec::with_capacity(count * self.dim);
        for _ in 0..count {
            let u = rng.uniform() * total;
            let j = self
                .cumulative
                .iter()
                .position(|c| u < *c)
                .unwrap_or(self.means.len() - 1);
            for m in &self.means[j] {
                data.push(m + rng.normal());
            }
        }
        ParticleEnsemble::from_raw(self.dim, data, 0)
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
