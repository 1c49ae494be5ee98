use rand::RngCore;

use super::{ReferenceSampler, Target, TargetMetadata};
use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::rng::NoiseSource;

/// Axis-aligned Gaussian `N(mean, diag(variances))`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    variances: Vec<f64>,
}

pub fn make_ill_conditioned_gaussian(mean: Vec<f64>, variances: Vec<f64>) -> Result<DiagGaussian> {
    if mean.is_empty() || mean.len() != variances.len() {
        return Err(Error::domain("mean and variances must be non-empty and the same length"));
    }
    if variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::domain("all variances must be positive"));
    }
    if mean.iter().any(|m| !m.is_finite()) {
        return Err(Error::domain("mean must be finite"));
    }
    Ok(DiagGaussian { mean, variances })
}

impl DiagGaussian {
    pub fn standard(dim: usize) -> Self {
        DiagGaussian {
            mean: vec![0.0; dim],
            variances: vec![1.0; dim],
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }
}

impl Target for DiagGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn neg_log_density(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.mean)
            .zip(&self.variances)
            .map(|((xi, m), v)| (xi - m) * (xi - m) / (2.0 * v))
            .sum()
    }

    fn grad_neg_log_density(&self, x: &[f64], out: &mut [f64]) {
        for (((o, xi), m), v) in out.iter_mut().zip(x).zip(&self.mean).zip(&self.variances) {
            *o = (xi - m) / v;
        }
    }

    fn metadata(&self) -> TargetMetadata {
        let smoothness = self.variances.iter().map(|v| 1.0 / v).fold(0.0, f64::max);
        let second_moment = self.mean.iter().zip(&self.variances).map(|(m, v)| m * m + v).sum();
        TargetMetadata {
            smoothness: Some(smoothness),
            second_moment: Some(second_moment),
        }
    }
}

impl ReferenceSampler for DiagGaussian {
    fn draw(&self, count: usize, rng: &mut dyn RngCore) -> ParticleEnsemble {
        let d = self.dim();
        let mut data = Vec::with_capacity(count * d);
        for _ in 0..count {
            for (m, v) in self.mean.iter().zip(&self.variances) {
                data.push(m + v.sqrt() * rng.normal());
            }
        }
        ParticleEnsemble::from_raw(d, data, 0)
    }
}
