use rand::RngCore;

use super::{squared_norm, ReferenceSampler, Target, TargetMetadata};
use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::rng::NoiseSource;

/// `f*(x) = (||x||² + 1)^a` with `0 < a < 1/2`: tails lighter than any
/// polynomial but heavier than exponential. No exact sampler.
#[derive(Clone, Debug, PartialEq)]
pub struct SublinearTail {
    exponent: f64,
    dim: usize,
}

pub fn make_sublinear_tail(a: f64, dim: usize) -> Result<SublinearTail> {
    if !(a > 0.0 && a < 0.5) {
        return Err(Error::domain(format!("tail exponent must lie in (0, 0.5), got {a}")));
    }
    if dim == 0 {
        return Err(Error::domain("dimension must be at least 1"));
    }
    Ok(SublinearTail { exponent: a, dim })
}

impl SublinearTail {
    pub fn exponent(&self) -> f64 {
        self.exponent
    }
}

impl Target for SublinearTail {
    fn dim(&self) -> usize {
        self.dim
    }

    fn neg_log_density(&self, x: &[f64]) -> f64 {
        (squared_norm(x) + 1.0).powf(self.exponent)
    }

    fn grad_neg_log_density(&self, x: &[f64], out: &mut [f64]) {
        let a = self.exponent;
        let scale = 2.0 * a * (squared_norm(x) + 1.0).powf(a - 1.0);
        out.iter_mut().zip(x).for_each(|(o, xi)| *o = scale * xi);
    }

    fn metadata(&self) -> TargetMetadata {
        // Hessian norm peaks at the origin: 2a.
        TargetMetadata {
            smoothness: Some(2.0 * self.exponent),
            second_moment: None,
        }
    }
}

/// Product of independent standard Cauchy coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Cauchy {
    dim: usize,
}

pub fn make_cauchy(dim: usize) -> Result<Cauchy> {
    if dim == 0 {
        return Err(Error::domain("dimension must be at least 1"));
    }
    Ok(Cauchy { dim })
}

impl Target for Cauchy {
    fn dim(&self) -> usize {
        self.dim
    }

    fn neg_log_density(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| (v * v).ln_1p()).sum()
    }

    fn grad_neg_log_density(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut()
            .zip(x)
            .for_each(|(o, v)| *o = 2.0 * v / (1.0 + v * v));
    }

    fn metadata(&self) -> TargetMetadata {
        TargetMetadata {
            smoothness: Some(2.0),
            second_moment: None,
        }
    }
}

impl ReferenceSampler for Cauchy {
    fn draw(&self, count: usize, rng: &mut dyn RngCore) -> ParticleEnsemble {
        let data = (0..count * self.dim)
            .map(|_| (std::f64::consts::PI * (rng.uniform() - 0.5)).tan())
            .collect();
        ParticleEnsemble::from_raw(self.dim, data, 0)
    }
}
