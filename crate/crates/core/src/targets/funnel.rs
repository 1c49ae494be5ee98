use rand::RngCore;

use super::{ReferenceSampler, Target};
use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::rng::NoiseSource;

/// Standard deviation of the funnel's first coordinate.
pub const FUNNEL_SCALE: f64 = 3.0;

/// Neal's funnel: `x1 ~ N(0, 9)`, `x_i | x1 ~ N(0, e^{x1})` for `i >= 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct NealsFunnel {
    dim: usize,
}

pub fn make_neals_funnel(dim: usize) -> Result<NealsFunnel> {
    if dim < 2 {
        return Err(Error::domain("funnel needs dimension >= 2"));
    }
    Ok(NealsFunnel { dim })
}

impl Target for NealsFunnel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn neg_log_density(&self, x: &[f64]) -> f64 {
        let x1 = x[0];
        let inv = (-x1).exp();
        let rest: f64 = x[1..].iter().map(|v| 0.5 * v * v * inv + 0.5 * x1).sum();
        x1 * x1 / (2.0 * FUNNEL_SCALE * FUNNEL_SCALE) + rest
    }

    fn grad_neg_log_density(&self, x: &[f64], out: &mut [f64]) {
        let x1 = x[0];
        let inv = (-x1).exp();
        let mut d1 = x1 / (FUNNEL_SCALE * FUNNEL_SCALE);
        for (o, v) in out[1..].iter_mut().zip(&x[1..]) {
            *o = v * inv;
            d1 += 0.5 - 0.5 * v * v * inv;
        }
        out[0] = d1;
    }
}

impl ReferenceSampler for NealsFunnel {
    fn draw(&self, count: usize, rng: &mut dyn RngCore) -> ParticleEnsemble {
        let mut data = Vec::with_capacity(count * self.dim);
        for _ in 0..count {
            let x1 = FUNNEL_SCALE * rng.normal();
            data.push(x1);
            let sd = (0.5 * x1).exp();
            for _ in 1..self.dim {
                data.push(sd * rng.normal());
            }
        }
        ParticleEnsemble::from_raw(self.dim, data, 0)
    }
}
