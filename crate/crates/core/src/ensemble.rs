use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{NoiseSource, StreamSource};

/// `n` points in `R^d`, stored row-major, plus the sampler step that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble {
    dim: usize,
    data: Vec<f64>,
    pub step_index: usize,
}

impl ParticleEnsemble {
    /// Builds an ensemble from row-major coordinates.
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("ensemble dimension must be at least 1"));
        }
        if data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::domain(format!(
                "ensemble needs a positive multiple of {dim} coordinates, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("ensemble contains a non-finite coordinate"));
        }
        Ok(Self {
            dim,
            data,
            step_index: 0,
        })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map(Vec::len).unwrap_or(0);
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::domain("all points must share one dimension"));
        }
        Self::new(dim, points.concat())
    }

    /// `n` standard normal points, particle `i` drawn from stream `(domain, i)`.
    pub fn standard_normal<S: StreamSource>(
        n: usize,
        dim: usize,
        streams: &S,
        domain: u64,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("ensemble needs at least one particle"));
        }
        let mut data = vec![0.0; n * dim];
        data.par_chunks_mut(dim.max(1))
            .enumerate()
            .for_each(|(i, p)| {
                let mut rng = streams.stream(domain, i as u64);
                p.iter_mut().for_each(|v| *v = rng.normal());
            });
        Self::new(dim, data)
    }

    pub(crate) fn from_raw(dim: usize, data: Vec<f64>, step_index: usize) -> Self {
        debug_assert!(dim > 0 && data.len().is_multiple_of(dim));
        Self {
            dim,
            data,
            step_index,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Per-coordinate mean.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for p in self.points() {
            m.iter_mut().zip(p).for_each(|(a, b)| *a += b);
        }
        let n = self.len() as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }
}
