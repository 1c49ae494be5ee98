//! Unnormalized targets `p* ∝ exp(-f*)` with gradients and, where available,
//! exact reference samplers.
//!
//! `f*` is only ever defined up to an additive constant.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::RngCore;

use crate::ensemble::ParticleEnsemble;

mod funnel;
mod gaussian;
mod heavy;
mod mixture;

pub use funnel::{make_neals_funnel, NealsFunnel, FUNNEL_SCALE};
pub use gaussian::{make_ill_conditioned_gaussian, DiagGaussian};
pub use heavy::{make_cauchy, make_sublinear_tail, Cauchy, SublinearTail};
pub use mixture::{
    circle_layout, make_circle_gmm, make_gmm, GaussianMixture, GaussianMixtureSpec,
    CIRCLE_LAYOUT_RULE,
};

/// Optional regularity constants attached to a target.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TargetMetadata {
    /// Gradient Lipschitz constant of `f*`.
    pub smoothness: Option<f64>,
    /// `E ||x||^2` under the target.
    pub second_moment: Option<f64>,
}

/// A differentiable negative log-density.
pub trait Target: Send + Sync {
    fn dim(&self) -> usize;

    /// `f*(x)`
    fn neg_log_density(&self, x: &[f64]) -> f64;

    /// Writes `∇f*(x)` into `out`.
    fn grad_neg_log_density(&self, x: &[f64], out: &mut [f64]);

    fn metadata(&self) -> TargetMetadata {
        TargetMetadata::default()
    }
}

/// Draws independent samples from a target's normalized density.
pub trait ReferenceSampler: Send + Sync {
    fn draw(&self, count: usize, rng: &mut dyn RngCore) -> ParticleEnsemble;

    /// Whether draws follow the target exactly.
    fn exact(&self) -> bool {
        true
    }
}

impl<T: Target + ?Sized> Target for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn neg_log_density(&self, x: &[f64]) -> f64 {
        (**self).neg_log_density(x)
    }
    fn grad_neg_log_density(&self, x: &[f64], out: &mut [f64]) {
        (**self).grad_neg_log_density(x, out)
    }
    fn metadata(&self) -> TargetMetadata {
        (**self).metadata()
    }
}

impl<T: Target + ?Sized> Target for std::sync::Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn neg_log_density(&self, x: &[f64]) -> f64 {
        (**self).neg_log_density(x)
    }
    fn grad_neg_log_density(&self, x: &[f64], out: &mut [f64]) {
        (**self).grad_neg_log_density(x, out)
    }
    fn metadata(&self) -> TargetMetadata {
        (**self).metadata()
    }
}

/// Wraps a target and counts every `f*` and `∇f*` evaluation.
#[derive(Debug)]
pub struct Instrumented<T> {
    inner: T,
    f_calls: AtomicU64,
    grad_calls: AtomicU64,
}

impl<T: Target> Instrumented<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            f_calls: AtomicU64::new(0),
            grad_calls: AtomicU64::new(0),
        }
    }

    pub fn f_calls(&self) -> u64 {
        self.f_calls.load(Ordering::Relaxed)
    }

    pub fn grad_calls(&self) -> u64 {
        self.grad_calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.f_calls.store(0, Ordering::Relaxed);
        self.grad_calls.store(0, Ordering::Relaxed);
    }
}

impl<T: Target> Target for Instrumented<T> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn neg_log_density(&self, x: &[f64]) -> f64 {
        self.f_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.neg_log_density(x)
    }

    fn grad_neg_log_density(&self, x: &[f64], out: &mut [f64]) {
        self.grad_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.grad_neg_log_density(x, out)
    }

    fn metadata(&self) -> TargetMetadata {
        self.inner.metadata()
    }
}

/// `f* + shift`: the same distribution under a different normalization.
#[derive(Clone, Debug)]
pub struct Offset<T> {
    pub inner: T,
    pub shift: f64,
}

impl<T: Target> Target for Offset<T> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn neg_log_density(&self, x: &[f64]) -> f64 {
        self.inner.neg_log_density(x) + self.shift
    }

    fn grad_neg_log_density(&self, x: &[f64], out: &mut [f64]) {
        self.inner.grad_neg_log_density(x, out)
    }

    fn metadata(&self) -> TargetMetadata {
        self.inner.metadata()
    }
}

pub(crate) fn squared_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}
