//! Independent ground truth for checking the score estimators: the conjugate
//! Gaussian posterior, and 1-d scores by trapezoid quadrature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ou::transition_params;
use crate::targets::Target;

/// Isotropic Gaussian `N(mean, variance I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPosterior {
    pub mean: Vec<f64>,
    pub variance: f64,
}

/// Posterior of `x0` given `x_tau = x` under the prior `N(prior_mean, prior_var I)`.
pub fn gaussian_posterior(x: &[f64], tau: f64, prior_mean: &[f64], prior_var: f64) -> Result<GaussianPosterior> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::domain(format!("tau must be positive, got {tau}")));
    }
    if !(prior_var > 0.0 && prior_var.is_finite()) {
        return Err(Error::domain(format!("prior variance must be positive, got {prior_var}")));
    }
    if x.len() != prior_mean.len() {
        return Err(Error::domain("query and prior mean differ in dimension"));
    }
    let tp = transition_params(tau)?;
    let (alpha, s2) = (tp.mean_scale, tp.variance);
    let precision = 1.0 / prior_var + alpha * alpha / s2;
    let mean = x
        .iter()
        .zip(prior_mean)
        .map(|(xi, mi)| (mi / prior_var + alpha * xi / s2) / precision)
        .collect();
    Ok(GaussianPosterior {
        mean,
        variance: 1.0 / precision,
    })
}

/// Closed-form score of the OU marginal at time `t` when the target is `N(mean, var)` in each coordinate.
pub fn gaussian_marginal_score(x: f64, t: f64, mean: f64, var: f64) -> f64 {
    let a = (-t).exp();
    -(x - a * mean) / (a * a * var - (-2.0 * t).exp_m1())
}

/// Uniform trapezoid grid on `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    pub lo: f64,
    pub hi: f64,
    pub n_nodes: usize,
}

impl QuadratureGrid {
    pub fn new(lo: f64, hi: f64, n_nodes: usize) -> Self {
        QuadratureGrid { lo, hi, n_nodes }
    }

    pub fn refined(&self) -> Self {
        QuadratureGrid {
            n_nodes: 2 * self.n_nodes - 1,
            ..*self
        }
    }
}

/// Endpoint integrand must be below this fraction of the peak.
pub const ENDPOINT_MASS_TOL: f64 = 1e-8;

/// `∇ ln p_tau(x)` for a 1-d target, computed as `(α E[x0 | x] - x) / s²` with the
/// posterior mean given by a ratio of trapezoid integrals.
pub fn quadrature_score(target: &dyn Target, x: f64, tau: f64, grid: QuadratureGrid) -> Result<f64> {
    if target.dim() != 1 {
        return Err(Error::domain("quadrature oracle supports 1-d targets only"));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::domain(format!("tau must be positive, got {tau}")));
    }
    if !(grid.lo < grid.hi && grid.n_nodes >= 3 && grid.lo.is_finite() && grid.hi.is_finite()) {
        return Err(Error::domain("grid needs lo < hi and at least 3 nodes"));
    }
    let tp = transition_params(tau)?;
    let (alpha, s2) = (tp.mean_scale, tp.variance);
    let h = (grid.hi - grid.lo) / (grid.n_nodes - 1) as f64;
    let nodes: Vec<f64> = (0..grid.n_nodes).map(|i| grid.lo + i as f64 * h).collect();
    let log_w: Vec<f64> = nodes
        .iter()
        .map(|&x0| {
            let r = x - alpha * x0;
            -target.neg_log_density(&[x0]) - r * r / (2.0 * s2)
        })
        .collect();
    let peak = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return Err(Error::domain("posterior integrand is not finite on the grid"));
    }
    let ratio = (log_w[0] - peak).exp().max((log_w[grid.n_nodes - 1] - peak).exp());
    if ratio >= ENDPOINT_MASS_TOL {
        return Err(Error::GridTooSmall { ratio });
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (i, (&x0, &lw)) in nodes.iter().zip(&log_w).enumerate() {
        let weight = if i == 0 || i == grid.n_nodes - 1 { 0.5 } else { 1.0 };
        let w = weight * (lw - peak).exp();
        num += w * x0;
        den += w;
    }
    Ok((alpha * num / den - x) / s2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{make_gmm, DiagGaussian, GaussianMixtureSpec};

    #[test]
    fn standard_prior_is_alpha_x() {
        let p = gaussian_posterior(&[1.5, -2.0], 0.4, &[0.0, 0.0], 1.0).unwrap();
        let a = (-0.4f64).exp();
        assert!((p.mean[0] - 1.5 * a).abs() < 1e-14);
        assert!((p.mean[1] + 2.0 * a).abs() < 1e-14);
        assert!((p.variance + (-0.8f64).exp_m1()).abs() < 1e-14);
    }

    #[test]
    fn large_tau_recovers_prior() {
        let p = gaussian_posterior(&[3.0], 20.0, &[1.0], 2.5).unwrap();
        assert!((p.mean[0] - 1.0).abs() < 1e-6);
        assert!((p.variance - 2.5).abs() < 1e-6);
    }

    #[test]
    fn posterior_rejects_bad_input() {
        assert!(gaussian_posterior(&[0.0], 0.0, &[0.0], 1.0).is_err());
        assert!(gaussian_posterior(&[0.0], 1.0, &[0.0], 0.0).is_err());
    }

    #[test]
    fn standard_normal_score() {
        let g = DiagGaussian::standard(1);
        for &x in &[-2.0, 0.3, 1.7] {
            for &tau in &[0.05, 0.5, 2.0] {
                let s = quadrature_score(&g, x, tau, QuadratureGrid::new(-12.0, 12.0, 4001)).unwrap();
                assert!((s + x).abs() < 1e-6, "x={x} tau={tau} s={s}");
            }
        }
    }

    #[test]
    fn symmetric_mixture_zero_at_origin() {
        let gmm = make_gmm(GaussianMixtureSpec {
            means: vec![vec![-2.0], vec![2.0]],
            log_weights: vec![],
        })
        .unwrap();
        let s = quadrature_score(&gmm, 0.0, 0.5, QuadratureGrid::new(-12.0, 12.0, 4001)).unwrap();
        assert!(s.abs() < 1e-12);
    }

    #[test]
    fn narrow_grid_rejected() {
        let g = DiagGaussian::standard(1);
        let err = quadrature_score(&g, 0.0, 1.0, QuadratureGrid::new(-2.0, 2.0, 101)).unwrap_err();
        assert!(matches!(err, Error::GridTooSmall { .. }));
    }
}
