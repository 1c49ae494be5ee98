//! Sample-quality metrics: RBF-kernel MMD, raw moments and per-coordinate Gaussian diagnostics.
//!
//! MMD² is the biased V-statistic
//! `mean k(x,x') + mean k(y,y') - 2 mean k(x,y)` with `k(a,b) = exp(-|a-b|²/(2h²))`.
//! It is never negative, which keeps log-scale convergence plots readable.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};

/// Largest point set used by the median heuristic.
pub const MEDIAN_SUBSAMPLE_CAP: usize = 2000;

/// Recorded alongside MMD values so readers know which estimator produced them.
pub const MMD_ESTIMATOR: &str = "biased_v_statistic";

/// RBF bandwidth: a fixed positive value, or the median pairwise distance of the pooled inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BandwidthRepr", into = "BandwidthRepr")]
pub enum Bandwidth {
    Fixed(f64),
    MedianHeuristic,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BandwidthRepr {
    Value(f64),
    Name(String),
}

impl TryFrom<BandwidthRepr> for Bandwidth {
    type Error = String;

    fn try_from(r: BandwidthRepr) -> std::result::Result<Self, String> {
        match r {
            BandwidthRepr::Value(h) if h.is_finite() && h > 0.0 => Ok(Bandwidth::Fixed(h)),
            BandwidthRepr::Value(h) => Err(format!("bandwidth must be positive, got {h}")),
            BandwidthRepr::Name(s) if s == "median-heuristic" => Ok(Bandwidth::MedianHeuristic),
            BandwidthRepr::Name(s) => Err(format!("unknown bandwidth `{s}`; use a number or \"median-heuristic\"")),
        }
    }
}

impl From<Bandwidth> for BandwidthRepr {
    fn from(b: Bandwidth) -> Self {
        match b {
            Bandwidth::Fixed(h) => BandwidthRepr::Value(h),
            Bandwidth::MedianHeuristic => BandwidthRepr::Name("median-heuristic".into()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmdConfig {
    pub bandwidth: Bandwidth,
    /// Seed for the median-heuristic subsample; unused when the pooled set is small.
    #[serde(default)]
    pub subsample_seed: u64,
}

impl Default for MmdConfig {
    fn default() -> Self {
        MmdConfig {
            bandwidth: Bandwidth::MedianHeuristic,
            subsample_seed: 0,
        }
    }
}

impl MmdConfig {
    pub fn fixed(h: f64) -> Self {
        MmdConfig {
            bandwidth: Bandwidth::Fixed(h),
            subsample_seed: 0,
        }
    }
}

fn check_pair(x: &ParticleEnsemble, y: &ParticleEnsemble) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::domain(format!(
            "MMD inputs have dimensions {} and {}",
            x.dim(),
            y.dim()
        )));
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Median of pairwise distances over the points of `sets`, ties resolved by the lower median.
pub fn median_heuristic(sets: &[&ParticleEnsemble], seed: u64) -> Result<f64> {
    let pooled: Vec<&[f64]> = sets.iter().flat_map(|e| e.points()).collect();
    if pooled.len() < 2 {
        return Err(Error::domain("median heuristic needs at least two points"));
    }
    let chosen: Vec<&[f64]> = if pooled.len() > MEDIAN_SUBSAMPLE_CAP {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = index::sample(&mut rng, pooled.len(), MEDIAN_SUBSAMPLE_CAP).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| pooled[i]).collect()
    } else {
        pooled
    };
    let mut d2: Vec<f64> = (0..chosen.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let chosen = &chosen;
            (i + 1..chosen.len()).map(move |j| sq_dist(chosen[i], chosen[j]))
        })
        .collect();
    let mid = (d2.len() - 1) / 2;
    let (_, m, _) = d2.select_nth_unstable_by(mid, f64::total_cmp);
    let h = m.sqrt();
    if h > 0.0 {
        Ok(h)
    } else {
        Err(Error::domain("median pairwise distance is zero; use a fixed bandwidth"))
    }
}

/// Resolves the bandwidth for comparing `x` against `y`.
pub fn resolve_bandwidth(x: &ParticleEnsemble, y: &ParticleEnsemble, cfg: &MmdConfig) -> Result<f64> {
    check_pair(x, y)?;
    match cfg.bandwidth {
        Bandwidth::Fixed(h) if h.is_finite() && h > 0.0 => Ok(h),
        Bandwidth::Fixed(h) => Err(Error::domain(format!("bandwidth must be positive, got {h}"))),
        Bandwidth::MedianHeuristic => median_heuristic(&[x, y], cfg.subsample_seed),
    }
}

/// `mean_{a in a_set, b in b_set} k(a, b)`, summed row by row so the result is thread-count independent.
fn kernel_mean(a: &ParticleEnsemble, b: &ParticleEnsemble, h: f64) -> f64 {
    let scale = -0.5 / (h * h);
    let rows: Vec<f64> = a
        .as_slice()
        .par_chunks(a.dim())
        .map(|p| b.points().map(|q| (scale * sq_dist(p, q)).exp()).sum::<f64>())
        .collect();
    rows.iter().sum::<f64>() / (a.len() as f64 * b.len() as f64)
}

/// Biased MMD² between two samples.
pub fn mmd_squared(x: &ParticleEnsemble, y: &ParticleEnsemble, cfg: &MmdConfig) -> Result<f64> {
    let h = resolve_bandwidth(x, y, cfg)?;
    Ok(mmd_squared_with_bandwidth(x, y, h))
}

/// Biased MMD² at a resolved bandwidth `h > 0`. Inputs must share a dimension.
pub fn mmd_squared_with_bandwidth(x: &ParticleEnsemble, y: &ParticleEnsemble, h: f64) -> f64 {
    let v = kernel_mean(x, x, h) + kernel_mean(y, y, h) - 2.0 * kernel_mean(x, y, h);
    v.max(0.0)
}

/// A fixed reference sample with its bandwidth and self-similarity term cached,
/// for comparing many snapshots against the same target sample.
#[derive(Clone, Debug)]
pub struct MmdReference {
    sample: ParticleEnsemble,
    bandwidth: f64,
    self_term: f64,
}

impl MmdReference {
    /// Resolves a median-heuristic bandwidth on the reference sample alone.
    pub fn new(sample: ParticleEnsemble, cfg: &MmdConfig) -> Result<Self> {
        let bandwidth = match cfg.bandwidth {
            Bandwidth::Fixed(h) => h,
            Bandwidth::MedianHeuristic => median_heuristic(&[&sample], cfg.subsample_seed)?,
        };
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::domain(format!("bandwidth must be positive, got {bandwidth}")));
        }
        let self_term = kernel_mean(&sample, &sample, bandwidth);
        Ok(MmdReference {
            sample,
            bandwidth,
            self_term,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn sample(&self) -> &ParticleEnsemble {
        &self.sample
    }

    pub fn mmd_squared(&self, x: &ParticleEnsemble) -> Result<f64> {
        check_pair(x, &self.sample)?;
        let h = self.bandwidth;
        let v = kernel_mean(x, x, h) + self.self_term - 2.0 * kernel_mean(x, &self.sample, h);
        Ok(v.max(0.0))
    }
}

/// `sum_dims mean_i x_{i,dim}^p` for `p` in 1..=3.
pub fn moment_sum(x: &ParticleEnsemble, order: u32) -> Result<f64> {
    if !(1..=3).contains(&order) {
        return Err(Error::domain(format!("moment order must be 1, 2 or 3, got {order}")));
    }
    let n = x.len() as f64;
    let total: f64 = x.as_slice().iter().map(|v| v.powi(order as i32)).sum();
    Ok(total / n)
}

/// Sample mean and unbiased per-coordinate variance.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianDiagnostics {
    pub mean: Vec<f64>,
    pub cov_diag: Vec<f64>,
}

pub fn gaussian_diagnostics(x: &ParticleEnsemble) -> Result<GaussianDiagnostics> {
    if x.len() < 2 {
        return Err(Error::domain("diagnostics need at least two points"));
    }
    let mean = x.mean();
    let mut cov_diag = vec![0.0; x.dim()];
    for p in x.points() {
        for ((c, v), m) in cov_diag.iter_mut().zip(p).zip(&mean) {
            *c += (v - m) * (v - m);
        }
    }
    let denom = (x.len() - 1) as f64;
    cov_diag.iter_mut().for_each(|c| *c /= denom);
    Ok(GaussianDiagnostics { mean, cov_diag })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ens(points: &[Vec<f64>]) -> ParticleEnsemble {
        ParticleEnsemble::from_points(points).unwrap()
    }

    #[test]
    fn two_point_closed_form() {
        let x = ens(&[vec![0.0, 0.0]]);
        let y = ens(&[vec![1.0, 2.0]]);
        let h: f64 = 1.5;
        let expected = 2.0 - 2.0 * (-5.0 / (2.0 * h * h)).exp();
        assert_eq!(mmd_squared(&x, &y, &MmdConfig::fixed(h)).unwrap(), expected);
    }

    #[test]
    fn identical_inputs_vanish() {
        let x = ens(&[vec![0.3, 1.0], vec![-2.0, 0.5], vec![4.0, 4.0]]);
        let v = mmd_squared(&x, &x, &MmdConfig::default()).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn median_is_lower_median() {
        // pairwise distances 1, 2, 3 -> median 2; with a fourth point, 6 pairs -> third smallest
        let x = ens(&[vec![0.0], vec![1.0], vec![3.0]]);
        assert_eq!(median_heuristic(&[&x], 0).unwrap(), 2.0);
        let x4 = ens(&[vec![0.0], vec![1.0], vec![3.0], vec![7.0]]);
        // distances: 1,3,7,2,6,4 -> sorted 1,2,3,4,6,7 -> lower median 3
        assert_eq!(median_heuristic(&[&x4], 0).unwrap(), 3.0);
    }

    #[test]
    fn reference_matches_direct() {
        let x = ens(&[vec![0.1, 0.2], vec![1.0, -1.0], vec![0.5, 0.5]]);
        let y = ens(&[vec![0.0, 0.0], vec![2.0, 1.0]]);
        let r = MmdReference::new(y.clone(), &MmdConfig::fixed(0.7)).unwrap();
        let direct = mmd_squared(&x, &y, &MmdConfig::fixed(0.7)).unwrap();
        assert!((r.mmd_squared(&x).unwrap() - direct).abs() < 1e-14);
    }

    #[test]
    fn errors() {
        let x = ens(&[vec![0.0]]);
        let y = ens(&[vec![0.0, 1.0]]);
        assert!(mmd_squared(&x, &y, &MmdConfig::fixed(1.0)).is_err());
        assert!(moment_sum(&x, 4).is_err());
        assert!(gaussian_diagnostics(&x).is_err());
    }

    #[test]
    fn moments_and_diagnostics() {
        assert_eq!(moment_sum(&ens(&[vec![1.0, 2.0]]), 2).unwrap(), 5.0);
        assert_eq!(moment_sum(&ens(&[vec![0.0, 0.0], vec![0.0, 0.0]]), 3).unwrap(), 0.0);
        let d = gaussian_diagnostics(&ens(&[vec![0.0, 0.0], vec![2.0, 0.0]])).unwrap();
        assert_eq!(d.mean, vec![1.0, 0.0]);
        assert_eq!(d.cov_diag, vec![2.0, 0.0]);
    }

    #[test]
    fn bandwidth_serde() {
        #[derive(Deserialize)]
        struct W {
            m: MmdConfig,
        }
        let w: W = toml::from_str("m = { bandwidth = \"median-heuristic\" }").unwrap();
        assert_eq!(w.m.bandwidth, Bandwidth::MedianHeuristic);
        let w: W = toml::from_str("m = { bandwidth = 0.5 }").unwrap();
        assert_eq!(w.m.bandwidth, Bandwidth::Fixed(0.5));
        assert!(toml::from_str::<W>("m = { bandwidth = -1.0 }").is_err());
        assert!(toml::from_str::<W>("m = { bandwidth = \"mean\" }").is_err());
    }
}
