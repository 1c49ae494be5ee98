//! Monte Carlo estimates of the reverse drift `2 ∇ln p_τ(x)`.
//!
//! The score of the forward OU marginal at time `τ` is an affine function of
//! the mean of the posterior
//!
//! ```text
//! q_τ(x0 | x) ∝ exp(-f*(x0) - ||x - α x0||² / (2 s²)),   α = e^{-τ},  s² = 1 - e^{-2τ}
//! ```
//!
//! namely `∇ln p_τ(x) = E_q[(α x0 - x) / s²]`. The estimators here sample that
//! posterior by importance sampling from its Gaussian factor, by an inner
//! unadjusted Langevin chain, or by a Langevin chain started from an
//! importance-resampled cloud.

use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::rng::NoiseSource;
use crate::targets::Target;

/// Posteriors with `s²` below this return a zero drift flagged as underflow.
pub const TAU_UNDERFLOW_S2: f64 = 1e-10;

/// Number of `f*` and `∇f*` evaluations spent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cost {
    pub f_evals: u64,
    pub grad_evals: u64,
}

impl Add for Cost {
    type Output = Cost;
    fn add(self, o: Cost) -> Cost {
        Cost {
            f_evals: self.f_evals + o.f_evals,
            grad_evals: self.grad_evals + o.grad_evals,
        }
    }
}

impl AddAssign for Cost {
    fn add_assign(&mut self, o: Cost) {
        *self = *self + o;
    }
}

impl Sum for Cost {
    fn sum<I: Iterator<Item = Cost>>(iter: I) -> Cost {
        iter.fold(Cost::default(), Add::add)
    }
}

/// The posterior `q_τ(· | x)` for one query point.
#[derive(Clone, Copy)]
pub struct PosteriorContext<'a> {
    pub query: &'a [f64],
    pub remaining_time: f64,
    pub target: &'a dyn Target,
    /// `e^{-τ}`
    pub alpha: f64,
    /// `1 - e^{-2τ}`
    pub s2: f64,
}

impl std::fmt::Debug for PosteriorContext<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PosteriorContext")
            .field("query", &self.query)
            .field("remaining_time", &self.remaining_time)
            .field("alpha", &self.alpha)
            .field("s2", &self.s2)
            .finish_non_exhaustive()
    }
}

impl<'a> PosteriorContext<'a> {
    pub fn new(target: &'a dyn Target, query: &'a [f64], remaining_time: f64) -> Result<Self> {
        if !(remaining_time.is_finite() && remaining_time > 0.0) {
            return Err(Error::domain(format!(
                "remaining time must be positive, got {remaining_time}"
            )));
        }
        if query.len() != target.dim() {
            return Err(Error::domain(format!(
                "query has dimension {}, target has {}",
                query.len(),
                target.dim()
            )));
        }
        Ok(Self {
            query,
            remaining_time,
            target,
            alpha: (-remaining_time).exp(),
            s2: -(-2.0 * remaining_time).exp_m1(),
        })
    }

    pub fn dim(&self) -> usize {
        self.query.len()
    }

    fn underflows(&self) -> bool {
        self.s2 < TAU_UNDERFLOW_S2
    }

    /// Maps a posterior mean estimate to the drift `2 (α m - x) / s²`.
    fn drift_from_mean(&self, mean: &[f64]) -> Vec<f64> {
        mean.iter()
            .zip(self.query)
            .map(|(m, x)| 2.0 * (self.alpha * m - x) / self.s2)
            .collect()
    }
}

/// Unnormalized `ln q_τ(x0 | x) = -f*(x0) - ||x - α x0||² / (2 s²)`.
pub fn posterior_log_density(x0: &[f64], ctx: &PosteriorContext<'_>, cost: &mut Cost) -> f64 {
    cost.f_evals += 1;
    let quad: f64 = ctx
        .query
        .iter()
        .zip(x0)
        .map(|(x, z)| (x - ctx.alpha * z).powi(2))
        .sum();
    -ctx.target.neg_log_density(x0) - quad / (2.0 * ctx.s2)
}

/// `∇_{x0} ln q_τ(x0 | x) = -∇f*(x0) - α (α x0 - x) / s²`, written into `out`.
pub fn posterior_grad(x0: &[f64], ctx: &PosteriorContext<'_>, out: &mut [f64], cost: &mut Cost) {
    cost.grad_evals += 1;
    ctx.target.grad_neg_log_density(x0, out);
    let a = ctx.alpha;
    for ((o, z), x) in out.iter_mut().zip(x0).zip(ctx.query) {
        *o = -*o - a * (a * z - x) / ctx.s2;
    }
}

/// A drift estimate together with what it cost.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreEstimate {
    /// Approximates `2 ∇ln p_τ(x)`.
    pub drift: Vec<f64>,
    pub cost: Cost,
    /// Effective sample size of the importance weights, when any were used.
    pub ess: Option<f64>,
    /// Set when `s²` was too small to form a drift; `drift` is then zero.
    pub tau_underflow: bool,
}

impl ScoreEstimate {
    fn underflow(dim: usize) -> Self {
        ScoreEstimate {
            drift: vec![0.0; dim],
            cost: Cost::default(),
            ess: None,
            tau_underflow: true,
        }
    }
}

/// Self-normalized importance weights for draws from the Gaussian factor.
struct WeightedPool {
    points: Vec<f64>,
    weights: Vec<f64>,
    total: f64,
    ess: f64,
}

fn importance_pool<R: NoiseSource + ?Sized>(
    ctx: &PosteriorContext<'_>,
    n: usize,
    rng: &mut R,
) -> WeightedPool {
    let d = ctx.dim();
    let spread = ctx.s2.sqrt() / ctx.alpha;
    let mut points = Vec::with_capacity(n * d);
    let mut weights = Vec::with_capacity(n);
    for _ in 0..n {
        let start = points.len();
        points.extend(ctx.query.iter().map(|x| x / ctx.alpha + spread * rng.normal()));
        weights.push(-ctx.target.neg_log_density(&points[start..]));
    }
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let mut total_sq = 0.0;
    for w in weights.iter_mut() {
        *w = (*w - max).exp();
        total += *w;
        total_sq += *w * *w;
    }
    WeightedPool {
        points,
        weights,
        total,
        ess: total * total / total_sq,
    }
}

impl WeightedPool {
    fn mean(&self, d: usize) -> Vec<f64> {
        let mut m = vec![0.0; d];
        for (p, w) in self.points.chunks_exact(d).zip(&self.weights) {
            m.iter_mut().zip(p).for_each(|(a, b)| *a += w * b);
        }
        m.iter_mut().for_each(|a| *a /= self.total);
        m
    }

    /// Systematic resampling of `m` points by weight.
    fn resample<R: NoiseSource + ?Sized>(&self, d: usize, m: usize, rng: &mut R) -> Vec<f64> {
        let mut out = Vec::with_capacity(m * d);
        let offset = rng.uniform();
        let mut cumulative = self.weights[0] / self.total;
        let mut j = 0;
        let last = self.weights.len() - 1;
        for i in 0..m {
            let u = (offset + i as f64) / m as f64;
            while u >= cumulative && j < last {
                j += 1;
                cumulative += self.weights[j] / self.total;
            }
            out.extend_from_slice(&self.points[j * d..(j + 1) * d]);
        }
        out
    }
}

/// Importance-sampled drift with proposal `N(x/α, s²/α² I)` and weights `∝ exp(-f*(x0))`.
pub fn is_score<R: NoiseSource + ?Sized>(
    ctx: &PosteriorContext<'_>,
    n: usize,
    rng: &mut R,
) -> Result<ScoreEstimate> {
    if n < 1 {
        return Err(Error::domain("importance sampling needs at least one draw"));
    }
    if ctx.underflows() {
        return Ok(ScoreEstimate::underflow(ctx.dim()));
    }
    let pool = importance_pool(ctx, n, rng);
    Ok(ScoreEstimate {
        drift: ctx.drift_from_mean(&pool.mean(ctx.dim())),
        cost: Cost {
            f_evals: n as u64,
            grad_evals: 0,
        },
        ess: Some(pool.ess),
        tau_underflow: false,
    })
}

/// Runs `steps` unadjusted Langevin iterations on every particle of `init`,
/// targeting `q_τ(· | x)`: `x0 ← x0 + h ∇ln q + sqrt(2h) ξ`.
pub fn ula_inner<R: NoiseSource + ?Sized>(
    ctx: &PosteriorContext<'_>,
    init: ParticleEnsemble,
    steps: usize,
    step_size: f64,
    rng: &mut R,
) -> Result<(ParticleEnsemble, Cost)> {
    if !(step_size.is_finite() && step_size >= 0.0) {
        return Err(Error::domain(format!(
            "inner step size must be non-negative, got {step_size}"
        )));
    }
    if init.dim() != ctx.dim() {
        return Err(Error::domain("initial particles do not match the query dimension"));
    }
    let mut cost = Cost::default();
    let mut particles = init;
    let step_index = particles.step_index;
    let d = ctx.dim();
    let noise = (2.0 * step_size).sqrt();
    let mut grad = vec![0.0; d];
    let data = particles.as_mut_slice();
    for p in data.chunks_exact_mut(d) {
        for _ in 0..steps {
            posterior_grad(p, ctx, &mut grad, &mut cost);
            for (pi, gi) in p.iter_mut().zip(&grad) {
                *pi += step_size * gi + noise * rng.normal();
            }
        }
    }
    particles.step_index = step_index;
    Ok((particles, cost))
}

/// Drift `(1/m) Σ 2 (α x0_i - x) / s²` from posterior samples.
pub fn score_from_samples(ctx: &PosteriorContext<'_>, samples: &ParticleEnsemble) -> Result<ScoreEstimate> {
    if samples.is_empty() {
        return Err(Error::domain("no posterior samples"));
    }
    if samples.dim() != ctx.dim() {
        return Err(Error::domain("samples do not match the query dimension"));
    }
    Ok(ScoreEstimate {
        drift: ctx.drift_from_mean(&samples.mean()),
        cost: Cost::default(),
        ess: None,
        tau_underflow: false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Importance,
    Ula,
    IsInitUla,
}

/// How the inner Langevin chain is started after the importance stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsInit {
    /// Systematic resampling of the weighted pool.
    #[default]
    Resample,
    /// Every particle at the weighted pool mean.
    Mean,
}

fn default_sample_count() -> usize {
    16
}
fn default_inner_steps() -> usize {
    50
}
fn default_is_pool() -> usize {
    100
}

/// Which estimator to run and its budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    /// Importance draws (importance) or chain particles (ula kinds).
    #[serde(default = "default_sample_count")]
    pub sample_count: usize,
    #[serde(default = "default_inner_steps")]
    pub inner_steps: usize,
    /// Fixed inner step; `None` uses `s² / (10 (1 + L))`, or `s² / 10` without a smoothness constant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_step_size: Option<f64>,
    #[serde(default = "default_is_pool")]
    pub is_pool: usize,
    #[serde(default)]
    pub is_init: IsInit,
}

impl EstimatorConfig {
    pub fn new(kind: EstimatorKind) -> Self {
        EstimatorConfig {
            kind,
            sample_count: default_sample_count(),
            inner_steps: default_inner_steps(),
            inner_step_size: None,
            is_pool: default_is_pool(),
            is_init: IsInit::default(),
        }
    }

    pub fn importance(n: usize) -> Self {
        EstimatorConfig {
            sample_count: n,
            ..Self::new(EstimatorKind::Importance)
        }
    }

    pub fn ula(particles: usize, steps: usize) -> Self {
        EstimatorConfig {
            sample_count: particles,
            inner_steps: steps,
            ..Self::new(EstimatorKind::Ula)
        }
    }

    pub fn is_init_ula(pool: usize, particles: usize, steps: usize) -> Self {
        EstimatorConfig {
            sample_count: particles,
            inner_steps: steps,
            is_pool: pool,
            ..Self::new(EstimatorKind::IsInitUla)
        }
    }

    pub fn with_step_size(mut self, step: f64) -> Self {
        self.inner_step_size = Some(step);
        self
    }

    /// Checks the config for use in a run. `field` prefixes error paths.
    pub fn validate(&self, field: &str) -> Result<()> {
        if self.sample_count < 1 {
            return Err(Error::config(format!("{field}.sample_count"), "must be at least 1"));
        }
        if self.kind != EstimatorKind::Importance && self.inner_steps < 1 {
            return Err(Error::config(
                format!("{field}.inner_steps"),
                "Langevin estimators need at least 1 inner step",
            ));
        }
        if self.kind == EstimatorKind::IsInitUla && self.is_pool < 1 {
            return Err(Error::config(format!("{field}.is_pool"), "must be at least 1"));
        }
        if let Some(h) = self.inner_step_size {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::config(
                    format!("{field}.inner_step_size"),
                    "must be a positive number",
                ));
            }
        }
        Ok(())
    }

    /// Inner step size for a given posterior.
    pub fn step_size_for(&self, ctx: &PosteriorContext<'_>) -> f64 {
        self.inner_step_size.unwrap_or_else(|| {
            let l = ctx.target.metadata().smoothness.unwrap_or(0.0);
            ctx.s2 / (10.0 * (1.0 + l))
        })
    }

    /// Upper bound on the cost of one call to [`estimate_score`].
    pub fn cost_per_estimate(&self) -> Cost {
        let (n, k) = (self.sample_count as u64, self.inner_steps as u64);
        match self.kind {
            EstimatorKind::Importance => Cost {
                f_evals: n,
                grad_evals: 0,
            },
            EstimatorKind::Ula => Cost {
                f_evals: 0,
                grad_evals: n * k,
            },
            EstimatorKind::IsInitUla => Cost {
                f_evals: self.is_pool as u64,
                grad_evals: n * k,
            },
        }
    }
}

/// Dispatches to the configured estimator. Costs of all stages are summed.
///
/// `inner_steps = 0` is accepted here for the Langevin kinds and returns the
/// drift of the untouched initial cloud.
pub fn estimate_score<R: NoiseSource + ?Sized>(
    ctx: &PosteriorContext<'_>,
    cfg: &EstimatorConfig,
    rng: &mut R,
) -> Result<ScoreEstimate> {
    if cfg.sample_count < 1 {
        return Err(Error::domain("estimator needs at least one sample"));
    }
    if cfg.kind == EstimatorKind::Importance {
        return is_score(ctx, cfg.sample_count, rng);
    }
    if ctx.underflows() {
        return Ok(ScoreEstimate::underflow(ctx.dim()));
    }
    let d = ctx.dim();
    let m = cfg.sample_count;
    let (init, mut cost, ess) = match cfg.kind {
        EstimatorKind::Ula => {
            let spread = ctx.s2.sqrt() / ctx.alpha;
            let mut data = Vec::with_capacity(m * d);
            for _ in 0..m {
                data.extend(ctx.query.iter().map(|x| x / ctx.alpha + spread * rng.normal()));
            }
            (data, Cost::default(), None)
        }
        EstimatorKind::IsInitUla => {
            if cfg.is_pool < 1 {
                return Err(Error::domain("importance pool must be non-empty"));
            }
            let pool = importance_pool(ctx, cfg.is_pool, rng);
            let data = match cfg.is_init {
                IsInit::Resample => pool.resample(d, m, rng),
                IsInit::Mean => pool.mean(d).repeat(m),
            };
            let cost = Cost {
                f_evals: cfg.is_pool as u64,
                grad_evals: 0,
            };
            (data, cost, Some(pool.ess))
        }
        EstimatorKind::Importance => unreachable!(),
    };
    if init.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("posterior initialization is not finite"));
    }
    let init = ParticleEnsemble::from_raw(d, init, 0);
    let (samples, inner) = ula_inner(ctx, init, cfg.inner_steps, cfg.step_size_for(ctx), rng)?;
    cost += inner;
    let mut est = score_from_samples(ctx, &samples)?;
    est.cost = cost;
    est.ess = ess;
    Ok(est)
}

/// Sample count and inner-loop KL tolerance sufficient for the overall TV guarantee.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoreticalBudget {
    pub samples: u64,
    pub kl_tol: f64,
}

/// `n_k = 64 T d / (μ η³ ε² δ)` and `E_k = 2^{-13} μ² η⁸ ε⁴ δ⁴ / (T⁴ d²)`.
pub fn theoretical_budget(
    terminal_time: f64,
    dim: usize,
    lsi: f64,
    eta: f64,
    eps: f64,
    delta: f64,
) -> Result<TheoreticalBudget> {
    let positive = [terminal_time, lsi, eta, eps, delta]
        .iter()
        .all(|v| v.is_finite() && *v > 0.0);
    if !positive || dim == 0 {
        return Err(Error::domain("all budget inputs must be positive"));
    }
    let d = dim as f64;
    let n = 64.0 * terminal_time * d / (lsi * eta.powi(3) * eps * eps * delta);
    let kl_tol = 2f64.powi(-13) * lsi * lsi * eta.powi(8) * eps.powi(4) * delta.powi(4)
        / (terminal_time.powi(4) * d * d);
    Ok(TheoreticalBudget {
        samples: n.ceil() as u64,
        kl_tol,
    })
}

/// Regime for the closed-form log-Sobolev constant of `q_t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LsiRegime {
    /// Score `L`-Lipschitz; valid for `t <= ln(1 + 1/(2L)) / 2`.
    Smooth { smoothness: f64 },
    /// Sub-quadratic tails; `radius` is `R` evaluated at the base constant.
    Tail { smoothness: f64, radius: f64 },
}

pub fn lsi_constant_estimate(t: f64, regime: LsiRegime) -> Result<f64> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::domain(format!("time must be non-negative, got {t}")));
    }
    let ratio = |denominator: f64| {
        if t < crate::ou::TIME_EPS {
            f64::INFINITY
        } else {
            (-2.0 * t).exp() / (denominator * -(-2.0 * t).exp_m1())
        }
    };
    match regime {
        LsiRegime::Smooth { smoothness } => {
            if !(smoothness.is_finite() && smoothness > 0.0) {
                return Err(Error::domain("smoothness must be positive"));
            }
            let limit = 0.5 * (1.0 / (2.0 * smoothness)).ln_1p();
            if t > limit {
                return Err(Error::domain(format!(
                    "smooth-regime estimate needs t <= {limit}, got {t}"
                )));
            }
            Ok(ratio(2.0))
        }
        LsiRegime::Tail { smoothness, radius } => {
            if !(smoothness.is_finite() && smoothness >= 0.0 && radius.is_finite() && radius >= 0.0) {
                return Err(Error::domain("smoothness and radius must be non-negative"));
            }
            let base = ratio(6.0);
            Ok(base * (-48.0 * smoothness * radius * radius).exp())
        }
    }
}
