use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_finite, BudgetLedger, Recorder, RunOptions, SamplerRun};
use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::ou::{reverse_update_in_place, Schedule};
use crate::rng::{domain, NoiseSource, StreamSource};
use crate::score::{estimate_score, Cost, EstimatorConfig, PosteriorContext};
use crate::targets::Target;

/// Starting ensemble for the reverse process.
#[derive(Clone, Debug, PartialEq)]
pub enum RdmcInit {
    /// `particles` draws from `N(0, I)`, the stationary law of the forward process.
    StandardNormal { particles: usize },
    /// A caller-provided approximation of `p_T`.
    Ensemble(ParticleEnsemble),
}

impl RdmcInit {
    fn materialize<S: StreamSource>(self, dim: usize, streams: &S) -> Result<ParticleEnsemble> {
        let ensemble = match self {
            RdmcInit::StandardNormal { particles } => {
                ParticleEnsemble::standard_normal(particles, dim, streams, domain::INIT)?
            }
            RdmcInit::Ensemble(e) => e,
        };
        if ensemble.dim() != dim {
            return Err(Error::domain(format!(
                "initial ensemble has dimension {}, target has {dim}",
                ensemble.dim()
            )));
        }
        Ok(ensemble)
    }
}

/// Per-particle drift estimation followed by `update`, in parallel.
fn estimate_and_update<S, F>(
    target: &dyn Target,
    tau: f64,
    est: &EstimatorConfig,
    ensemble: &mut ParticleEnsemble,
    rngs: &mut [S],
    update: F,
) -> Result<Cost>
where
    S: NoiseSource + Send,
    F: Fn(&mut [f64], &[f64], &mut S) -> Result<()> + Sync,
{
    let d = ensemble.dim();
    ensemble
        .as_mut_slice()
        .par_chunks_mut(d)
        .zip(rngs.par_iter_mut())
        .map(|(p, rng)| {
            let query = p.to_vec();
            let ctx = PosteriorContext::new(target, &query, tau)?;
            let score = estimate_score(&ctx, est, rng)?;
            update(p, &score.drift, rng)?;
            Ok(score.cost)
        })
        .collect::<Result<Vec<Cost>>>()
        .map(|costs| costs.into_iter().sum())
}

/// Reverse diffusion Monte Carlo.
///
/// Starting from `init`, for `k = 0..N` estimates the drift `v_k ≈ 2∇ln p_{T-kη}`
/// at every particle and applies the exact OU-segment update with substep `η`.
pub fn rdmc<S: StreamSource>(
    target: &dyn Target,
    schedule: &Schedule,
    est: &EstimatorConfig,
    init: RdmcInit,
    streams: &S,
    opts: &RunOptions,
) -> Result<SamplerRun> {
    let mut ensemble = init.materialize(target.dim(), streams)?;
    let n = ensemble.len();
    let total = schedule.num_steps();
    let step_cost = est.cost_per_estimate().grad_evals * n as u64;
    let mut rngs: Vec<S::Stream> = (0..n).map(|i| streams.stream(domain::RDMC, i as u64)).collect();
    let recorder = Recorder::new(total, opts);
    let mut ledger = BudgetLedger::with_cap(opts.budget_cap);
    let mut trace = vec![recorder.snapshot(0, &ledger, &ensemble)];
    let mut truncated = false;
    let eta = schedule.outer_step();
    let mut done = 0;

    for k in 0..total {
        if !ledger.can_afford(step_cost) {
            truncated = true;
            break;
        }
        let tau = schedule.remaining_time(k);
        let cost = estimate_and_update(target, tau, est, &mut ensemble, &mut rngs, |p, v, rng| {
            reverse_update_in_place(p, v, eta, rng)
        })
        .map_err(|e| match e {
            Error::Domain(_) => Error::Diverged {
                sampler: "rdmc".into(),
                step: k + 1,
            },
            other => other,
        })?;
        ledger.charge(cost);
        check_finite(&ensemble, "rdmc", k + 1)?;
        done = k + 1;
        if recorder.wants(done) {
            trace.push(recorder.snapshot(done, &ledger, &ensemble));
        }
    }
    if trace.last().map(|s| s.step) != Some(done) {
        trace.push(recorder.snapshot(done, &ledger, &ensemble));
    }
    Ok(SamplerRun {
        name: "rdmc".into(),
        trace,
        ledger,
        truncated,
    })
}

/// Langevin warm-up toward `p_T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HatPConfig {
    pub iters: usize,
    pub step: f64,
}

/// Moves an ensemble toward `p_T` with Langevin steps
/// `x ← x + η0 ∇ln p_T(x) + sqrt(2 η0) ξ`, the score estimated by Monte Carlo
/// at fixed remaining time `T` (half the estimated drift).
pub fn init_hat_p<S: StreamSource>(
    target: &dyn Target,
    terminal_time: f64,
    cfg: &HatPConfig,
    est: &EstimatorConfig,
    init: RdmcInit,
    streams: &S,
    opts: &RunOptions,
) -> Result<SamplerRun> {
    if !(terminal_time.is_finite() && terminal_time > 0.0) {
        return Err(Error::domain("terminal time must be positive"));
    }
    if !(cfg.step.is_finite() && cfg.step > 0.0) {
        return Err(Error::domain("warm-up step must be positive"));
    }
    let mut ensemble = init.materialize(target.dim(), streams)?;
    let n = ensemble.len();
    let step_cost = est.cost_per_estimate().grad_evals * n as u64;
    let mut rngs: Vec<S::Stream> = (0..n).map(|i| streams.stream(domain::HAT_P, i as u64)).collect();
    let recorder = Recorder::new(cfg.iters, opts);
    let mut ledger = BudgetLedger::with_cap(opts.budget_cap);
    let mut trace = vec![recorder.snapshot(0, &ledger, &ensemble)];
    let mut truncated = false;
    let (h, noise) = (cfg.step, (2.0 * cfg.step).sqrt());
    let mut done = 0;

    for k in 0..cfg.iters {
        if !ledger.can_afford(step_cost) {
            truncated = true;
            break;
        }
        let cost = estimate_and_update(target, terminal_time, est, &mut ensemble, &mut rngs, |p, v, rng| {
            for (pi, vi) in p.iter_mut().zip(v) {
                *pi += 0.5 * h * vi + noise * rng.normal();
            }
            Ok(())
        })?;
        ledger.charge(cost);
        check_finite(&ensemble, "hat_p", k + 1)?;
        done = k + 1;
        if recorder.wants(done) {
            trace.push(recorder.snapshot(done, &ledger, &ensemble));
        }
    }
    if trace.last().map(|s| s.step) != Some(done) {
        trace.push(recorder.snapshot(done, &ledger, &ensemble));
    }
    Ok(SamplerRun {
        name: "hat_p".into(),
        trace,
        ledger,
        truncated,
    })
}
