use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_finite, BudgetLedger, Recorder, RunOptions, SamplerRun, Snapshot};
use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::rng::{domain, NoiseSource, StreamSource};
use crate::score::Cost;
use crate::targets::Target;

/// Recorded in run metadata: how the underdamped baseline is discretized.
pub const ULMC_SCHEME: &str =
    "exponential integrator: exact Gaussian solve of (x, v) over each step with the gradient frozen at its start";

/// Unadjusted (overdamped) Langevin Monte Carlo.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmcConfig {
    pub step: f64,
    pub iters: usize,
}

/// Underdamped Langevin Monte Carlo with unit mass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UlmcConfig {
    pub step: f64,
    pub friction: f64,
    pub iters: usize,
}

/// Smallest batch of particles handed to one worker.
const PAR_MIN_LEN: usize = 64;

fn positive(v: f64, what: &str) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{what} must be positive, got {v}")))
    }
}

/// Shared loop for LMC and its fine-tune continuation.
#[allow(clippy::too_many_arguments)]
fn lmc_loop<S: StreamSource>(
    target: &dyn Target,
    cfg: &LmcConfig,
    mut ensemble: ParticleEnsemble,
    streams: &S,
    stream_domain: u64,
    name: &str,
    mut ledger: BudgetLedger,
    step_offset: usize,
    opts: &RunOptions,
) -> Result<(Vec<Snapshot>, BudgetLedger, bool)> {
    positive(cfg.step, "LMC step")?;
    if ensemble.dim() != target.dim() {
        return Err(Error::domain("initial ensemble does not match the target dimension"));
    }
    let n = ensemble.len();
    let d = ensemble.dim();
    let mut rngs: Vec<S::Stream> = (0..n).map(|i| streams.stream(stream_domain, i as u64)).collect();
    let recorder = Recorder::new(cfg.iters, opts);
    let mut trace = Vec::new();
    if step_offset == 0 {
        trace.push(recorder.snapshot(0, &ledger, &ensemble));
    }
    let (h, noise) = (cfg.step, (2.0 * cfg.step).sqrt());
    let mut truncated = false;
    let mut done = 0;
    for k in 0..cfg.iters {
        if !ledger.can_afford(n as u64) {
            truncated = true;
            break;
        }
        ensemble
            .as_mut_slice()
            .par_chunks_mut(d)
            .zip(rngs.par_iter_mut())
            .with_min_len(PAR_MIN_LEN)
            .for_each_init(|| vec![0.0; d], |g, (p, rng)| {
                target.grad_neg_log_density(p, g);
                for (pi, gi) in p.iter_mut().zip(g.iter()) {
                    *pi += -h * gi + noise * rng.normal();
                }
            });
        ledger.charge(Cost {
            f_evals: 0,
            grad_evals: n as u64,
        });
        done = k + 1;
        check_finite(&ensemble, name, step_offset + done)?;
        if recorder.wants(done) {
            trace.push(recorder.snapshot(step_offset + done, &ledger, &ensemble));
        }
    }
    if done > 0 && trace.last().map(|s| s.step) != Some(step_offset + done) {
        trace.push(recorder.snapshot(step_offset + done, &ledger, &ensemble));
    }
    Ok((trace, ledger, truncated))
}

/// `x ← x - h ∇f*(x) + sqrt(2h) ξ` on every particle.
pub fn lmc<S: StreamSource>(
    target: &dyn Target,
    cfg: &LmcConfig,
    init: ParticleEnsemble,
    streams: &S,
    opts: &RunOptions,
) -> Result<SamplerRun> {
    let ledger = BudgetLedger::with_cap(opts.budget_cap);
    let (trace, ledger, truncated) = lmc_loop(target, cfg, init, streams, domain::LMC, "lmc", ledger, 0, opts)?;
    Ok(SamplerRun {
        name: "lmc".into(),
        trace,
        ledger,
        truncated,
    })
}

/// Continues a finished run with LMC, appending to its trace and ledger.
pub fn fine_tune<S: StreamSource>(
    run: SamplerRun,
    target: &dyn Target,
    cfg: &LmcConfig,
    streams: &S,
    opts: &RunOptions,
) -> Result<SamplerRun> {
    if cfg.iters == 0 {
        return Ok(run);
    }
    let mut ledger = run.ledger;
    ledger.cap = opts.budget_cap.or(ledger.cap);
    let start = run.final_ensemble().clone();
    let offset = run.final_step();
    let (extra, ledger, truncated) = lmc_loop(
        target,
        cfg,
        start,
        streams,
        domain::FINE_TUNE,
        &run.name,
        ledger,
        offset,
        opts,
    )?;
    let mut trace = run.trace;
    trace.extend(extra);
    Ok(SamplerRun {
        name: run.name,
        trace,
        ledger,
        truncated: run.truncated || truncated,
    })
}

/// Coefficients of the exact `(x, v)` transition over one step with frozen gradient.
#[derive(Clone, Copy, Debug)]
struct UlmcStep {
    decay: f64,
    v_from_g: f64,
    x_from_v: f64,
    x_from_g: f64,
    sd_x: f64,
    v_from_zx: f64,
    sd_v_rest: f64,
}

impl UlmcStep {
    fn new(h: f64, gamma: f64) -> Self {
        let decay = (-gamma * h).exp();
        let one_minus = -(-gamma * h).exp_m1();
        let one_minus_sq = -(-2.0 * gamma * h).exp_m1();
        let var_v = one_minus_sq;
        let var_x = (2.0 / gamma) * (h - 2.0 * one_minus / gamma + one_minus_sq / (2.0 * gamma));
        let var_x = var_x.max(0.0);
        let cov = one_minus * one_minus / gamma;
        let sd_x = var_x.sqrt();
        let v_from_zx = if sd_x > 0.0 { cov / sd_x } else { 0.0 };
        let sd_v_rest = (var_v - v_from_zx * v_from_zx).max(0.0).sqrt();
        UlmcStep {
            decay,
            v_from_g: -one_minus / gamma,
            x_from_v: one_minus / gamma,
            x_from_g: -(h - one_minus / gamma) / gamma,
            sd_x,
            v_from_zx,
            sd_v_rest,
        }
    }
}

/// Underdamped Langevin: `dx = v dt`, `dv = -γ v dt - ∇f*(x) dt + sqrt(2γ) dB`,
/// integrated exactly over each step with `∇f*` frozen. Velocities start at `N(0, I)`.
pub fn ulmc<S: StreamSource>(
    target: &dyn Target,
    cfg: &UlmcConfig,
    init: ParticleEnsemble,
    streams: &S,
    opts: &RunOptions,
) -> Result<SamplerRun> {
    positive(cfg.step, "ULMC step")?;
    positive(cfg.friction, "ULMC friction")?;
    if init.dim() != target.dim() {
        return Err(Error::domain("initial ensemble does not match the target dimension"));
    }
    let mut ensemble = init;
    let n = ensemble.len();
    let d = ensemble.dim();
    let mut velocity = ParticleEnsemble::standard_normal(n, d, streams, domain::ULMC_VELOCITY)?.into_raw();
    let mut rngs: Vec<S::Stream> = (0..n).map(|i| streams.stream(domain::ULMC, i as u64)).collect();
    let coef = UlmcStep::new(cfg.step, cfg.friction);
    let recorder = Recorder::new(cfg.iters, opts);
    let mut ledger = BudgetLedger::with_cap(opts.budget_cap);
    let mut trace = vec![recorder.snapshot(0, &ledger, &ensemble)];
    let mut truncated = false;
    let mut done = 0;

    for k in 0..cfg.iters {
        if !ledger.can_afford(n as u64) {
            truncated = true;
            break;
        }
        ensemble
            .as_mut_slice()
            .par_chunks_mut(d)
            .zip(velocity.par_chunks_mut(d))
            .zip(rngs.par_iter_mut())
            .with_min_len(PAR_MIN_LEN)
            .for_each_init(|| vec![0.0; d], |g, ((x, v), rng)| {
                target.grad_neg_log_density(x, g);
                for i in 0..d {
                    let zx = rng.normal();
                    let zv = rng.normal();
                    let (xi, vi) = (x[i], v[i]);
                    x[i] = xi + coef.x_from_v * vi + coef.x_from_g * g[i] + coef.sd_x * zx;
                    v[i] = coef.decay * vi + coef.v_from_g * g[i] + coef.v_from_zx * zx + coef.sd_v_rest * zv;
                }
            });
        ledger.charge(Cost {
            f_evals: 0,
            grad_evals: n as u64,
        });
        done = k + 1;
        check_finite(&ensemble, "ulmc", done)?;
        if recorder.wants(done) {
            trace.push(recorder.snapshot(done, &ledger, &ensemble));
        }
    }
    if trace.last().map(|s| s.step) != Some(done) {
        trace.push(recorder.snapshot(done, &ledger, &ensemble));
    }
    Ok(SamplerRun {
        name: "ulmc".into(),
        trace,
        ledger,
        truncated,
    })
}
