//! Particle samplers: reverse diffusion Monte Carlo and the Langevin baselines.
//!
//! Every sampler evolves a [`ParticleEnsemble`] in place, charges its
//! gradient and density evaluations to a [`BudgetLedger`], and records
//! snapshots into a [`SamplerRun`]. Particles are updated in parallel, each
//! with its own noise stream, so a run is a pure function of its inputs and seed.

use std::time::{Duration, Instant};

use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::score::Cost;

mod langevin;
mod rdmc;

pub use langevin::{fine_tune, lmc, ulmc, LmcConfig, UlmcConfig, ULMC_SCHEME};
pub use rdmc::{init_hat_p, rdmc, HatPConfig, RdmcInit};

/// Running totals of target evaluations, with an optional cap on gradient evaluations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BudgetLedger {
    pub grad_evals: u64,
    pub f_evals: u64,
    pub cap: Option<u64>,
}

impl BudgetLedger {
    pub fn with_cap(cap: Option<u64>) -> Self {
        BudgetLedger {
            cap,
            ..Default::default()
        }
    }

    /// Whether `grad_evals` more gradient evaluations fit under the cap.
    pub fn can_afford(&self, grad_evals: u64) -> bool {
        self.cap.is_none_or(|c| self.grad_evals + grad_evals <= c)
    }

    pub fn charge(&mut self, cost: Cost) {
        self.grad_evals += cost.grad_evals;
        self.f_evals += cost.f_evals;
    }
}

/// Ensemble state after `step` sampler iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub grad_evals: u64,
    pub f_evals: u64,
    pub ensemble: ParticleEnsemble,
    pub elapsed: Duration,
}

/// The recorded output of one sampler.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplerRun {
    pub name: String,
    /// Ordered by step; never empty. The last entry is the final state.
    pub trace: Vec<Snapshot>,
    pub ledger: BudgetLedger,
    /// Set when the budget cap stopped the run early.
    pub truncated: bool,
}

impl SamplerRun {
    pub fn final_ensemble(&self) -> &ParticleEnsemble {
        &self.trace.last().expect("trace is never empty").ensemble
    }

    pub fn final_step(&self) -> usize {
        self.trace.last().expect("trace is never empty").step
    }

    /// Adds cost spent before this run (e.g. an initialization phase) to the
    /// ledger and every snapshot.
    pub fn prepend_cost(&mut self, prior: Cost) {
        self.ledger.charge(prior);
        for s in &mut self.trace {
            s.grad_evals += prior.grad_evals;
            s.f_evals += prior.f_evals;
        }
    }
}

/// Budget and recording options shared by all samplers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Maximum total gradient evaluations.
    pub budget_cap: Option<u64>,
    /// Record every `stride` steps. `None` records every step for runs of at
    /// most 200 steps and 21 evenly spaced snapshots otherwise.
    pub snapshot_stride: Option<usize>,
}

/// Decides which steps of an `total`-step run are recorded.
#[derive(Clone, Debug)]
pub(crate) struct Recorder {
    total: usize,
    stride: Option<usize>,
    started: Instant,
}

impl Recorder {
    pub(crate) fn new(total: usize, opts: &RunOptions) -> Self {
        let stride = match opts.snapshot_stride {
            Some(s) => Some(s.max(1)),
            None if total <= 200 => Some(1),
            None => None,
        };
        Recorder {
            total,
            stride,
            started: Instant::now(),
        }
    }

    pub(crate) fn wants(&self, step: usize) -> bool {
        if step == 0 || step == self.total {
            return true;
        }
        match self.stride {
            Some(s) => step.is_multiple_of(s),
            None => (0..=20).any(|i| i * self.total / 20 == step),
        }
    }

    pub(crate) fn snapshot(&self, step: usize, ledger: &BudgetLedger, ensemble: &ParticleEnsemble) -> Snapshot {
        let mut ensemble = ensemble.clone();
        ensemble.step_index = step;
        Snapshot {
            step,
            grad_evals: ledger.grad_evals,
            f_evals: ledger.f_evals,
            ensemble,
            elapsed: self.started.elapsed(),
        }
    }
}

pub(crate) fn check_finite(ensemble: &ParticleEnsemble, sampler: &str, step: usize) -> Result<()> {
    if ensemble.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            sampler: sampler.to_string(),
            step,
        })
    }
}

/// Fraction of particles whose nearest mode (Euclidean, ties to the lower index) is each mode.
pub fn mode_weights(ensemble: &ParticleEnsemble, modes: &[Vec<f64>]) -> Result<Vec<f64>> {
    if modes.is_empty() {
        return Err(Error::domain("need at least one mode"));
    }
    if modes.iter().any(|m| m.len() != ensemble.dim()) {
        return Err(Error::domain("mode dimension does not match the ensemble"));
    }
    let mut counts = vec![0usize; modes.len()];
    for p in ensemble.points() {
        let mut best = (0, f64::INFINITY);
        for (j, m) in modes.iter().enumerate() {
            let d2: f64 = p.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < best.1 {
                best = (j, d2);
            }
        }
        counts[best.0] += 1;
    }
    let n = ensemble.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}
