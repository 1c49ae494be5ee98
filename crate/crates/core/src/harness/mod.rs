//! Config-driven experiment runner.
//!
//! [`run_experiment`] builds the target, runs every configured sampler under a
//! shared gradient budget, evaluates the requested metrics on each recorded
//! snapshot and writes `trace.csv`, `config_resolved.toml` and optionally
//! `mmd.svg`. [`score_check`] tabulates estimator error against an oracle score.

mod config;
mod plot;

use std::path::Path;

use rand::RngCore;

pub use config::{BuiltTarget, Conventions, ExperimentConfig, MetricsConfig, SamplerSpec, ScoreCheckConfig, TargetSpec};

use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::metrics::{moment_sum, MmdReference};
use crate::oracles::{gaussian_marginal_score, quadrature_score, QuadratureGrid};
use crate::rng::{domain, mix, Seeded, StreamSource};
use crate::samplers::{
    fine_tune, init_hat_p, lmc, mode_weights, rdmc, ulmc, LmcConfig, RdmcInit, RunOptions, SamplerRun, UlmcConfig,
};
use crate::score::{estimate_score, EstimatorConfig, EstimatorKind, PosteriorContext};

pub const CSV_HEADER: &str = "sampler,step,grad_evals,f_evals,mmd2,moment1,moment2,moment3,mode_dev,wall_ms";

/// One line of `trace.csv`. `None` fields are written empty.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub sampler: String,
    pub step: usize,
    pub grad_evals: u64,
    pub f_evals: u64,
    pub mmd2: Option<f64>,
    pub moments: [Option<f64>; 3],
    /// Largest absolute difference between observed and expected mode weights.
    pub mode_dev: Option<f64>,
    pub wall_ms: Option<f64>,
}

/// Everything produced by one experiment.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub rows: Vec<TraceRow>,
    pub runs: Vec<SamplerRun>,
    /// Resolved MMD bandwidth, when MMD was computed.
    pub mmd_bandwidth: Option<f64>,
    pub resolved: ExperimentConfig,
}

impl RunRecord {
    pub fn rows_for<'a>(&'a self, sampler: &'a str) -> impl Iterator<Item = &'a TraceRow> + 'a {
        self.rows.iter().filter(move |r| r.sampler == sampler)
    }

    pub fn run(&self, sampler: &str) -> Option<&SamplerRun> {
        self.runs.iter().find(|r| r.name == sampler)
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER.split(',')).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.sampler.clone(),
                r.step.to_string(),
                r.grad_evals.to_string(),
                r.f_evals.to_string(),
                opt(r.mmd2),
                opt(r.moments[0]),
                opt(r.moments[1]),
                opt(r.moments[2]),
                opt(r.mode_dev),
                opt(r.wall_ms),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV is UTF-8")
    }
}

/// Writes `contents` to a temporary sibling, then renames it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("output");
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    std::fs::write(&tmp, contents).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        io(e)
    })
}

struct Evaluator<'a> {
    cfg: &'a MetricsConfig,
    reference: Option<MmdReference>,
    mode_targets: Option<Vec<f64>>,
    record_wall_ms: bool,
}

impl Evaluator<'_> {
    fn rows(&self, run: &SamplerRun) -> Result<Vec<TraceRow>> {
        run.trace
            .iter()
            .map(|snap| {
                let e = &snap.ensemble;
                let mmd2 = self.reference.as_ref().map(|r| r.mmd_squared(e)).transpose()?;
                let mut moments = [None; 3];
                for &p in &self.cfg.moments {
                    moments[p as usize - 1] = Some(moment_sum(e, p)?);
                }
                let mode_dev = match (&self.cfg.mode_weights, &self.mode_targets) {
                    (Some(modes), Some(expected)) => {
                        let w = mode_weights(e, modes)?;
                        Some(w.iter().zip(expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                    }
                    _ => None,
                };
                Ok(TraceRow {
                    sampler: run.name.clone(),
                    step: snap.step,
                    grad_evals: snap.grad_evals,
                    f_evals: snap.f_evals,
                    mmd2,
                    moments,
                    mode_dev,
                    wall_ms: self.record_wall_ms.then_some(snap.elapsed.as_secs_f64() * 1e3),
                })
            })
            .collect()
    }
}

fn run_sampler(
    spec: &SamplerSpec,
    cfg: &ExperimentConfig,
    built: &BuiltTarget,
    streams: &Seeded,
    opts: &RunOptions,
) -> Result<SamplerRun> {
    let target = built.target.as_ref();
    let init = || ParticleEnsemble::standard_normal(cfg.particles, target.dim(), streams, domain::INIT);
    let mut run = match spec {
        SamplerSpec::Rdmc { hat_p, fine_tune: tune, .. } => {
            let schedule = cfg.schedule.as_ref().ok_or_else(|| Error::config("schedule", "required by rdmc"))?;
            let (start, warmup_cost) = match hat_p {
                Some(h) if h.iters > 0 => {
                    let warm = init_hat_p(
                        target,
                        schedule.terminal_time(),
                        h,
                        &cfg.estimator,
                        RdmcInit::StandardNormal {
                            particles: cfg.particles,
                        },
                        streams,
                        opts,
                    )?;
                    let spent = crate::score::Cost {
                        grad_evals: warm.ledger.grad_evals,
                        f_evals: warm.ledger.f_evals,
                    };
                    (RdmcInit::Ensemble(warm.final_ensemble().clone()), Some(spent))
                }
                _ => (
                    RdmcInit::StandardNormal {
                        particles: cfg.particles,
                    },
                    None,
                ),
            };
            let remaining = RunOptions {
                budget_cap: match (opts.budget_cap, warmup_cost) {
                    (Some(cap), Some(c)) => Some(cap.saturating_sub(c.grad_evals)),
                    (cap, _) => cap,
                },
                ..*opts
            };
            let mut run = rdmc(target, schedule, &cfg.estimator, start, streams, &remaining)?;
            if let Some(c) = warmup_cost {
                run.prepend_cost(c);
            }
            match tune {
                Some(t) => fine_tune(run, target, t, streams, opts)?,
                None => run,
            }
        }
        SamplerSpec::Lmc { step, iters, .. } => lmc(
            target,
            &LmcConfig {
                step: *step,
                iters: *iters,
            },
            init()?,
            streams,
            opts,
        )?,
        SamplerSpec::Ulmc {
            step, friction, iters, ..
        } => ulmc(
            target,
            &UlmcConfig {
                step: *step,
                friction: *friction,
                iters: *iters,
            },
            init()?,
            streams,
            opts,
        )?,
    };
    run.name = spec.name().to_string();
    Ok(run)
}

/// Runs the experiment and returns its record without touching the filesystem.
pub fn run_in_memory(cfg: &ExperimentConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let built = cfg.target.build()?;
    let streams = Seeded(cfg.seed);
    let opts = RunOptions {
        budget_cap: cfg.budget_cap,
        snapshot_stride: cfg.snapshots_stride.filter(|s| *s > 0),
    };

    let reference = if cfg.metrics.mmd_vs_reference {
        let sampler = built.reference.as_ref().ok_or(Error::NoReference)?;
        let mut rng = streams.rng(domain::REFERENCE);
        let sample = sampler.draw(10 * cfg.particles, &mut rng as &mut dyn RngCore);
        let mut mmd = cfg.metrics.mmd;
        mmd.subsample_seed = mix(cfg.seed, domain::MMD_SUBSAMPLE ^ mmd.subsample_seed);
        Some(MmdReference::new(sample, &mmd)?)
    } else {
        None
    };
    let mode_targets = cfg.metrics.mode_weights.as_ref().map(|modes| {
        cfg.metrics
            .mode_targets
            .clone()
            .unwrap_or_else(|| vec![1.0 / modes.len() as f64; modes.len()])
    });
    let eval = Evaluator {
        cfg: &cfg.metrics,
        reference,
        mode_targets,
        record_wall_ms: cfg.record_wall_ms,
    };

    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for spec in &cfg.samplers {
        let run = run_sampler(spec, cfg, &built, &streams, &opts)?;
        rows.extend(eval.rows(&run)?);
        runs.push(run);
    }
    let mmd_bandwidth = eval.reference.as_ref().map(MmdReference::bandwidth);
    Ok(RunRecord {
        rows,
        runs,
        mmd_bandwidth,
        resolved: cfg.resolved(mmd_bandwidth),
    })
}

/// Runs the experiment and writes its outputs into `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let record = run_in_memory(cfg)?;
    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.clone(),
        source,
    })?;
    write_atomic(&dir.join("trace.csv"), record.to_csv().as_bytes())?;
    write_atomic(
        &dir.join("config_resolved.toml"),
        record.resolved.to_toml_string().as_bytes(),
    )?;
    if cfg.metrics.mmd_vs_reference && cfg.metrics.plot {
        write_atomic(&dir.join("mmd.svg"), plot::mmd_svg(&record.rows).as_bytes())?;
    }
    Ok(record)
}

/// One line of the score-check table.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreCheckRow {
    pub estimator: String,
    pub budget: usize,
    pub grad_evals: u64,
    pub f_evals: u64,
    pub ess: Option<f64>,
    /// Largest coordinate error of the estimated score against the oracle.
    pub score_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreCheckTable {
    pub oracle: &'static str,
    pub oracle_score: Vec<f64>,
    pub rows: Vec<ScoreCheckRow>,
}

impl ScoreCheckTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["estimator", "budget", "grad_evals", "f_evals", "ess", "score_err"])
            .expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.estimator.clone(),
                r.budget.to_string(),
                r.grad_evals.to_string(),
                r.f_evals.to_string(),
                r.ess.map(|e| e.to_string()).unwrap_or_default(),
                r.score_err.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV is UTF-8")
    }
}

fn kind_name(kind: EstimatorKind) -> &'static str {
    match kind {
        EstimatorKind::Importance => "importance",
        EstimatorKind::Ula => "ula",
        EstimatorKind::IsInitUla => "is_init_ula",
    }
}

const DEFAULT_GRID_HALF_WIDTH: f64 = 30.0;
const DEFAULT_GRID_NODES: usize = 12001;

/// Estimator error against an oracle score at one `(x, tau)`, for each estimator and budget.
///
/// Gaussian targets use the closed-form score; other 1-d targets use quadrature.
pub fn score_check(cfg: &ExperimentConfig) -> Result<ScoreCheckTable> {
    let sc = cfg
        .score_check
        .as_ref()
        .ok_or_else(|| Error::config("score_check", "missing [score_check] section"))?;
    cfg.validate_score_check()?;
    let built = cfg.target.build()?;
    let dim = cfg.target.dim();
    let (oracle, oracle_score) = if let Some((mean, var)) = &built.gaussian {
        let s = sc
            .x
            .iter()
            .zip(mean.iter().zip(var))
            .map(|(x, (m, v))| gaussian_marginal_score(*x, sc.tau, *m, *v))
            .collect();
        ("closed_form", s)
    } else if dim == 1 {
        let grid = sc.grid.unwrap_or(QuadratureGrid::new(
            sc.x[0] - DEFAULT_GRID_HALF_WIDTH,
            sc.x[0] + DEFAULT_GRID_HALF_WIDTH,
            DEFAULT_GRID_NODES,
        ));
        let s = quadrature_score(built.target.as_ref(), sc.x[0], sc.tau, grid).map_err(|e| match e {
            Error::GridTooSmall { .. } => Error::config("score_check.grid", e.to_string()),
            other => other,
        })?;
        ("quadrature", vec![s])
    } else {
        return Err(Error::config(
            "target",
            "score-check needs a Gaussian target (closed form) or a 1-d target (quadrature)",
        ));
    };

    let streams = Seeded(cfg.seed);
    let ctx = PosteriorContext::new(built.target.as_ref(), &sc.x, sc.tau)?;
    let mut rows = Vec::new();
    for (i, template) in sc.estimators.iter().enumerate() {
        for (j, &budget) in sc.budgets.iter().enumerate() {
            let est = EstimatorConfig {
                sample_count: budget,
                is_pool: if template.kind == EstimatorKind::IsInitUla {
                    budget
                } else {
                    template.is_pool
                },
                ..template.clone()
            };
            let mut rng = streams.stream(domain::SCORE_CHECK, ((i as u64) << 32) | j as u64);
            let e = estimate_score(&ctx, &est, &mut rng)?;
            let score_err = e
                .drift
                .iter()
                .zip(&oracle_score)
                .map(|(v, s)| (0.5 * v - s).abs())
                .fold(0.0, f64::max);
            rows.push(ScoreCheckRow {
                estimator: kind_name(template.kind).into(),
                budget,
                grad_evals: e.cost.grad_evals,
                f_evals: e.cost.f_evals,
                ess: e.ess,
                score_err,
            });
        }
    }
    Ok(ScoreCheckTable {
        oracle,
        oracle_score,
        rows,
    })
}
