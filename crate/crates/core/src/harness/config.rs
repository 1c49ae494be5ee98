use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{Bandwidth, MmdConfig};
use crate::ou::Schedule;
use crate::samplers::{HatPConfig, LmcConfig};
use crate::score::{EstimatorConfig, EstimatorKind};
use crate::targets::{
    circle_layout, make_cauchy, make_circle_gmm, make_gmm, make_ill_conditioned_gaussian, make_neals_funnel,
    make_sublinear_tail, GaussianMixtureSpec, ReferenceSampler, Target,
};

/// Target family and its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    Gmm {
        means: Vec<Vec<f64>>,
        #[serde(default)]
        log_weights: Vec<f64>,
    },
    CircleGmm {
        num_modes: usize,
        radius_scale: f64,
        dim: usize,
    },
    IllGaussian {
        mean: Vec<f64>,
        variances: Vec<f64>,
    },
    Sublinear {
        exponent: f64,
        dim: usize,
    },
    Cauchy {
        dim: usize,
    },
    Funnel {
        dim: usize,
    },
}

/// A constructed target, with its exact sampler when one exists.
#[derive(Clone)]
pub struct BuiltTarget {
    pub target: Arc<dyn Target>,
    pub reference: Option<Arc<dyn ReferenceSampler>>,
    /// Component means and weights when the target is a mixture (or a single Gaussian).
    pub modes: Option<(Vec<Vec<f64>>, Vec<f64>)>,
    /// Per-coordinate mean and variance when the target is a diagonal Gaussian.
    pub gaussian: Option<(Vec<f64>, Vec<f64>)>,
}

fn field_err(field: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Domain(reason) => Error::config(field, reason),
        other => other,
    }
}

impl TargetSpec {
    pub fn dim(&self) -> usize {
        match self {
            TargetSpec::Gmm { means, .. } => means.first().map_or(0, Vec::len),
            TargetSpec::CircleGmm { dim, .. }
            | TargetSpec::Sublinear { dim, .. }
            | TargetSpec::Cauchy { dim }
            | TargetSpec::Funnel { dim } => *dim,
            TargetSpec::IllGaussian { mean, .. } => mean.len(),
        }
    }

    pub fn build(&self) -> Result<BuiltTarget> {
        let err = field_err("target");
        match self {
            TargetSpec::Gmm { means, log_weights } => {
                let g = make_gmm(GaussianMixtureSpec {
                    means: means.clone(),
                    log_weights: log_weights.clone(),
                })
                .map_err(&err)?;
                Ok(mixture(g))
            }
            TargetSpec::CircleGmm {
                num_modes,
                radius_scale,
                dim,
            } => Ok(mixture(make_circle_gmm(*num_modes, *radius_scale, *dim).map_err(&err)?)),
            TargetSpec::IllGaussian { mean, variances } => {
                let g = Arc::new(make_ill_conditioned_gaussian(mean.clone(), variances.clone()).map_err(&err)?);
                Ok(BuiltTarget {
                    target: g.clone(),
                    reference: Some(g.clone()),
                    modes: None,
                    gaussian: Some((g.mean().to_vec(), g.variances().to_vec())),
                })
            }
            TargetSpec::Sublinear { exponent, dim } => Ok(BuiltTarget {
                target: Arc::new(make_sublinear_tail(*exponent, *dim).map_err(&err)?),
                reference: None,
                modes: None,
                gaussian: None,
            }),
            TargetSpec::Cauchy { dim } => {
                let c = Arc::new(make_cauchy(*dim).map_err(&err)?);
                Ok(BuiltTarget {
                    target: c.clone(),
                    reference: Some(c),
                    modes: None,
                    gaussian: None,
                })
            }
            TargetSpec::Funnel { dim } => {
                let f = Arc::new(make_neals_funnel(*dim).map_err(&err)?);
                Ok(BuiltTarget {
                    target: f.clone(),
                    reference: Some(f),
                    modes: None,
                    gaussian: None,
                })
            }
        }
    }

    /// Human-readable layout convention, recorded in the resolved config.
    pub fn layout_note(&self) -> Option<String> {
        match self {
            TargetSpec::CircleGmm {
                num_modes,
                radius_scale,
                dim,
            } => {
                let means = circle_layout(*num_modes, *radius_scale, *dim).ok()?;
                Some(format!(
                    "{}; means = {:?}",
                    crate::targets::CIRCLE_LAYOUT_RULE,
                    means
                ))
            }
            TargetSpec::Funnel { .. } => Some(format!(
                "x1 ~ N(0, {}^2), x_i | x1 ~ N(0, exp(x1)) for i >= 2",
                crate::targets::FUNNEL_SCALE
            )),
            TargetSpec::Cauchy { .. } => Some("product of independent standard 1-d Cauchy coordinates".into()),
            _ => None,
        }
    }
}

fn mixture(g: crate::targets::GaussianMixture) -> BuiltTarget {
    let g = Arc::new(g);
    let single = g.means().len() == 1;
    BuiltTarget {
        target: g.clone(),
        reference: Some(g.clone()),
        modes: Some((g.means().to_vec(), g.weights())),
        gaussian: single.then(|| (g.means()[0].clone(), vec![1.0; g.means()[0].len()])),
    }
}

/// One sampler to run. `name` labels its rows in the trace and defaults to the kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerSpec {
    Rdmc {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        /// Langevin warm-up toward `p_T` before the reverse process.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hat_p: Option<HatPConfig>,
        /// LMC steps appended after the reverse process.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fine_tune: Option<LmcConfig>,
    },
    Lmc {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        step: f64,
        iters: usize,
    },
    Ulmc {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        step: f64,
        #[serde(default = "default_friction")]
        friction: f64,
        iters: usize,
    },
}

fn default_friction() -> f64 {
    2.0
}

impl SamplerSpec {
    pub fn name(&self) -> &str {
        match self {
            SamplerSpec::Rdmc { name, .. } => name.as_deref().unwrap_or("rdmc"),
            SamplerSpec::Lmc { name, .. } => name.as_deref().unwrap_or("lmc"),
            SamplerSpec::Ulmc { name, .. } => name.as_deref().unwrap_or("ulmc"),
        }
    }

    fn with_resolved_name(mut self) -> Self {
        let resolved = self.name().to_string();
        match &mut self {
            SamplerSpec::Rdmc { name, .. } | SamplerSpec::Lmc { name, .. } | SamplerSpec::Ulmc { name, .. } => {
                *name = Some(resolved)
            }
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default)]
    pub mmd_vs_reference: bool,
    #[serde(default)]
    pub mmd: MmdConfig,
    /// Raw moment orders to report, each in 1..=3.
    #[serde(default)]
    pub moments: Vec<u32>,
    /// Modes for the nearest-mode weight diagnostic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode_weights: Option<Vec<Vec<f64>>>,
    /// Expected weight of each listed mode; uniform when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode_targets: Option<Vec<f64>>,
    #[serde(default = "default_true")]
    pub plot: bool,
}

fn default_true() -> bool {
    true
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            mmd_vs_reference: false,
            mmd: MmdConfig::default(),
            moments: Vec::new(),
            mode_weights: None,
            mode_targets: None,
            plot: true,
        }
    }
}

/// Settings for the `score-check` study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreCheckConfig {
    pub x: Vec<f64>,
    pub tau: f64,
    /// Estimator templates; each budget overrides the sample count (and the IS pool).
    pub estimators: Vec<EstimatorConfig>,
    pub budgets: Vec<usize>,
    /// Quadrature grid for 1-d non-Gaussian targets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<crate::oracles::QuadratureGrid>,
}

/// Notes written into the resolved config; ignored when the file is loaded again.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    #[serde(default)]
    pub csv_header: String,
    #[serde(default)]
    pub mmd_estimator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mmd_bandwidth: Option<f64>,
    #[serde(default)]
    pub ulmc_scheme: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_layout: Option<String>,
    #[serde(default)]
    pub budget_axis: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_particles")]
    pub particles: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_cap: Option<u64>,
    /// Record every `n` steps; 0 or absent uses the default policy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshots_stride: Option<usize>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Fill the `wall_ms` column. Off by default so traces are byte-reproducible.
    #[serde(default)]
    pub record_wall_ms: bool,
    pub target: TargetSpec,
    #[serde(default)]
    pub samplers: Vec<SamplerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Schedule>,
    #[serde(default = "default_estimator")]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_check: Option<ScoreCheckConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conventions: Option<Conventions>,
}

fn default_particles() -> usize {
    1000
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_estimator() -> EstimatorConfig {
    EstimatorConfig::new(EstimatorKind::Ula)
}

fn positive(v: f64, field: &str) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be a positive number, got {v}")))
    }
}

/// Names the config entry at byte `offset`: a dotted key path for `key = value`
/// lines, `table[i]` for the i-th `[[table]]` header.
fn field_at(text: &str, offset: usize) -> Option<String> {
    let start = text[..offset.min(text.len())].rfind('\n').map_or(0, |i| i + 1);
    let line = text[start..].lines().next()?.trim();
    let mut table = String::new();
    let mut header_index = None;
    for l in text[..start].lines().map(str::trim) {
        if let Some(name) = l.strip_prefix("[[").and_then(|r| r.strip_suffix("]]")) {
            table = name.trim().to_string();
        } else if let Some(name) = l.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            table = name.trim().to_string();
        }
    }
    if let Some(name) = line.strip_prefix("[[").and_then(|r| r.strip_suffix("]]")) {
        let name = name.trim();
        let before = text[..start]
            .lines()
            .filter(|l| l.trim().strip_prefix("[[").and_then(|r| r.strip_suffix("]]")).map(str::trim) == Some(name))
            .count();
        header_index = Some(before);
        table = name.to_string();
    }
    if let Some(i) = header_index {
        return Some(format!("{table}[{i}]"));
    }
    if let Some(name) = line.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
        return Some(name.trim().to_string());
    }
    let key = line.split('=').next()?.trim();
    if key.is_empty() || key.starts_with('[') {
        return (!table.is_empty()).then_some(table);
    }
    Some(if table.is_empty() { key.to_string() } else { format!("{table}.{key}") })
}

/// Deserializes each `[[samplers]]` entry on its own to find the one that fails.
fn locate_bad_sampler(text: &str) -> Option<Error> {
    let table: toml::Table = toml::from_str(text).ok()?;
    let entries = table.get("samplers")?.as_array()?;
    entries.iter().enumerate().find_map(|(i, v)| {
        SamplerSpec::deserialize(v.clone())
            .err()
            .map(|e| Error::config(format!("samplers[{i}]"), e.to_string().trim().to_string()))
    })
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message();
            let named = ["missing field", "unknown field", "duplicate field"]
                .iter()
                .any(|p| msg.starts_with(p));
            let field = named
                .then(|| msg.split('`').nth(1).map(str::to_string))
                .flatten()
                .or_else(|| e.span().and_then(|span| field_at(text, span.start)))
                .unwrap_or_else(|| "config".into());
            if field.starts_with("samplers[") {
                if let Some(located) = locate_bad_sampler(text) {
                    return located;
                }
            }
            Error::config(field, e.to_string().trim().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Checks every field needed by `run`. Nothing is computed before this passes.
    pub fn validate(&self) -> Result<()> {
        let dim = self.target.dim();
        self.target.build()?;
        if self.samplers.is_empty() {
            return Err(Error::config("samplers", "at least one sampler is required"));
        }
        if self.particles == 0 {
            return Err(Error::config("particles", "must be at least 1"));
        }
        let mut names: Vec<&str> = Vec::new();
        for (i, s) in self.samplers.iter().enumerate() {
            let at = |f: &str| format!("samplers[{i}].{f}");
            if names.contains(&s.name()) {
                return Err(Error::config(at("name"), format!("duplicate sampler name `{}`", s.name())));
            }
            names.push(s.name());
            if s.name().is_empty() || s.name().contains([',', '"', '\n']) {
                return Err(Error::config(at("name"), "must be non-empty without commas, quotes or newlines"));
            }
            match s {
                SamplerSpec::Rdmc { hat_p, fine_tune, .. } => {
                    if self.schedule.is_none() {
                        return Err(Error::config("schedule", "required by the rdmc sampler"));
                    }
                    self.estimator.validate("estimator")?;
                    if let Some(h) = hat_p {
                        positive(h.step, &at("hat_p.step"))?;
                    }
                    if let Some(f) = fine_tune {
                        positive(f.step, &at("fine_tune.step"))?;
                    }
                }
                SamplerSpec::Lmc { step, .. } => positive(*step, &at("step"))?,
                SamplerSpec::Ulmc { step, friction, .. } => {
                    positive(*step, &at("step"))?;
                    positive(*friction, &at("friction"))?;
                }
            }
        }
        self.validate_metrics(dim)?;
        if let Some(sc) = &self.score_check {
            validate_score_check(sc, dim)?;
        }
        Ok(())
    }

    /// Checks the target and the `[score_check]` section; samplers are not needed.
    pub fn validate_score_check(&self) -> Result<()> {
        self.target.build()?;
        match &self.score_check {
            Some(sc) => validate_score_check(sc, self.target.dim()),
            None => Err(Error::config("score_check", "missing [score_check] section")),
        }
    }

    fn validate_metrics(&self, dim: usize) -> Result<()> {
        let m = &self.metrics;
        if let Some(o) = m.moments.iter().find(|o| !(1..=3).contains(*o)) {
            return Err(Error::config("metrics.moments", format!("orders must be 1, 2 or 3, got {o}")));
        }
        if let Bandwidth::Fixed(h) = m.mmd.bandwidth {
            positive(h, "metrics.mmd.bandwidth")?;
        }
        if let Some(modes) = &m.mode_weights {
            if modes.is_empty() {
                return Err(Error::config("metrics.mode_weights", "needs at least one mode"));
            }
            if modes.iter().any(|p| p.len() != dim) {
                return Err(Error::config("metrics.mode_weights", format!("every mode must have dimension {dim}")));
            }
            if let Some(t) = &m.mode_targets {
                let sum: f64 = t.iter().sum();
                if t.len() != modes.len() || t.iter().any(|w| w.is_nan() || *w < 0.0) || (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::config(
                        "metrics.mode_targets",
                        "needs one non-negative weight per mode, summing to 1",
                    ));
                }
            }
        } else if m.mode_targets.is_some() {
            return Err(Error::config("metrics.mode_targets", "given without metrics.mode_weights"));
        }
        if m.mmd_vs_reference && self.target.build()?.reference.is_none() {
            return Err(Error::NoReference);
        }
        Ok(())
    }

    /// The config with defaults made explicit, sampler names filled in and conventions attached.
    pub fn resolved(&self, mmd_bandwidth: Option<f64>) -> Self {
        let mut out = self.clone();
        out.samplers = out.samplers.into_iter().map(SamplerSpec::with_resolved_name).collect();
        out.conventions = Some(Conventions {
            csv_header: super::CSV_HEADER.into(),
            mmd_estimator: crate::metrics::MMD_ESTIMATOR.into(),
            mmd_bandwidth,
            ulmc_scheme: crate::samplers::ULMC_SCHEME.into(),
            target_layout: self.target.layout_note(),
            budget_axis: "grad_evals; f_evals reported separately".into(),
        });
        out
    }
}

fn validate_score_check(sc: &ScoreCheckConfig, dim: usize) -> Result<()> {
    if sc.x.len() != dim {
        return Err(Error::config("score_check.x", format!("must have dimension {dim}")));
    }
    positive(sc.tau, "score_check.tau")?;
    if sc.estimators.is_empty() {
        return Err(Error::config("score_check.estimators", "at least one estimator is required"));
    }
    for (i, e) in sc.estimators.iter().enumerate() {
        e.validate(&format!("score_check.estimators[{i}]"))?;
    }
    if sc.budgets.is_empty() || sc.budgets.contains(&0) {
        return Err(Error::config("score_check.budgets", "needs at least one budget, all positive"));
    }
    if let Some(g) = &sc.grid {
        if !(g.lo < g.hi && g.n_nodes >= 3) {
            return Err(Error::config("score_check.grid", "needs lo < hi and at least 3 nodes"));
        }
    }
    Ok(())
}
