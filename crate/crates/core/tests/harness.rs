use rdmc::harness::{run_experiment, run_in_memory, score_check, ExperimentConfig, CSV_HEADER};
use rdmc::Error;

const MINIMAL: &str = r#"
seed = 1
particles = 200

[target]
kind = "gmm"
means = [[0.0, 0.0]]

[[samplers]]
kind = "lmc"
step = 0.05
iters = 10

[metrics]
mmd_vs_reference = true
moments = [1, 2, 3]
mode_weights = [[0.0, 0.0]]
"#;

const COMPARISON: &str = r#"
seed = 21
particles = 500
budget_cap = 3200000

[target]
kind = "gmm"
means = [[0.0, 0.0], [8.0, 0.0]]

[schedule]
terminal_time = 4.0
outer_step = 0.1

[estimator]
kind = "is_init_ula"
is_pool = 100
sample_count = 16
inner_steps = 10

[[samplers]]
kind = "rdmc"

[[samplers]]
kind = "lmc"
step = 0.01
iters = 6400

[metrics]
mmd_vs_reference = true
plot = false
"#;

fn config_in(text: &str, dir: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml_str(text).unwrap();
    cfg.out_dir = dir.to_path_buf();
    cfg
}

#[test]
fn minimal_run_writes_a_complete_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(MINIMAL, dir.path());
    let record = run_experiment(&cfg).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 11);
    let mut last = 0u64;
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.len(), 10);
        assert_eq!(r[0], "lmc");
        assert_eq!(r[1], i.to_string());
        let g: u64 = r[2].parse().unwrap();
        assert!(g >= last);
        last = g;
        for field in &r[4..9] {
            assert!(!field.is_empty());
        }
        // wall clock is off by default
        assert_eq!(r[9], "");
    }
    assert_eq!(last, 10 * 200);
    assert!(!csv.to_lowercase().contains("nan"));
    assert_eq!(record.rows.len(), 11);
    assert!(dir.path().join("config_resolved.toml").exists());
    let svg = std::fs::read_to_string(dir.path().join("mmd.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("lmc"));
}

#[test]
fn reruns_and_resolved_configs_reproduce_the_trace() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    run_experiment(&config_in(MINIMAL, a.path())).unwrap();
    run_experiment(&config_in(MINIMAL, b.path())).unwrap();
    let first = std::fs::read(a.path().join("trace.csv")).unwrap();
    assert_eq!(first, std::fs::read(b.path().join("trace.csv")).unwrap());

    let resolved = ExperimentConfig::load(&a.path().join("config_resolved.toml")).unwrap();
    let mut again = resolved.clone();
    again.out_dir = c.path().to_path_buf();
    run_experiment(&again).unwrap();
    assert_eq!(first, std::fs::read(c.path().join("trace.csv")).unwrap());
    let mut second = ExperimentConfig::load(&c.path().join("config_resolved.toml")).unwrap();
    second.out_dir = resolved.out_dir.clone();
    assert_eq!(second, resolved);
}

#[test]
fn absent_metrics_leave_empty_fields() {
    let text = r#"
seed = 2
particles = 20

[target]
kind = "sublinear"
exponent = 0.25
dim = 2

[[samplers]]
kind = "ulmc"
step = 0.1
iters = 5
"#;
    let record = run_in_memory(&ExperimentConfig::from_toml_str(text).unwrap()).unwrap();
    let csv = record.to_csv();
    for line in csv.lines().skip(1) {
        assert!(line.ends_with(",,,,,,"), "{line}");
    }
}

#[test]
fn rdmc_beats_lmc_at_equal_budget_on_separated_modes() {
    let record = run_in_memory(&ExperimentConfig::from_toml_str(COMPARISON).unwrap()).unwrap();
    let final_mmd = |name: &str| record.rows_for(name).last().unwrap().mmd2.unwrap();
    let last_grads = |name: &str| record.rows_for(name).last().unwrap().grad_evals;
    assert_eq!(last_grads("rdmc"), last_grads("lmc"));
    let (r, l) = (final_mmd("rdmc"), final_mmd("lmc"));
    assert!(r < l, "rdmc {r} vs lmc {l}");
}

#[test]
fn config_errors_name_the_field() {
    let bad_step = MINIMAL.replace("step = 0.05", "step = -1.0");
    match run_in_memory(&ExperimentConfig::from_toml_str(&bad_step).unwrap()) {
        Err(Error::Config { field, .. }) => assert_eq!(field, "samplers[0].step"),
        other => panic!("unexpected {other:?}"),
    }

    let inexact = r#"
seed = 3
[target]
kind = "sublinear"
exponent = 0.25
dim = 1
[[samplers]]
kind = "lmc"
step = 0.1
iters = 3
[metrics]
mmd_vs_reference = true
"#;
    let err = run_in_memory(&ExperimentConfig::from_toml_str(inexact).unwrap()).unwrap_err();
    assert!(matches!(err, Error::NoReference));
    assert!(err.to_string().contains("no exact reference sampler"));

    let no_schedule = MINIMAL.replace("kind = \"lmc\"\nstep = 0.05\niters = 10", "kind = \"rdmc\"");
    let err = run_in_memory(&ExperimentConfig::from_toml_str(&no_schedule).unwrap()).unwrap_err();
    assert!(err.is_config_error(), "{err}");

    assert!(ExperimentConfig::from_toml_str("particles = 3").unwrap_err().is_config_error());
    let unknown = format!("{MINIMAL}\nbogus = 1\n");
    assert!(ExperimentConfig::from_toml_str(&unknown).is_err());
}

const SCORE_CHECK: &str = r#"
seed = 9

[target]
kind = "ill_gaussian"
mean = [1.0, -1.0]
variances = [2.0, 0.5]

[[samplers]]
kind = "lmc"
step = 0.1
iters = 1

[score_check]
x = [2.0, 0.0]
tau = 0.5
budgets = [1, 100, 100000]

[[score_check.estimators]]
kind = "importance"

[[score_check.estimators]]
kind = "ula"
inner_steps = 200
"#;

#[test]
fn score_check_on_a_gaussian_target() {
    let cfg = ExperimentConfig::from_toml_str(SCORE_CHECK).unwrap();
    let table = score_check(&cfg).unwrap();
    assert_eq!(table.oracle, "closed_form");
    assert_eq!(table.rows.len(), 6);
    for r in &table.rows {
        assert!(r.score_err.is_finite());
    }
    let best = |name: &str| table.rows.iter().rfind(|r| r.estimator == name).unwrap().score_err;
    assert!(best("importance") < 0.1, "{}", best("importance"));
    assert!(best("ula") < 0.1, "{}", best("ula"));
    assert!(table.rows.iter().any(|r| r.budget == 1));
    assert_eq!(table, score_check(&cfg).unwrap());
    assert_eq!(table.to_csv(), score_check(&cfg).unwrap().to_csv());
}

#[test]
fn score_check_on_a_one_dimensional_target_uses_quadrature() {
    let text = r#"
seed = 10

[target]
kind = "cauchy"
dim = 1

[[samplers]]
kind = "lmc"
step = 0.1
iters = 1

[score_check]
x = [1.5]
tau = 0.4
budgets = [10, 100000]

[[score_check.estimators]]
kind = "importance"
"#;
    let table = score_check(&ExperimentConfig::from_toml_str(text).unwrap()).unwrap();
    assert_eq!(table.oracle, "quadrature");
    assert!(table.rows[1].score_err < 0.05, "{:?}", table.rows);

    let two_d = text.replace("kind = \"cauchy\"\ndim = 1", "kind = \"cauchy\"\ndim = 2").replace("x = [1.5]", "x = [1.5, 0.0]");
    let err = score_check(&ExperimentConfig::from_toml_str(&two_d).unwrap()).unwrap_err();
    assert!(err.is_config_error(), "{err}");
}
