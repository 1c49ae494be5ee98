use std::path::Path;
use std::process::{Command, Output};

const SMALL_RUN: &str = r#"
seed = 5
particles = 50

[target]
kind = "gmm"
means = [[0.0, 0.0], [3.0, 0.0]]

[schedule]
terminal_time = 0.5
outer_step = 0.1

[estimator]
kind = "importance"
sample_count = 20

[[samplers]]
kind = "rdmc"

[[samplers]]
kind = "ulmc"
step = 0.1
iters = 20

[metrics]
mmd_vs_reference = true
moments = [2]
"#;

const SCORE_CHECK: &str = r#"
seed = 6

[target]
kind = "gmm"
means = [[-1.0], [2.0]]

[[samplers]]
kind = "lmc"
step = 0.1
iters = 1

[score_check]
x = [0.5]
tau = 0.5
budgets = [1, 1000]

[[score_check.estimators]]
kind = "importance"
"#;

fn rdmc(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rdmc"));
    cmd.args(args).env_remove("RDMC_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn version_prints_the_package_version() {
    let out = rdmc(&["version"], &[]);
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), format!("rdmc {}", env!("CARGO_PKG_VERSION")));
}

#[test]
fn run_writes_outputs_and_honours_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "run.toml", SMALL_RUN);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");

    let out = rdmc(&["run", "--config", &config, "--out-dir", a.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("rdmc: 5 steps") && stdout.contains("ulmc: 20 steps"), "{stdout}");
    for f in ["trace.csv", "config_resolved.toml", "mmd.svg"] {
        assert!(a.join(f).exists(), "{f}");
    }

    let out = rdmc(&["run", "--config", &config, "--out-dir", b.to_str().unwrap()], &[("RDMC_THREADS", "1")]);
    assert_eq!(code(&out), 0);
    let trace_a = std::fs::read(a.join("trace.csv")).unwrap();
    assert_eq!(trace_a, std::fs::read(b.join("trace.csv")).unwrap());

    let out = rdmc(&["run", "--config", &config, "--out-dir", c.to_str().unwrap(), "--seed", "77"], &[]);
    assert_eq!(code(&out), 0);
    assert_ne!(trace_a, std::fs::read(c.join("trace.csv")).unwrap());
    let resolved = std::fs::read_to_string(c.join("config_resolved.toml")).unwrap();
    assert!(resolved.contains("seed = 77"));
}

#[test]
fn score_check_prints_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "sc.toml", SCORE_CHECK);
    let out = rdmc(&["score-check", "--config", &config], &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    assert!(lines[0].starts_with("# oracle: quadrature"));
    assert_eq!(lines[1], "estimator,budget,grad_evals,f_evals,ess,score_err");
    assert_eq!(lines.len(), 4);
}

#[test]
fn config_problems_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    assert_eq!(code(&rdmc(&["run", "--config", missing.to_str().unwrap()], &[])), 2);

    let bad = write(dir.path(), "bad.toml", &SMALL_RUN.replace("iters = 20", "iters = \"many\""));
    let out = rdmc(&["run", "--config", &bad], &[]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("samplers[1]"));

    let invalid = write(dir.path(), "invalid.toml", &SMALL_RUN.replace("kind = \"ulmc\"\nstep = 0.1", "kind = \"ulmc\"\nstep = 0.0"));
    let out = rdmc(&["run", "--config", &invalid], &[]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("samplers[1].step"));

    let two_d = write(dir.path(), "sc2.toml", &SCORE_CHECK.replace("[[-1.0], [2.0]]", "[[-1.0, 0.0], [2.0, 0.0]]").replace("x = [0.5]", "x = [0.5, 0.0]"));
    assert_eq!(code(&rdmc(&["score-check", "--config", &two_d], &[])), 2);

    let good = write(dir.path(), "good.toml", SMALL_RUN);
    assert_eq!(code(&rdmc(&["version"], &[("RDMC_THREADS", "zero")])), 2);
    assert_eq!(code(&rdmc(&["run", "--config", &good], &[("RDMC_THREADS", "0")])), 2);
    assert_eq!(code(&rdmc(&["run"], &[])), 2);
}

#[test]
fn diverging_run_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        r#"
seed = 7
particles = 10
out_dir = "{}"

[target]
kind = "ill_gaussian"
mean = [0.0]
variances = [1.0]

[[samplers]]
kind = "lmc"
step = 10.0
iters = 2000
"#,
        dir.path().join("out").display()
    );
    let config = write(dir.path(), "diverge.toml", &text);
    let out = rdmc(&["run", "--config", &config], &[]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}
