use std::fs;
use std::path::Path;
use std::process::Command;

use corrdrift_cli::{FileConfig, RunConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_corrdrift"))
}

fn run(args: &[&str], dir: &Path) -> (i32, String, String) {
    let out = bin().args(args).current_dir(dir).env_remove("CORRDRIFT_SEED").env_remove("CORRDRIFT_THREADS").output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

#[test]
fn stats_prints_the_dependence_line() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, _) = run(&["stats", "--rho", "0.5", "--n", "100", "--out", "o"], dir.path());
    assert_eq!(code, 0);
    let line = stdout.lines().nth(1).unwrap();
    assert!(line.starts_with("0.5,2.96,2.99"), "{line}");
    let csv = fs::read_to_string(dir.path().join("o/tab0.csv")).unwrap();
    assert!(csv.starts_with("rho,abs_sum,op_norm\n"));
}

#[test]
fn unknown_command_exits_2_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, stderr) = run(&["frobnicate"], dir.path());
    assert_eq!(code, 2);
    assert!(stderr.contains("Usage"));
}

#[test]
fn bad_rho_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), "model = \"ex1\"\ncorrelation = { kind = \"toeplitz\", rho = 1.5 }\n").unwrap();
    let (code, _, stderr) = run(&["stats", "--config", "c.toml"], dir.path());
    assert_eq!(code, 2);
    assert!(stderr.contains("rho must lie in (−1,1)"), "{stderr}");
}

#[test]
fn missing_ensemble_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, _) = run(&["select", "--ensemble", "missing.bin"], dir.path());
    assert_eq!(code, 4);
}

#[test]
fn forced_gate_failure_is_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), "n_paths = 10\nhorizon = 10.0\ngate = { kind = \"empirical\", scale = 0.0 }\n").unwrap();
    let (code, _, stderr) = run(&["select", "--config", "c.toml"], dir.path());
    assert_eq!(code, 3, "{stderr}");
}

#[test]
fn simulate_then_select_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let common = ["--n", "20", "--horizon", "20", "--rho", "0.5"];
    let mut args = vec!["simulate", "--out", "sim"];
    args.extend(common);
    assert_eq!(run(&args, dir.path()).0, 0);
    let mut args = vec!["select", "--ensemble", "sim/ensemble.bin", "--out", "sel"];
    args.extend(common);
    let (code, stdout, stderr) = run(&args, dir.path());
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.starts_with("m_hat="), "{stdout}");
    let crit = fs::read_to_string(dir.path().join("sel/criterion.csv")).unwrap();
    assert!(crit.starts_with("m,admissible,norm_sq,penalty,criterion,mise\n"));
    // Selecting on a fresh simulation with the same seed gives the same answer.
    let mut args = vec!["select", "--out", "sel2"];
    args.extend(common);
    let (_, stdout2, _) = run(&args, dir.path());
    assert_eq!(stdout, stdout2);
}

#[test]
fn repeated_bench_is_byte_identical_and_manifest_checks_out() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("c.toml"),
        "model = [\"ex1\", \"ex3\"]\nbasis = [\"hermite\", \"cosine\"]\nn_paths = 10\nhorizon = 10.0\nreplicates = 3\n\
         correlation = { kind = \"toeplitz\", rho = [0.0, 0.5] }\nparametric = { replicates = 1000 }\n",
    )
    .unwrap();
    for out in ["a", "b"] {
        let (code, _, stderr) = run(&["bench", "--config", "c.toml", "--out", out, "--threads", "2"], dir.path());
        assert_eq!(code, 0, "{stderr}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "bench");
    let outputs = manifest["outputs"].as_array().unwrap();
    assert!(outputs.len() >= 4 + 8);
    for art in outputs {
        let rel = Path::new(art["path"].as_str().unwrap());
        let a = dir.path().join(rel);
        let b = dir.path().join("b").join(rel.strip_prefix("a").unwrap());
        let bytes = fs::read(&a).unwrap();
        assert_eq!(bytes, fs::read(&b).unwrap(), "{}", a.display());
        assert_eq!(art["sha256"].as_str().unwrap(), corrdrift_cli::output::sha256_file(&a).unwrap());
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.lines().next().unwrap().chars().next().unwrap().is_alphabetic(), "header row in {}", a.display());
    }
    let table = fs::read_to_string(dir.path().join("a/table1.csv")).unwrap();
    assert!(table.starts_with("model,basis,rho,mean_mise_x100,std_mise_x100,mean_dim,std_dim,replicates,failures\n"));
    assert_eq!(table.lines().count(), 1 + 2 * 2 * 2);
}

#[test]
fn flags_override_file_and_env_overrides_seed() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), "n_paths = 10\nhorizon = 10.0\nseed = 5\n").unwrap();
    let out = bin()
        .args(["simulate", "--config", "c.toml", "--n", "12", "--out", "o"])
        .current_dir(dir.path())
        .env("CORRDRIFT_SEED", "9")
        .output()
        .unwrap();
    assert!(out.status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("o/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["config"]["experiment"]["n_paths"], 12);
}

#[test]
fn table_config_round_trips() {
    let text = "model = [\"ex1\", \"ex2\", \"ex3\", \"ex4\", \"ex5\"]\nbasis = [\"hermite\", \"cosine\"]\n\
                n_paths = 100\nhorizon = 100.0\ndt = 0.1\nreplicates = 25\nkappa = 2.0\nseed = 1\nmise_grid = 500\n\
                correlation = { kind = \"toeplitz\", rho = [0.0, 0.5, 0.9] }\ngate = { kind = \"empirical\" }\n";
    let run: RunConfig = FileConfig::from_toml(text).unwrap().resolve().unwrap();
    let serialized = run.to_file().to_toml().unwrap();
    let back = FileConfig::from_toml(&serialized).unwrap().resolve().unwrap();
    assert_eq!(run, back);
    // And the serialized form is itself a fixed point.
    assert_eq!(back.to_file().to_toml().unwrap(), serialized);
}

#[test]
fn theoretical_gate_config_round_trips() {
    let text = "gate = { kind = \"collection\", p = 14.0, scale = 0.5 }\ncorrelation = { kind = \"block_toeplitz\", block = 10, rho = 0.3 }\nx0 = 0.2\nm_max = 6\n";
    let run = FileConfig::from_toml(text).unwrap().resolve().unwrap();
    let back = FileConfig::from_toml(&run.to_file().to_toml().unwrap()).unwrap().resolve().unwrap();
    assert_eq!(run, back);
}
