use std::path::Path;
use std::process::{Command, Output};

use cevae_cli::{read_results, ExperimentConfig};

fn cevae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cevae"))
        .args(args)
        .env_remove("CEVAE_DATA_DIR")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL_TOY: &str = r#"
experiment = "toy"
seeds = [1, 2]
estimators = [{ kind = "naive" }, { kind = "lr1" }, { kind = "tarnet" }]
[grid]
sample_sizes = [300, 600]
[split]
train = 0.6
validation = 0.2
test = 0.2
[tarnet]
hidden_layers = 1
width = 8
[train]
max_epochs = 5
"#;

#[test]
fn run_writes_every_report_and_summarize_reads_it_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "toy.toml", SMALL_TOY);
    let out = dir.path().join("out");
    let o = cevae(&["run", "-c", &cfg, "-o", out.to_str().unwrap(), "-q"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["results.csv", "summary.json", "curves.csv", "config.toml"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let rows = read_results(&out.join("results.csv")).unwrap();
    assert_eq!(rows.len(), 2 * 3 * 2);
    // grid point, then estimator in config order, then seed
    let keys: Vec<(Option<usize>, &str, u64)> = rows.iter().map(|r| (r.n, r.estimator.as_str(), r.seed)).collect();
    assert_eq!(keys[..4], [(Some(300), "naive", 1), (Some(300), "naive", 2), (Some(300), "LR1", 1), (Some(300), "LR1", 2)]);
    assert!(rows.iter().all(|r| r.is_ok() && r.config_hash.len() == 16 && r.ate_abs_err_out.is_some()));

    // the effective config reproduces the run's hash
    let effective = ExperimentConfig::load(&out.join("config.toml")).unwrap();
    assert_eq!(effective.hash(), rows[0].config_hash);

    let s = cevae(&["summarize", out.join("results.csv").to_str().unwrap()]);
    assert!(s.status.success());
    let table = String::from_utf8(s.stdout).unwrap();
    assert!(table.contains("TARnet") && table.contains("ate_abs_err_out"));
}

#[test]
fn seed_override_replaces_the_seed_list() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "toy.toml", SMALL_TOY);
    let out = dir.path().join("out");
    let o = cevae(&["run", "-c", &cfg, "-o", out.to_str().unwrap(), "--seed", "9", "-q"]);
    assert!(o.status.success());
    let rows = read_results(&out.join("results.csv")).unwrap();
    assert!(rows.iter().all(|r| r.seed == 9));
    assert_eq!(rows.len(), 2 * 3);
}

#[test]
fn missing_benchmark_data_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "ihdp.toml", "experiment = \"ihdp\"\nestimators = [{ kind = \"lr1\" }]\n");
    let o = cevae(&["run", "-c", &cfg, "-o", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("data not found"));

    let empty = dir.path().join("nothing");
    std::fs::create_dir(&empty).unwrap();
    let o = cevae(&["validate-data", "--data-dir", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "experiment = \"toy\"\nestimators = []\n");
    assert_eq!(cevae(&["run", "-c", &cfg]).status.code(), Some(2));
    let typo = write(dir.path(), "typo.toml", "experiment = \"toy\"\nestimator = [{ kind = \"lr1\" }]\n");
    assert_eq!(cevae(&["run", "-c", &typo]).status.code(), Some(2));
    let csv = write(dir.path(), "r.csv", "experiment,seed\ntoy,notanumber\n");
    assert_eq!(cevae(&["summarize", &csv]).status.code(), Some(2));
}

#[test]
fn oracle_sweep_writes_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "o.toml", "experiment = \"oracle-sweep\"\n[grid]\nrho_points = 5\n");
    let out = dir.path().join("o");
    assert!(cevae(&["run", "-c", &cfg, "-o", out.to_str().unwrap()]).status.success());
    let text = std::fs::read_to_string(out.join("oracle.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 25);
    assert!(text.lines().skip(1).all(|l| l.split(',').nth(2) == Some("0.5")));
}

#[test]
fn failed_training_flags_the_row_and_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL_TOY.replace("max_epochs = 5", "max_epochs = 5\nlr = 1e300").replace("sample_sizes = [300, 600]", "sample_sizes = [300]");
    let cfg = write(dir.path(), "toy.toml", &text);
    let out = dir.path().join("out");
    let o = cevae(&["run", "-c", &cfg, "-o", out.to_str().unwrap(), "-q"]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_results(&out.join("results.csv")).unwrap();
    let tarnet: Vec<_> = rows.iter().filter(|r| r.estimator == "TARnet").collect();
    assert!(tarnet.iter().all(|r| r.status == "failed" && !r.error.is_empty() && r.ate_abs_err_in.is_none()));
    // the other estimators still ran
    assert!(rows.iter().filter(|r| r.estimator != "TARnet").all(|r| r.is_ok()));
}
