use std::path::{Path, PathBuf};
use std::process::Command;

use sglmm_cli::commands::FitFile;
use sglmm_cli::manifest::{sha256_file, Manifest};

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn sglmm_env(args: &[&str], env: &[(&str, &str)]) -> Out {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sglmm"));
    cmd.args(args).env_remove("SGLMM_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary runs");
    Out {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn sglmm(args: &[&str]) -> Out {
    sglmm_env(args, &[])
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

fn simulate(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("sim");
    let mut args = vec!["simulate", "--out", p(&out)];
    args.extend_from_slice(extra);
    let r = sglmm(&args);
    assert_eq!(r.code, 0, "{}", r.stderr);
    out
}

#[test]
fn default_simulation_has_scenario_sizes_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(dir.path(), &["--seed", "7"]);
    assert_eq!(rows(&a.join("data.csv")), 1000);
    assert_eq!(rows(&a.join("predict.csv")), 400);
    assert_eq!(rows(&a.join("truth.csv")), 1400);
    let b = dir.path().join("again");
    assert_eq!(sglmm(&["simulate", "--out", p(&b), "--seed", "7"]).code, 0);
    let (ma, mb) = (manifest(&a), manifest(&b));
    let hashes = |m: &Manifest| m.outputs.iter().map(|f| f.sha256.clone()).collect::<Vec<_>>();
    assert_eq!(hashes(&ma), hashes(&mb));
    assert_eq!(ma.seeds["master"], 7);
    let c = dir.path().join("other");
    assert_eq!(sglmm(&["simulate", "--out", p(&c), "--seed", "8"]).code, 0);
    assert_ne!(hashes(&ma), hashes(&manifest(&c)));
}

#[test]
fn input_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(sglmm(&["simulate", "--out", p(&out), "--family", "gamma"]).code, 2);
    assert_eq!(sglmm(&["simulate", "--out", p(&out), "--no_such_key", "1"]).code, 2);
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let r = sglmm(&["simulate", "--out", p(&blocker.join("sub")), "--n_fit", "10", "--n_predict", "0"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("output directory"), "{}", r.stderr);
    let r = sglmm_env(&["simulate", "--out", p(&out)], &[("SGLMM_THREADS", "zero")]);
    assert_eq!(r.code, 2);
    assert_eq!(sglmm(&["frobnicate"]).code, 2);

    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "m = 10\nbogus = 3\n").unwrap();
    let r = sglmm(&["fit", "--config", p(&cfg)]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("line 2"), "{}", r.stderr);
}

#[test]
fn malformed_data_is_reported_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    std::fs::write(&data, "x,y\n0.1,0.2\n").unwrap();
    let r = sglmm(&["fit", "--out", p(&dir.path().join("f")), "--data", p(&data)]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("'z'"), "{}", r.stderr);
    std::fs::write(&data, "x,y,z\n0.1,0.2,1\n0.3,oops,2\n").unwrap();
    let r = sglmm(&["fit", "--out", p(&dir.path().join("f")), "--data", p(&data)]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("line 3"), "{}", r.stderr);
    std::fs::write(&data, "x,y,z\n0.1,0.2,1\n0.3,0.4,2\n0.5,0.1,0\n").unwrap();
    let r = sglmm(&["fit", "--out", p(&dir.path().join("f")), "--data", p(&data), "--min_weight_ess", "1.5"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("min_weight_ess"), "{}", r.stderr);
}

#[test]
fn config_file_and_overrides_reach_the_fit() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), &["--n_fit", "120", "--n_predict", "15", "--seed", "3"]);
    let cfg = dir.path().join("fit.cfg");
    std::fs::write(&cfg, format!("# small fit\ndata = {}\nm = 12\nseed = 4\n", p(&sim.join("data.csv")))).unwrap();
    let out = dir.path().join("fit");
    let r = sglmm(&["fit", "--config", p(&cfg), "--out", p(&out), "--m", "25"]);
    assert!(r.code == 0 || r.code == 3, "{}", r.stderr);
    let m = manifest(&out);
    assert_eq!(m.config["m"], "25");
    assert_eq!(m.config["seed"], "4");
    assert_eq!(m.exit_code as i32, r.code);
    let file = FitFile::read(&out.join("fit.json")).unwrap();
    assert_eq!(file.fit.metadata.rank, 25);
    assert!(r.stdout.contains("beta1") && r.stdout.contains("phi"));
    let params = std::fs::read_to_string(out.join("parameters.csv")).unwrap();
    assert!(params.starts_with("parameter,estimate,fisher_lower,fisher_upper,mc_se\n"));
    assert_eq!(params.lines().count(), 5);
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), file.fit.trace.len() + 1);
    for rec in m.outputs.iter().chain(&m.inputs) {
        assert_eq!(sha256_file(Path::new(&rec.path)).unwrap(), rec.sha256);
    }

    let pred = dir.path().join("pred");
    let r = sglmm(&["predict", "--out", p(&pred), "--fit", p(&out.join("fit.json")), "--sites", p(&sim.join("predict.csv"))]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(rows(&pred.join("predictions.csv")), 15);
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "x,y\n").unwrap();
    let r = sglmm(&["predict", "--out", p(&pred), "--fit", p(&out.join("fit.json")), "--sites", p(&empty)]);
    assert_eq!(r.code, 2);
}

#[test]
fn full_rank_prediction_at_observed_sites_reproduces_field() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), &["--n_fit", "40", "--n_predict", "0", "--seed", "11"]);
    let out = dir.path().join("fit");
    let r = sglmm(&["fit", "--out", p(&out), "--data", p(&sim.join("data.csv")), "--m", "40"]);
    assert!(r.code == 0 || r.code == 3, "{}", r.stderr);
    let pred = dir.path().join("pred");
    let r = sglmm(&["predict", "--out", p(&pred), "--fit", p(&out.join("fit.json")), "--sites", p(&sim.join("data.csv"))]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let file = FitFile::read(&out.join("fit.json")).unwrap();
    let text = std::fs::read_to_string(pred.join("predictions.csv")).unwrap();
    for (i, line) in text.lines().skip(1).enumerate() {
        let w: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!((w - file.fit.w_hat[i]).abs() < 1e-4, "site {i}: {w} vs {}", file.fit.w_hat[i]);
    }
}

#[test]
fn lattice_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), &["--domain", "lattice", "--rows", "30", "--cols", "30", "--seed", "5"]);
    assert_eq!(rows(&sim.join("data.csv")), 900);
    let out = dir.path().join("fit");
    let r = sglmm(&["fit", "--out", p(&out), "--data", p(&sim.join("data.csv")), "--edges", p(&sim.join("edges.txt"))]);
    assert_eq!(r.code, 0, "{}\n{}", r.stdout, r.stderr);
    assert!(r.stdout.contains("tau"));
    let r = sglmm(&["predict", "--out", p(&dir.path().join("p")), "--fit", p(&out.join("fit.json")), "--sites", p(&sim.join("data.csv"))]);
    assert_eq!(r.code, 2);
}

#[test]
fn bootstrap_is_deterministic_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), &["--n_fit", "200", "--n_predict", "0", "--seed", "21"]);
    let fit = dir.path().join("fit");
    let data = sim.join("data.csv");
    let fit_json = fit.join("fit.json");
    let common = ["--data", p(&data), "--m", "8"];
    let mut args = vec!["fit", "--out", p(&fit)];
    args.extend_from_slice(&common);
    let r = sglmm(&args);
    assert!(r.code == 0 || r.code == 3, "{}", r.stderr);
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let mut args = vec!["bootstrap", "--out", p(&out), "--fit", p(&fit_json), "--replicates", "4", "--seed", "9"];
        args.extend_from_slice(&common);
        let r = sglmm_env(&args, &[("SGLMM_THREADS", threads)]);
        (out, r)
    };
    let (a, ra) = run("boot1", "1");
    let (b, rb) = run("boot2", "2");
    assert!(ra.code == 0 || ra.code == 3, "{}", ra.stderr);
    assert_eq!(ra.code, rb.code);
    assert_eq!(rows(&a.join("bootstrap_replicates.csv")), 4);
    let ta = std::fs::read_to_string(a.join("bootstrap_replicates.csv")).unwrap();
    let tb = std::fs::read_to_string(b.join("bootstrap_replicates.csv")).unwrap();
    assert_eq!(ta, tb);
    assert_eq!(manifest(&a).threads, 1);
    assert_eq!(manifest(&b).threads, 2);
    if ra.code == 0 {
        let iv = std::fs::read_to_string(a.join("bootstrap_intervals.csv")).unwrap();
        assert!(iv.lines().any(|l| l.starts_with("phi,")), "{iv}");
    }
}

#[test]
fn study_writes_estimates_and_coverage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("study");
    let r = sglmm(&["study", "--out", p(&out), "--n_fit", "80", "--n_predict", "0", "--m", "6", "--runs", "5"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(rows(&out.join("estimates.csv")), 5);
    let cov = std::fs::read_to_string(out.join("coverage.csv")).unwrap();
    let mut lines = cov.lines();
    assert_eq!(lines.next().unwrap(), "method,beta1,beta2,sigma2,phi");
    let methods: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, vec!["fisher"]);
    assert_eq!(manifest(&out).seeds.len(), 6);
}
