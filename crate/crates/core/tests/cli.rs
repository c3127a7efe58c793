use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pidr::dataset::NormStats;
use pidr::metrics::{read_metrics_csv, METRICS_HEADER};
use pidr::network::{Network, NetworkParams};

fn pidr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pidr"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = pidr(args);
    assert!(
        out.status.success(),
        "pidr {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn profile_toml(kind: &str, duration: f64, imu_rate: f64) -> String {
    format!(
        "speed = 1.0\nduration = {duration}\nimu_rate = {imu_rate}\ngt_rate = 5.0\n\n\
         [shape]\nkind = \"{kind}\"\nradius = 10.0\n\n\
         [origin]\nlat = 0.5724679946541401\nlon = 0.6108652381980153\nheight = 20.0\n"
    )
}

const XSENS_TOML: &str = "accel_bias = [2.94e-4, 2.94e-4, 2.94e-4]\n\
                          gyro_bias = [4.85e-5, 4.85e-5, 4.85e-5]\n\
                          accel_noise_density = 1.18e-3\n\
                          gyro_noise_density = 1.22e-4\n\
                          seed = 7\n";

/// Writes a circle dataset and returns its directory.
fn synth(root: &Path, name: &str, duration: f64, imu_rate: f64, noisy: bool) -> PathBuf {
    let profile = root.join(format!("{name}.toml"));
    std::fs::write(&profile, profile_toml("circle", duration, imu_rate)).unwrap();
    let out = root.join(name);
    let mut args = vec!["synth", "--profile", s(&profile), "--out", s(&out)];
    let errors = root.join(format!("{name}_errors.toml"));
    if noisy {
        std::fs::write(&errors, XSENS_TOML).unwrap();
        args.extend(["--errors", s(&errors)]);
    }
    ok(&args);
    out
}

fn lines(p: &Path) -> usize {
    std::fs::read_to_string(p).unwrap().lines().count()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn synth_writes_expected_files_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a", 30.0, 50.0, true);
    assert_eq!(lines(&a.join("imu.csv")), 1 + 1501);
    assert_eq!(lines(&a.join("gt.csv")), 1 + 151);
    assert!(a.join("metadata.txt").exists());
    let manifest = std::fs::read_to_string(a.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"command\": \"synth\""));

    let b = synth(dir.path(), "b", 30.0, 50.0, true);
    for f in ["imu.csv", "gt.csv", "metadata.txt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn synth_rejects_unknown_profile_kind() {
    let dir = tempfile::tempdir().unwrap();
    let profile = dir.path().join("p.toml");
    std::fs::write(&profile, profile_toml("spiral", 10.0, 50.0)).unwrap();
    let out = pidr(&["synth", "--profile", s(&profile), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("kind") && err.contains("spiral"), "{err}");

    std::fs::write(&profile, profile_toml("circle", -1.0, 50.0)).unwrap();
    let out = pidr(&["synth", "--profile", s(&profile), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("duration"));
}

#[test]
fn bad_usage_exits_with_config_code() {
    assert_eq!(code(&pidr(&["frobnicate"])), 2);
    assert_eq!(code(&pidr(&["dr", "--data", "x", "--out", "y", "--scheme", "rk5"])), 2);
    assert_eq!(code(&pidr(&["--help"])), 0);
}

fn tde_of(out_dir: &Path) -> f64 {
    read_metrics_csv(&out_dir.join("metrics.csv")).unwrap()[0].tde
}

#[test]
fn dead_reckoning_of_clean_data_is_accurate() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "clean", 60.0, 100.0, false);
    let out = dir.path().join("dr");
    ok(&["dr", "--data", s(&data), "--out", s(&out)]);
    assert!(tde_of(&out) < 0.01, "TDE {}", tde_of(&out));
    assert_eq!(lines(&out.join("trajectory.csv")), 1 + 6001);
    let header = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap(), METRICS_HEADER);
}

#[test]
fn dead_reckoning_drift_grows_with_duration() {
    let dir = tempfile::tempdir().unwrap();
    let short = synth(dir.path(), "short", 30.0, 100.0, true);
    let long = synth(dir.path(), "long", 120.0, 100.0, true);
    let (a, b) = (dir.path().join("dr_short"), dir.path().join("dr_long"));
    ok(&["dr", "--data", s(&short), "--out", s(&a)]);
    ok(&["dr", "--data", s(&long), "--out", s(&b)]);
    assert!(tde_of(&b) > tde_of(&a), "{} vs {}", tde_of(&b), tde_of(&a));
}

#[test]
fn dead_reckoning_without_gt_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d", 5.0, 50.0, false);
    std::fs::remove_file(data.join("gt.csv")).unwrap();
    let out = pidr(&["dr", "--data", s(&data), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("gt.csv"));
}

fn log_rows(dir: &Path) -> Vec<Vec<f64>> {
    let text = std::fs::read_to_string(dir.join("train_log.csv")).unwrap();
    let mut it = text.lines();
    assert_eq!(it.next().unwrap(), "epoch,total,data,phys,lr");
    it.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect()
}

#[test]
fn training_smoke_run_reduces_loss() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d", 20.0, 20.0, true);
    let out = dir.path().join("run");
    ok(&["train", "--data", s(&data), "--out", s(&out), "--epochs", "200", "--seed", "3"]);
    let rows = log_rows(&out);
    assert_eq!(rows.len(), 200);
    let head: f64 = rows[..10].iter().map(|r| r[1]).sum();
    let tail: f64 = rows[190..].iter().map(|r| r[1]).sum();
    assert!(tail < head, "loss did not decrease: {head} -> {tail}");
    assert!(rows.iter().all(|r| r[3] > 0.0));
    assert!(out.join("model.json").exists() && out.join("config.toml").exists());
    let reloaded = Network::load(&out.join("model.json"), Some(&[7, 128, 128, 128, 128, 9])).unwrap();
    assert_eq!(reloaded.seed, 3);
}

#[test]
fn lambda_phys_zero_zeroes_the_physics_column() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d", 10.0, 20.0, true);
    let out = dir.path().join("run");
    ok(&["train", "--data", s(&data), "--out", s(&out), "--epochs", "5", "--lambda-phys", "0"]);
    let rows = log_rows(&out);
    assert!(rows.iter().all(|r| r[3] == 0.0));
    let config = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(config.contains("lambda_phys = 0.0"));
}

#[test]
fn resume_continues_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d", 10.0, 20.0, true);
    let (full, part, resumed) = (dir.path().join("full"), dir.path().join("part"), dir.path().join("resumed"));
    let common = ["--data", s(&data), "--n-collocation", "200", "--seed", "5"];
    let run = |out: &Path, extra: &[&str]| {
        let mut args = vec!["train"];
        args.extend(common);
        args.extend(["--out", s(out)]);
        args.extend(extra);
        ok(&args);
    };
    run(&full, &["--epochs", "4"]);
    run(&part, &["--epochs", "3"]);
    let state = part.join("train_state.json");
    run(&resumed, &["--epochs", "4", "--resume", s(&state)]);
    for f in ["train_log.csv", "model.json", "train_state.json"] {
        assert_eq!(std::fs::read(full.join(f)).unwrap(), std::fs::read(resumed.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn divergence_exits_numerical_and_keeps_last_state() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d", 10.0, 20.0, false);
    let out = dir.path().join("run");
    let res = pidr(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&out),
        "--epochs",
        "10",
        "--learning-rate",
        "1e200",
    ]);
    assert_eq!(code(&res), 4, "{}", String::from_utf8_lossy(&res.stderr));
    let state = pidr::trainer::TrainState::load(&out.join("train_state.json")).unwrap();
    assert!(state.epoch >= 1 && state.epoch < 10);
    assert!(state.history.iter().all(|r| r.loss.total.is_finite()));
    assert_eq!(log_rows(&out).len(), state.epoch);
}

#[test]
fn training_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d", 5.0, 20.0, false);
    let out = dir.path().join("o");
    let res = pidr(&["train", "--data", s(&data), "--out", s(&out), "--batch-size", "0"]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("batch_size"));
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "learning_rat = 0.1\n").unwrap();
    let res = pidr(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&out)]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("learning_rat"));
}

#[test]
fn overfit_run_evaluates_below_ten_centimeters() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d", 10.0, 20.0, false);
    let run = dir.path().join("run");
    let cfg = dir.path().join("overfit.toml");
    std::fs::write(&cfg, "dropout = 0.0\nscheduler_patience = 500\n\n[loss]\nlambda_phys = 0.0\n").unwrap();
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run), "--epochs", "3000"]);
    let eval = dir.path().join("eval");
    ok(&["eval", "--model", s(&run.join("model.json")), "--data", s(&data), "--out", s(&eval)]);
    let m = read_metrics_csv(&eval.join("metrics.csv")).unwrap();
    assert!(m[0].prmse < 0.1, "PRMSE {}", m[0].prmse);
    assert_eq!(lines(&eval.join("predictions.csv")), 1 + 201);
}

#[test]
fn eval_schema_repeatability_and_shape_check() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d", 10.0, 20.0, true);
    let run = dir.path().join("run");
    ok(&["train", "--data", s(&data), "--out", s(&run), "--epochs", "2", "--n-collocation", "50"]);
    let model = run.join("model.json");
    let (e1, e2) = (dir.path().join("e1"), dir.path().join("e2"));
    ok(&["eval", "--model", s(&model), "--data", s(&data), "--out", s(&e1)]);
    ok(&["eval", "--model", s(&model), "--data", s(&data), "--out", s(&e2)]);
    let text = std::fs::read_to_string(e1.join("metrics.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "trajectory,PRMSE,MATE,TDE,FDE");
    for f in ["metrics.csv", "predictions.csv", "ate.csv", "track.csv"] {
        assert_eq!(std::fs::read(e1.join(f)).unwrap(), std::fs::read(e2.join(f)).unwrap(), "{f}");
    }

    let wrong = Network {
        params: NetworkParams::init_with_sizes(&[5, 4, 9], 0),
        stats: NormStats::identity(),
        seed: 0,
    };
    let bad = dir.path().join("bad.json");
    wrong.save(&bad).unwrap();
    let res = pidr(&["eval", "--model", s(&bad), "--data", s(&data), "--out", s(&dir.path().join("e3"))]);
    assert_eq!(code(&res), 2, "{}", String::from_utf8_lossy(&res.stderr));
}

fn write_report(path: &Path, rows: &[(&str, f64)]) {
    let mut text = format!("{METRICS_HEADER}\n");
    for (id, v) in rows {
        text.push_str(&format!("{id},{v},{v},{v},{v}\n"));
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn compare_prints_improvements_from_published_averages() {
    let dir = tempfile::tempdir().unwrap();
    let methods = [("3D-INS", 528.3), ("MoRPI", 363.0), ("MoRPI-PINN", 256.4), ("PiDR", 14.5)];
    let mut args = vec!["compare".to_string()];
    for (label, v) in methods {
        let p = dir.path().join(format!("{label}.csv"));
        write_report(&p, &[("avg", v)]);
        args.push("--report".into());
        args.push(format!("{label}={}", p.display()));
    }
    let out_dir = dir.path().join("cmp");
    args.extend(["--out".into(), out_dir.display().to_string()]);
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = ok(&argv);
    let table = String::from_utf8(out.stdout).unwrap();
    let prmse_rows: Vec<&str> = table
        .lines()
        .skip_while(|l| !l.starts_with("PRMSE"))
        .take(4)
        .collect();
    let improvements: Vec<&str> = prmse_rows.iter().map(|l| l.split_whitespace().last().unwrap()).collect();
    assert_eq!(improvements, ["97", "96", "94", "--"], "{table}");
    let order: Vec<usize> = ["3D-INS", "MoRPI ", "MoRPI-PINN", "PiDR"]
        .iter()
        .map(|l| table.find(l).unwrap())
        .collect();
    assert!(order.windows(2).all(|w| w[0] < w[1]));
    assert!(out_dir.join("comparison.csv").exists());
}

#[test]
fn compare_single_method_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    write_report(&a, &[("T1", 1.0), ("T2", 2.0)]);
    write_report(&b, &[("T1", 1.0), ("T3", 2.0)]);
    let out = ok(&["compare", "--report", &format!("only={}", a.display()), "--out", s(&dir.path().join("c1"))]);
    assert!(!String::from_utf8_lossy(&out.stdout).contains("Improvement"));
    let res = pidr(&[
        "compare",
        "--report",
        &format!("x={}", a.display()),
        "--report",
        &format!("y={}", b.display()),
        "--out",
        s(&dir.path().join("c2")),
    ]);
    assert_eq!(code(&res), 2);
}

#[test]
fn compare_draws_tracks() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d", 10.0, 50.0, true);
    let dr = dir.path().join("dr");
    ok(&["dr", "--data", s(&data), "--out", s(&dr)]);
    let out = dir.path().join("cmp");
    ok(&[
        "compare",
        "--report",
        &format!("INS={}", dr.join("metrics.csv").display()),
        "--track",
        &format!("INS={}", dr.join("track.csv").display()),
        "--out",
        s(&out),
    ]);
    let svg = std::fs::read_to_string(out.join("tracks.svg")).unwrap();
    assert!(svg.contains("<polyline") && svg.contains("INS"));
}
