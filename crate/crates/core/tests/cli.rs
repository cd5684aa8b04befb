use std::path::Path;
use std::process::{Command, Output};

use spectrakan::config::RunConfig;
use spectrakan::data::TrajectorySet;
use spectrakan::model::SpectraKan;

const TINY: &str = "\
seed = 7
[data]
grid = 16
frames = 6
samples = 10
[model]
width = 4
attn_dim = 4
token_dim = 2
layers = 1
coarse_layers = 1
modes = 3
[train]
epochs = 2
[eval]
horizon = 3
[verify]
lemma_trials = 5
lemma_samples = 2000
theorem_pairs = 10
theorem_probes = 20
";

fn spectrakan(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spectrakan"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.ini"), TINY).unwrap();
    dir
}

fn ok(out: &Output) {
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn zero_epochs_saves_the_initialization() {
    let dir = workspace();
    let d = dir.path();
    ok(&spectrakan(d, &["--config", "run.ini", "gen-data"]));
    ok(&spectrakan(d, &["--config", "run.ini", "--set", "train.epochs=0", "train"]));
    let saved = SpectraKan::load(&d.join("out/model.skds")).unwrap();
    let cfg = RunConfig::load(&d.join("out/resolved_config.ini")).unwrap();
    let fresh = SpectraKan::new(cfg.model.clone(), cfg.model_seed()).unwrap();
    assert_eq!(saved.params.flatten(), fresh.params.flatten());
}

#[test]
fn eval_of_identical_files_is_all_zero() {
    let dir = workspace();
    let d = dir.path();
    ok(&spectrakan(d, &["--config", "run.ini", "gen-data"]));
    ok(&spectrakan(d, &["--config", "run.ini", "eval", "--pred", "out/test.skds", "--truth", "out/test.skds"]));
    let csv = std::fs::read_to_string(d.join("out/metrics.csv")).unwrap();
    let mut rows = csv.lines();
    rows.next();
    for row in rows {
        for value in row.split(',').skip(3) {
            assert_eq!(value.parse::<f64>().unwrap(), 0.0, "row {row}");
        }
    }
}

#[test]
fn verify_writes_three_passing_reports() {
    let dir = workspace();
    let d = dir.path();
    ok(&spectrakan(d, &["--config", "run.ini", "verify"]));
    for name in ["verify_edge_lipschitz", "verify_modulation", "verify_quadrature"] {
        let csv = std::fs::read_to_string(d.join(format!("out/{name}.csv"))).unwrap();
        assert!(csv.lines().count() > 1, "{name} is empty");
        assert!(d.join(format!("out/{name}.txt")).exists());
    }
}

#[test]
fn exit_codes() {
    let dir = workspace();
    let d = dir.path();
    assert_eq!(spectrakan(d, &["no-such-command"]).status.code(), Some(2));
    assert_eq!(spectrakan(d, &["--config", "missing.ini", "gen-data"]).status.code(), Some(2));
    assert_eq!(spectrakan(d, &["--config", "run.ini", "--set", "model.nonsense=1", "gen-data"]).status.code(), Some(3));
    ok(&spectrakan(d, &["--config", "run.ini", "gen-data"]));
    let wrong = spectrakan(d, &["--config", "run.ini", "--set", "model.channels=3", "train"]);
    assert_eq!(wrong.status.code(), Some(4), "stderr: {}", String::from_utf8_lossy(&wrong.stderr));
}

#[test]
fn single_thread_runs_are_bit_identical() {
    let run = || {
        let dir = workspace();
        let d = dir.path();
        for cmd in ["gen-data", "train"] {
            ok(&spectrakan(d, &["--config", "run.ini", "--threads", "1", cmd]));
        }
        ok(&spectrakan(d, &["--config", "run.ini", "--threads", "1", "rollout"]));
        let model = std::fs::read(d.join("out/model.skds")).unwrap();
        let roll = TrajectorySet::load(&d.join("out/rollout.skds")).unwrap();
        (model, roll.data().to_vec(), std::fs::read_to_string(d.join("out/loss.csv")).unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn eval_and_plots_after_training() {
    let dir = workspace();
    let d = dir.path();
    for cmd in ["gen-data", "train", "eval", "rollout"] {
        ok(&spectrakan(d, &["--config", "run.ini", cmd]));
    }
    for name in ["metrics_one_step.csv", "metrics_persistence.csv", "metrics_rollout.csv", "rollout_error.csv"] {
        assert!(d.join("out").join(name).exists(), "{name}");
    }
    ok(&spectrakan(
        d,
        &["--out", "plots", "export-plots", "--truth", "out/rollout_truth.skds", "--pred", "out/rollout.skds", "--loss", "out/loss.csv"],
    ));
    for name in ["truth_field.png", "pred_field.png", "abs_error_field.png", "error_curve.png", "loss_curve.png"] {
        let img = image::open(d.join("plots").join(name)).unwrap();
        assert!(img.width() > 0, "{name}");
    }
}
