use std::path::Path;
use std::process::Command;

use trajaware::config::{EvalMode, PolicyKind, RunConfig};
use trajaware::sim::{CongestionMode, ObservationMode};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_trajaware"));
    c.env("TRAJAWARE_THREADS", "1");
    c
}

fn tiny_config(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.output_dir = dir.join("run");
    cfg.world.maps = 3;
    cfg.world.holdout = 2;
    cfg.world.duration = 90;
    cfg.policy.hidden = 8;
    cfg.policy.d_h = 8;
    cfg.train.episodes = 4;
    cfg.train.batch_size = 4;
    cfg.train.learning_starts = 4;
    cfg.train.checkpoint_every = 2;
    cfg.predictor.hidden = 8;
    cfg.predictor.epochs = 1;
    cfg.predictor.batches_per_epoch = 2;
    cfg.predictor.batch_size = 4;
    cfg.eval.episodes = 12;
    cfg
}

fn write_config(dir: &Path, cfg: &RunConfig) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    path
}

#[test]
fn invalid_field_reports_its_path_and_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &tiny_config(dir.path()));
    let out = bin()
        .args(["generate", "-c"])
        .arg(&cfg)
        .args(["--set", "policy.actions.k_max=0"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("policy.actions.k_max"), "{err}");
}

#[test]
fn missing_config_file_exits_3() {
    let out = bin().args(["generate", "-c", "/nonexistent/run.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn unknown_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "seed = 1\n[world]\nmapz = 4\n").unwrap();
    let out = bin().args(["generate", "-c"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn diverging_training_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.train.episodes = 40;
    cfg.train.optimiser.learning_rate = 1e6;
    cfg.train.optimiser.clip_norm = None;
    cfg.train.rewards.delivered = 1e5;
    let path = write_config(dir.path(), &cfg);
    let out = bin().args(["train-policy", "-c"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn generate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = tiny_config(dir.path());
    a.output_dir = dir.path().join("a");
    let mut b = a.clone();
    b.output_dir = dir.path().join("b");
    for cfg in [&a, &b] {
        let path = write_config(dir.path(), cfg);
        assert!(bin().args(["generate", "-c"]).arg(&path).output().unwrap().status.success());
    }
    let files = ["city0_map.json", "city1_trace.csv", "city2_routes.json"];
    for f in files {
        let x = std::fs::read(a.output_dir.join("data").join(f)).unwrap();
        let y = std::fs::read(b.output_dir.join("data").join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn full_pipeline_round_trips_through_the_echo() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.eval.modes = vec![
        EvalMode {
            observation: ObservationMode::Complete,
            congestion: CongestionMode::NoCongestion,
        },
        EvalMode {
            observation: ObservationMode::Partial { f: 2 },
            congestion: CongestionMode::Congestion,
        },
    ];
    let path = write_config(dir.path(), &cfg);
    let run = &cfg.output_dir;

    let out = bin().args(["eval", "-c"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(1), "eval before training must fail cleanly");

    for cmd in ["train-predictor", "train-policy"] {
        let out = bin().arg(cmd).arg("-c").arg(&path).output().unwrap();
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(run.join("predictor.json").exists());
    assert!(run.join("qnet.json").exists());
    assert!(run.join("train_log.csv").exists());

    let out = bin().args(["eval", "-c"]).arg(&path).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first = std::fs::read(run.join("summary.json")).unwrap();
    let echo = run.join("config.echo.json");
    let reloaded = RunConfig::load(&echo).unwrap();
    assert_eq!(reloaded.eval.checkpoint, Some(run.join("qnet.json")));

    let echo_copy = dir.path().join("echo.json");
    std::fs::copy(&echo, &echo_copy).unwrap();
    let out = bin().args(["eval", "-c"]).arg(&echo_copy).output().unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read(run.join("summary.json")).unwrap(), first);

    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("complete/no_congestion") && stdout.contains("partial_f2/congestion"), "{stdout}");
    let csv = std::fs::read_to_string(run.join("results_configured_complete_no_congestion.csv")).unwrap();
    assert!(csv.starts_with(trajaware::sim::RESULTS_HEADER));
}

#[test]
fn oracle_eval_needs_no_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.eval.policy = PolicyKind::Oracle;
    let path = write_config(dir.path(), &cfg);
    let out = bin().args(["eval", "-c"]).arg(&path).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn overrides_apply_in_order() {
    let mut cfg = RunConfig::default();
    cfg.apply_override("train.gamma=0.9").unwrap();
    cfg.apply_override("eval.policy=oracle").unwrap();
    cfg.apply_override("output_dir=runs/x").unwrap();
    assert_eq!(cfg.train.gamma, 0.9);
    assert_eq!(cfg.eval.policy, PolicyKind::Oracle);
    assert_eq!(cfg.output_dir, Path::new("runs/x"));
    assert!(cfg.apply_override("nope.field=1").is_err());
    assert!(cfg.apply_override("no_equals").is_err());
}
