use std::path::Path;
use std::process::{Command, Output};

use aerobat::eval::{read_episodes, read_trajectory, EpisodeLog};
use aerobat::learner::read_log;

const TINY: &str = r#"
[track]
fixture = "splits-single"

[env]
max_steps = 60

[curriculum]
goals_per_gate = 2

[ppo]
num_envs = 2
rollout_steps = 16
minibatch = 32
eval_episodes = 2

[ppo.network]
encoder = 8
hidden = [8]
"#;

fn aerobat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aerobat"))
        .args(args)
        .env("AEROBAT_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_eval_export_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let run = dir.path().join("run");
    let out = aerobat(&[
        "train", "--config", s(&cfg), "--mode", "proposed", "--seed", "2", "--out", s(&run), "--iterations", "2",
    ]);
    ok(&out);
    for f in ["config.toml", "train_log.csv", "checkpoint.bin", "reset_sets.json"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let log = read_log(run.join("train_log.csv")).unwrap();
    assert_eq!(log.len(), 3);
    assert_eq!(log.last().unwrap().env_steps, 64);

    let ev = dir.path().join("eval");
    let ck = run.join("checkpoint.bin");
    let out = aerobat(&[
        "eval", "--checkpoint", s(&ck), "--track", "splits-single", "--episodes", "3", "--gate-speed", "0.5", "--out", s(&ev),
    ]);
    ok(&out);
    let metrics: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(metrics["episodes"], 3);
    let eps = read_episodes(ev.join("episodes.jsonl")).unwrap();
    assert_eq!(eps.len(), 3);
    assert!(eps.iter().all(|e| e.gate_speed == 0.5));

    let csv = dir.path().join("traj.csv");
    ok(&aerobat(&["export", "--episode", s(&ev.join("episode_0000.json")), "--out", s(&csv)]));
    let rows = read_trajectory(&csv).unwrap();
    let log = EpisodeLog::load(ev.join("episode_0000.json")).unwrap();
    assert_eq!(rows.len(), log.record.steps);
    assert_eq!(rows.len(), log.trajectory.len());

    // same seed, same log
    let again = dir.path().join("again");
    ok(&aerobat(&[
        "train", "--config", s(&cfg), "--mode", "proposed", "--seed", "2", "--out", s(&again), "--iterations", "2",
    ]));
    assert_eq!(
        std::fs::read(run.join("train_log.csv")).unwrap(),
        std::fs::read(again.join("train_log.csv")).unwrap()
    );
}

#[test]
fn ablate_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let matrix = dir.path().join("matrix.toml");
    std::fs::write(
        &matrix,
        r#"
config = "tiny.toml"
modes = ["sp", "proposed"]
tracks = ["splits-single"]
seeds = [1]
gate_speeds = [0.0]
final_episodes = 2
"#,
    )
    .unwrap();
    let report = dir.path().join("report.json");
    ok(&aerobat(&["ablate", "--matrix", s(&matrix), "--budget", "64", "--out", s(&report)]));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["cells"].as_array().unwrap().len(), 2);
}

#[test]
fn errors_map_to_categories() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("o");

    let out = aerobat(&["train", "--config", "/nonexistent.toml", "--mode", "sp", "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error [io]"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[dynamics]\ndt = -1.0\n").unwrap();
    let out = aerobat(&["train", "--config", s(&bad), "--mode", "sp", "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error [config]"));

    let ck = dir.path().join("ck.bin");
    std::fs::write(&ck, b"not a checkpoint").unwrap();
    let out = aerobat(&["eval", "--checkpoint", s(&ck), "--track", "splits"]);
    assert_eq!(out.status.code(), Some(4));

    let out = aerobat(&["train", "--mode", "nope", "--out", s(&out_dir)]);
    assert!(!out.status.success());
}
