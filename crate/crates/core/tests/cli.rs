mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use trajmem::config::RunConfig;
use trajmem::pipeline::Report;
use trajmem::scenario::dataset::Manifest;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trajmem"))
}

fn toy_config(dir: &Path) -> PathBuf {
    let (mut model, mut scenario) = common::small_configs();
    model.horizon = 6;
    scenario.horizon = 6;
    scenario.sim.frames = 9;
    let mut cfg = RunConfig {
        model,
        scenario,
        ..RunConfig::default()
    };
    cfg.eval.closed_loop_episodes_per_domain = 1;
    cfg.sync_seeds();
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_json().unwrap()).unwrap();
    path
}

fn run(cfg: &Path, out: &Path, args: &[&str]) -> Output {
    bin()
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn ok(o: Output) -> String {
    assert_eq!(code(&o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn sha(path: &Path) -> String {
    trajmem::rng::sha256_hex(&std::fs::read(path).unwrap())
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&bin().arg("frobnicate").output().unwrap()), 2);
    assert_eq!(code(&bin().args(["--precision", "f16", "report"]).output().unwrap()), 2);
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"model": {"d_model": 0}}"#).unwrap();
    assert_eq!(code(&run(&bad, dir.path(), &["gen-data"])), 2);
}

#[test]
fn missing_or_corrupt_artifacts_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path());
    let out = dir.path().join("run");
    assert_eq!(code(&run(&cfg, &out, &["build-priors"])), 3);
    let unknown = dir.path().join("unknown.json");
    std::fs::write(&unknown, r#"{"modle": {}}"#).unwrap();
    assert_eq!(code(&run(&unknown, &out, &["gen-data"])), 3);

    ok(run(&cfg, &out, &["gen-data"]));
    let rec = std::fs::read_dir(out.join("dataset/episodes"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let mut bytes = std::fs::read(&rec).unwrap();
    let n = bytes.len();
    bytes[n / 2] ^= 0xff;
    std::fs::write(&rec, bytes).unwrap();
    assert_eq!(code(&run(&cfg, &out, &["train-wm"])), 3);
}

#[test]
fn gen_data_manifest_and_idempotence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path());
    let out = dir.path().join("run");
    let stdout = ok(run(&cfg, &out, &["gen-data"]));
    assert!(stdout.contains("dataset manifest sha256"));
    let manifest: Manifest =
        serde_json::from_slice(&std::fs::read(out.join("dataset/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.n_domains, 3);
    let domains: std::collections::BTreeSet<usize> = manifest.episodes.iter().map(|e| e.domain_id).collect();
    assert_eq!(domains.len(), 3);
    let first = sha(&out.join("dataset/manifest.json"));

    // existing output without --force is refused
    let again = run(&cfg, &out, &["gen-data"]);
    assert_eq!(code(&again), 2);
    ok(run(&cfg, &out, &["gen-data", "--force"]));
    assert_eq!(sha(&out.join("dataset/manifest.json")), first);

    let empty = dir.path().join("empty");
    ok(run(&cfg, &empty, &["gen-data", "--episodes", "0"]));
    let manifest: Manifest =
        serde_json::from_slice(&std::fs::read(empty.join("dataset/manifest.json")).unwrap()).unwrap();
    assert!(manifest.episodes.is_empty());

    let other = dir.path().join("other");
    ok(run(&cfg, &other, &["gen-data", "--seed", "1"]));
    assert_ne!(sha(&other.join("dataset/manifest.json")), first);
}

#[test]
fn toy_pipeline_runs_end_to_end_and_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path());
    let out = dir.path().join("run");
    ok(run(&cfg, &out, &["gen-data"]));
    ok(run(&cfg, &out, &["train-wm"]));
    let priors_out = ok(run(&cfg, &out, &["build-priors"]));
    assert!(priors_out.contains("cluster sizes"));
    ok(run(&cfg, &out, &["train-policy"]));
    let table = ok(run(&cfg, &out, &["eval"]));
    for col in ["1s", "2s", "3s", "avg"] {
        assert!(table.contains(col), "{table}");
    }

    let csv = std::fs::read_to_string(out.join("policy_loss.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "step,epoch,lr,total,traj_final,traj_init,con,recon"
    );
    let report: Report = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    let closed = report.evaluation.closed_loop.unwrap();
    assert_eq!(closed.rows.len(), 3);
    assert!((0.0..=100.0).contains(&closed.mini_pdms));
    for key in ["dataset", "priors", "policy"] {
        assert_eq!(report.provenance[key].len(), 64);
    }
    assert!(report.evaluation.open_loop.is_some());

    // a second run directory from the same config and seed matches byte for byte
    let twin = dir.path().join("twin");
    for cmd in ["gen-data", "train-wm", "build-priors", "train-policy", "eval"] {
        ok(run(&cfg, &twin, &[cmd]));
    }
    for f in [
        "world_model.ckpt",
        "behavior_set.bin",
        "priors.bin",
        "policy.ckpt",
        "report.json",
    ] {
        assert_eq!(sha(&out.join(f)), sha(&twin.join(f)), "{f}");
    }

    let printed = ok(run(&cfg, &out, &["report"]));
    assert!(printed.contains("avg"));

    // priors built from another seed's world model do not match this run's policy
    let stale = dir.path().join("stale");
    for cmd in ["gen-data", "train-wm", "build-priors"] {
        ok(run(&cfg, &stale, &["--seed", "3", cmd]));
    }
    std::fs::copy(stale.join("priors.bin"), out.join("priors.bin")).unwrap();
    assert_eq!(code(&run(&cfg, &out, &["eval", "--force"])), 3);
}

#[test]
fn resumed_world_model_matches_a_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = toy_config(dir.path());
    let mut cfg: RunConfig = serde_json::from_str(&std::fs::read_to_string(&cfg_path).unwrap()).unwrap();
    cfg.model.world_model_epochs = 2;
    std::fs::write(&cfg_path, cfg.to_json().unwrap()).unwrap();
    let a = dir.path().join("a");
    ok(run(&cfg_path, &a, &["gen-data"]));
    ok(run(&cfg_path, &a, &["train-wm"]));
    let b = dir.path().join("b");
    ok(run(&cfg_path, &b, &["gen-data"]));
    ok(run(&cfg_path, &b, &["train-wm", "--stop-after", "1"]));
    let partial = b.join("partial.ckpt");
    std::fs::rename(b.join("world_model.ckpt"), &partial).unwrap();
    ok(run(&cfg_path, &b, &["train-wm", "--resume", partial.to_str().unwrap()]));
    assert_eq!(sha(&a.join("world_model.ckpt")), sha(&b.join("world_model.ckpt")));
}

#[test]
fn zero_epoch_policy_and_ablation_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = toy_config(dir.path());
    let out = dir.path().join("run");
    ok(run(&cfg_path, &out, &["gen-data"]));
    ok(run(&cfg_path, &out, &["train-wm"]));
    ok(run(&cfg_path, &out, &["build-priors"]));
    let table = ok(run(&cfg_path, &out, &["ablate", "--open"]));
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("ablation/summary.json")).unwrap()).unwrap();
    let ids: Vec<u64> = summary["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["id"].as_u64().unwrap())
        .collect();
    assert_eq!(ids, vec![2, 3, 4, 5]);
    assert!(table.lines().count() >= 5);

    let mut cfg: RunConfig = serde_json::from_str(&std::fs::read_to_string(&cfg_path).unwrap()).unwrap();
    cfg.model.world_model_epochs = 0;
    let zero = dir.path().join("zero.json");
    std::fs::write(&zero, cfg.to_json().unwrap()).unwrap();
    let z = dir.path().join("z");
    ok(run(&zero, &z, &["gen-data"]));
    ok(run(&zero, &z, &["train-wm"]));
    let ck = trajmem::nn::Checkpoint::load(&z.join("world_model.ckpt")).unwrap();
    let (state, _, done) = trajmem::world_model::from_checkpoint::<f32>(&ck).unwrap();
    assert_eq!(done, 0);
    assert_eq!(state, trajmem::world_model::WorldModelState::init(&cfg.model).unwrap());
}
