//! End-to-end tests of the `prefalign` binary on a miniature configuration.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_prefalign"))
}

const TINY: &[&str] = &[
    "--set", "width=8",
    "--set", "height=8",
    "--set", "hidden=16",
    "--set", "sft_steps=30",
    "--set", "batch=4",
    "--set", "n_candidates=4",
    "--set", "steps=10",
];

fn run_ok(args: &[&str]) {
    let out = bin().args(args).args(TINY).output().unwrap();
    assert!(
        out.status.success(),
        "command {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn pipeline_smoke_and_failure_modes() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let p = |name: &str| root.join(name).to_str().unwrap().to_string();

    // make-data twice with the same seed produces identical files.
    run_ok(&["make-data", "--out", &p("data"), "--seed", "5", "--tasks", "12"]);
    run_ok(&["make-data", "--out", &p("data2"), "--seed", "5", "--tasks", "12"]);
    let a = std::fs::read(root.join("data/tasks.pft")).unwrap();
    let b = std::fs::read(root.join("data2/tasks.pft")).unwrap();
    assert_eq!(a, b);

    // Full pipeline exits 0 and writes artifacts plus resolved configs.
    let tasks = p("data/tasks.pft");
    run_ok(&["pretrain", "--out", &p("pre"), "--tasks-file", &tasks]);
    run_ok(&[
        "gen-candidates", "--out", &p("cand"),
        "--checkpoint", &p("pre/pretrained.pfc"), "--tasks-file", &tasks,
    ]);
    run_ok(&[
        "build-pairs", "--out", &p("pairs"),
        "--checkpoint", &p("pre/pretrained.pfc"), "--tasks-file", &tasks,
        "--set", "selector=ensemble",
    ]);
    run_ok(&[
        "dpo-train", "--out", &p("dpo"),
        "--checkpoint", &p("pre/pretrained.pfc"), "--pairs", &p("pairs/pairs.pfd"),
    ]);
    run_ok(&[
        "eval", "--out", &p("ev"),
        "--checkpoint", &p("dpo/dpo.pfc"), "--tasks-file", &tasks,
    ]);
    for artifact in [
        "pre/pretrained.pfc", "pre/sft_loss.csv", "pre/run.cfg",
        "cand/candidate_scores.csv", "pairs/pairs.pfd",
        "dpo/dpo.pfc", "dpo/dpo_loss.csv", "ev/eval.csv",
    ] {
        assert!(root.join(artifact).exists(), "missing {artifact}");
    }

    // Mismatched generator tags: exit 1, category tag-mismatch, partial
    // outputs removed.
    let out = bin()
        .args(["pretrain", "--out", &p("prefm"), "--tasks-file", &tasks,
               "--set", "generator=fm"])
        .args(TINY)
        .output()
        .unwrap();
    assert!(out.status.success());
    let out = bin()
        .args(["dpo-train", "--out", &p("bad"),
               "--checkpoint", &p("prefm/pretrained.pfc"),
               "--pairs", &p("pairs/pairs.pfd")])
        .args(TINY)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("category=tag-mismatch"), "stderr: {stderr}");
    assert!(!root.join("bad/dpo.pfc").exists());

    // Unknown config key rejected with category=config.
    let out = bin()
        .args(["make-data", "--out", &p("unk"), "--set", "bogus_key=1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("category=config"));
}

#[test]
fn resolved_config_reproduces_run() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let p = |name: &str| root.join(name).to_str().unwrap().to_string();
    run_ok(&["make-data", "--out", &p("a"), "--seed", "11", "--tasks", "6"]);
    // Re-running purely from the persisted resolved config matches exactly.
    let out = bin()
        .args(["make-data", "--out", &p("b"), "--config", &p("a/run.cfg")])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(
        std::fs::read(root.join("a/tasks.pft")).unwrap(),
        std::fs::read(root.join("b/tasks.pft")).unwrap()
    );
    assert!(Path::new(&p("b/run.cfg")).exists());
}
