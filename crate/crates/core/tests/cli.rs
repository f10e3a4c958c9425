use std::path::Path;
use std::process::{Command, Output};

use crossview::datasets::{load_manifest, read_embeddings};

fn crossview(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crossview"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

const SMALL: &str = "synth.n_pairs=200
synth.latent_dim=8
synth.view_dim=16
train.epochs=3
train.hidden_dim=16
train.embed_dim=8
sampler.batch_size=32
sampler.pool_size=16
sampler.picks_per_anchor=8
sampler.gps_epochs=1
sampler.refresh_every=1
";

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("small.cfg"), SMALL).unwrap();

    let out = crossview(&["gen-synth", "--config", "small.cfg", "--out", "data"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = load_manifest(d.join("data/manifest.jsonl")).unwrap();
    assert_eq!(manifest.len(), 200);
    assert_eq!(read_embeddings(d.join("data/query.emb")).unwrap().dim(), 16);

    let out = crossview(
        &[
            "plan", "--config", "small.cfg", "--embeddings", "data/query.emb", "data/reference.emb", "--epoch", "2",
            "--out", "plan.jsonl",
        ],
        d,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let plan = std::fs::read_to_string(d.join("plan.jsonl")).unwrap();
    let mut seen: Vec<usize> = plan
        .lines()
        .flat_map(|l| serde_json::from_str::<Vec<usize>>(l).unwrap())
        .collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..200).collect::<Vec<_>>());

    let out = crossview(&["train", "--config", "small.cfg", "--data", "data", "--out", "model"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let history = std::fs::read_to_string(d.join("model/history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 3);

    let out = crossview(
        &[
            "eval", "--query", "model/query.emb", "--ref", "model/reference.emb", "--manifest",
            "data/manifest.jsonl", "--out", "report.json",
        ],
        d,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let from_eval: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    let from_train: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("model/report.json")).unwrap()).unwrap();
    assert_eq!(from_eval, from_train);
    assert_eq!(from_eval["n_queries"], 20);
}

#[test]
fn gradcheck_and_ablate_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("small.cfg"), SMALL).unwrap();
    let out = crossview(&["gradcheck", "--config", "small.cfg"], d);
    assert!(out.status.success());
    let rep: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(rep["max_rel_error"].as_f64().unwrap() <= 1e-6);

    let out = crossview(&["ablate", "--config", "small.cfg", "--seeds", "2", "--out", "table.csv"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(d.join("table.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(d.join("table.json").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(crossview(&["gen-synth", "--config", "absent.cfg", "--out", "x"], d).status.code(), Some(2));

    std::fs::write(d.join("odd.cfg"), "sampler.picks_per_anchor=5\n").unwrap();
    assert_eq!(crossview(&["gen-synth", "--config", "odd.cfg", "--out", "x"], d).status.code(), Some(1));

    std::fs::write(d.join("typo.cfg"), "train.epoch=3\n").unwrap();
    let out = crossview(&["gen-synth", "--config", "typo.cfg", "--out", "x"], d);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("train.epoch") && err.contains("line 1"), "{err}");

    std::fs::write(d.join("bad.emb"), b"NOPE0000000000000000").unwrap();
    std::fs::write(d.join("m.jsonl"), "").unwrap();
    let out = crossview(&["eval", "--query", "bad.emb", "--ref", "bad.emb", "--manifest", "m.jsonl", "--out", "r.json"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad magic"));

    assert_eq!(crossview(&["no-such-command"], d).status.code(), Some(1));
}
