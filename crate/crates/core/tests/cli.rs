mod common;

use std::path::Path;
use std::process::{Command, Output};

use latent_concepts::report::load_concept_net;
use common::{tree_digest, write_toy_config};

fn run(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_latent-concepts"))
        .arg("--config")
        .arg(config)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn pipeline_produces_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_toy_config(dir.path());
    let o = run(&config, &["pipeline", "--mock-llm"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let out = dir.path().join("out");
    for rel in [
        "dataset.json",
        "clusters/layer_00.json",
        "clusters/layer_06.map.txt",
        "labels/layer_06.json",
        "probes/layer_00.json",
        "probes/layer_00.md",
        "neurons/layer_06.json",
        "neurons/alignment_layer_00.md",
        "evaluation/agreement.json",
        "evaluation/agreement.md",
        "concept_net.jsonl",
        "report/wordclouds/layer_00/c0.svg",
        "logs/llm_audit.jsonl",
    ] {
        assert!(out.join(rel).is_file(), "missing {rel}");
    }
    let net = load_concept_net(&out.join("concept_net.jsonl")).unwrap();
    assert_eq!(net.len(), 40);
    assert!(net.iter().all(|r| r.label_text.starts_with("Group: ")));
}

#[test]
fn stages_run_individually_match_pipeline() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ca = write_toy_config(a.path());
    let cb = write_toy_config(b.path());
    assert!(run(&ca, &["pipeline", "--mock-llm"]).status.success());
    for stage in ["ingest", "synth-embeddings", "cluster", "annotate", "probe", "neurons", "evaluate", "export", "report"] {
        let o = run(&cb, &[stage, "--mock-llm"]);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    assert_eq!(tree_digest(&a.path().join("out")), tree_digest(&b.path().join("out")));
}

#[test]
fn missing_prerequisite_names_the_producing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_toy_config(dir.path());
    let o = run(&config, &["probe"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("ingest"), "{}", stderr(&o));

    assert!(run(&config, &["ingest"]).status.success());
    let o = run(&config, &["cluster"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("synth-embeddings"), "{}", stderr(&o));
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    assert_eq!(run(&missing, &["ingest"]).status.code(), Some(2));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "unknown_key = 1\n").unwrap();
    assert_eq!(run(&bad, &["ingest"]).status.code(), Some(2));

    let config = write_toy_config(dir.path());
    assert_eq!(run(&config, &["ingest", "--jobs", "0"]).status.code(), Some(2));
    assert!(run(&config, &["ingest"]).status.success());
    assert!(run(&config, &["synth-embeddings"]).status.success());
    let o = run(&config, &["cluster", "--k", "100000"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn overrides_select_layers_and_k() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_toy_config(dir.path());
    let o = run(&config, &["pipeline", "--mock-llm", "--layer", "6", "--k", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    assert!(!out.join("clusters/layer_00.json").exists());
    let net = load_concept_net(&out.join("concept_net.jsonl")).unwrap();
    assert_eq!(net.len(), 7);
    assert!(net.iter().all(|r| r.layer == 6));
}
