use std::path::Path;
use std::process::{Command, Output};

fn semnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semnet"))
        .args(args)
        .env("SEMNET_LOG", "error")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &str = r#"{
  "seed": 3,
  "retrieval_ks": [1, 3],
  "synthetic": {"num_items": 20, "frames_per_item": 16, "feature_dim": 8},
  "train": {"epochs": 2, "batch_size": 4, "segments": 8, "model_dim": 8, "word_dim": 8,
            "descriptors": 4, "memory_slots": 4, "conv_filters": [8]}
}"#;

fn write_config(dir: &Path) -> String {
    let path = dir.join("c.json");
    std::fs::write(&path, TINY).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn unknown_subcommand_prints_usage_and_exits_1() {
    let o = semnet(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).to_lowercase().contains("usage"));
}

#[test]
fn missing_config_exits_1_naming_the_path() {
    let o = semnet(&["train", "--config", "/no/such/config.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/no/such/config.json"));
}

#[test]
fn unknown_config_key_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"train": {"learning_rat": 0.1}}"#).unwrap();
    let o = semnet(&["gen-data", "--config", path.to_str().unwrap(), "--out", "x"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("learning_rat"));
}

#[test]
fn full_pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let mut checkpoints = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let out_s = out.to_str().unwrap();
        let g = semnet(&["gen-data", "--config", &cfg, "--out", out_s]);
        assert!(g.status.success(), "{}", stderr(&g));
        let manifest = out.join("manifest.jsonl");
        let m = manifest.to_str().unwrap();
        assert_eq!(stdout(&g).trim(), m);

        for variant in ["ssm", "slm", "semnet"] {
            let t = semnet(&["train", "--config", &cfg, "--manifest", m, "--out", out_s, "--variant", variant]);
            assert!(t.status.success(), "{variant}: {}", stderr(&t));
            assert!(out.join(format!("{variant}.vsnt")).exists());
            for task in ["genre", "rating", "retrieval"] {
                let e = semnet(&[
                    "eval", "--config", &cfg, "--manifest", m, "--out", out_s, "--variant", variant, "--task", task,
                ]);
                assert!(e.status.success(), "{variant}/{task}: {}", stderr(&e));
                assert!(out.join(format!("results-{variant}-{task}.json")).exists());
            }
        }
        let e = semnet(&["embed", "--config", &cfg, "--manifest", m, "--out", out_s, "--variant", "semnet"]);
        assert!(e.status.success(), "{}", stderr(&e));
        assert!(out.join("embeddings-semnet.vsnt").exists());
        checkpoints.push(out);
    }
    let (a, b) = (&checkpoints[0], &checkpoints[1]);
    for file in ["manifest.jsonl", "features/item0003.vsnt", "plots/item0003.txt", "semnet.vsnt", "semnet.vsnt.json", "ssm.vsnt", "embeddings-semnet.vsnt"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }

    let results: Vec<String> = ["ssm", "slm", "semnet"]
        .iter()
        .flat_map(|v| ["genre", "rating"].map(|t| a.join(format!("results-{v}-{t}.json")).to_str().unwrap().to_string()))
        .collect();
    let args: Vec<&str> = std::iter::once("report").chain(results.iter().map(String::as_str)).collect();
    let r = semnet(&args);
    assert!(r.status.success(), "{}", stderr(&r));
    let table = stdout(&r);
    assert_eq!(table.lines().count(), 5, "{table}");
    for name in ["SSM", "SLM", "Video SemNet", "Genre", "Rating"] {
        assert!(table.contains(name), "{table}");
    }
}

#[test]
fn report_rejects_malformed_results() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    std::fs::write(&path, r#"{"task": "genre"}"#).unwrap();
    let o = semnet(&["report", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn memtrace_records_and_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().to_str().unwrap();
    let o = semnet(&["memtrace", "--config", &cfg, "--out", out, "--cycles", "20"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("verified 20 cycles, 20 writes"));
    let trace = dir.path().join("memtrace.jsonl");
    let o = semnet(&["memtrace", "--config", &cfg, "--trace", trace.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));

    // shifting one write target breaks the age rules
    let text = std::fs::read_to_string(&trace).unwrap();
    let bad = text.replacen("\"write_index\":2", "\"write_index\":3", 1);
    assert_ne!(bad, text);
    std::fs::write(&trace, bad).unwrap();
    let o = semnet(&["memtrace", "--config", &cfg, "--trace", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_soft_read_passes() {
    let o = semnet(&["gradcheck", "--variant", "semnet", "--read", "soft"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("max relative error"));
}
