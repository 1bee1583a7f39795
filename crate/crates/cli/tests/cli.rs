//! End-to-end tests of the `triphase` binary: every subcommand, the exit
//! code contract, and the --force collision rule.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn triphase(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_triphase"))
        .current_dir(dir)
        .env("TRIPHASE_OUT", dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_experiment(dir: &Path) {
    fs::write(
        dir.join("exp.toml"),
        r#"
[experiment]
variants = ["ft"]
seeds = [1]

[data]
path = "corpus.jsonl"
max_vocab = 400

[model]
hidden_dim = 16
n_blocks = 1
n_heads = 2
max_positions = 24
ffn_mult = 2
decoder_blocks = 1

[training]
epochs_dae = 1
epochs_cl = 1
max_epochs_ft = 4
patience_ft = 2
batch_size_dae = 8
batch_size_cl = 8
batch_size_ft = 8
"#,
    )
    .unwrap();
}

fn gen_corpus(dir: &Path) {
    let out = triphase(
        dir,
        &[
            "gen-synth",
            "--classes",
            "3",
            "--sizes",
            "30,20,10",
            "--vocab",
            "300",
            "--signal",
            "0.9",
            "--seed",
            "3",
            "-o",
            "corpus.jsonl",
        ],
    );
    assert!(out.status.success(), "{out:?}");
}

#[test]
fn gen_synth_writes_loadable_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    gen_corpus(dir.path());
    let content = fs::read_to_string(dir.path().join("corpus.jsonl")).unwrap();
    assert_eq!(content.lines().count(), 60);
    assert!(content.lines().next().unwrap().contains("\"labels\""));
}

#[test]
fn gen_synth_rejects_tiny_vocab_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = triphase(
        dir.path(),
        &["gen-synth", "--classes", "3", "--sizes", "5,5,5", "--vocab", "10", "-o", "x.jsonl"],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn stats_prints_split_table() {
    let dir = tempfile::tempdir().unwrap();
    gen_corpus(dir.path());
    let out = triphase(dir.path(), &["stats", "corpus.jsonl"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("train"));
    assert!(text.contains("Avg. Length"));
    let json = triphase(dir.path(), &["stats", "corpus.jsonl", "--json"]);
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&json)).unwrap();
    assert!(parsed["train"]["count"].as_u64().unwrap() > 0);
}

#[test]
fn run_refuses_rerun_without_force() {
    let dir = tempfile::tempdir().unwrap();
    gen_corpus(dir.path());
    write_experiment(dir.path());

    let first = triphase(dir.path(), &["run", "-c", "exp.toml", "--out", "runs"]);
    assert!(first.status.success(), "{first:?}");
    let manifest = dir.path().join("runs/ft/seed1/manifest.json");
    assert!(manifest.exists());
    let parsed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(parsed["status"], "complete");
    assert_eq!(parsed["test_reads_before_eval"], 0);
    assert!(dir.path().join("runs/ft/seed1/log.txt").exists());
    assert!(dir.path().join("runs/ft/seed1/phase_ft.ckpt").exists());

    let again = triphase(dir.path(), &["run", "-c", "exp.toml", "--out", "runs"]);
    assert_eq!(again.status.code(), Some(1), "collision is a config error");

    let hash_line = |log: &str| {
        log.lines()
            .find(|l| l.starts_with("manifest hash"))
            .map(str::to_string)
            .expect("log records the manifest hash")
    };
    let first_hash = hash_line(&fs::read_to_string(dir.path().join("runs/ft/seed1/log.txt")).unwrap());
    let first_ckpt = fs::read(dir.path().join("runs/ft/seed1/phase_ft.ckpt")).unwrap();

    let forced = triphase(dir.path(), &["run", "-c", "exp.toml", "--out", "runs", "--force"]);
    assert!(forced.status.success(), "{forced:?}");

    // artifacts are reproducible from (config, seed); timestamps live in a
    // separate manifest field outside the content hash
    let second_hash = hash_line(&fs::read_to_string(dir.path().join("runs/ft/seed1/log.txt")).unwrap());
    assert_eq!(first_hash, second_hash);
    let second_ckpt = fs::read(dir.path().join("runs/ft/seed1/phase_ft.ckpt")).unwrap();
    assert_eq!(first_ckpt, second_ckpt, "checkpoint bytes identical across reruns");
}

#[test]
fn run_seed_override_makes_one_manifest_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    gen_corpus(dir.path());
    write_experiment(dir.path());
    let out = triphase(
        dir.path(),
        &["run", "-c", "exp.toml", "--out", "multi", "--seeds", "1,2,3", "--jobs", "3"],
    );
    assert!(out.status.success(), "{out:?}");
    for seed in 1..=3 {
        assert!(dir.path().join(format!("multi/ft/seed{seed}/manifest.json")).exists());
    }
}

#[test]
fn ablate_reports_present_and_absent_variants() {
    let dir = tempfile::tempdir().unwrap();
    gen_corpus(dir.path());
    write_experiment(dir.path());
    let run = triphase(dir.path(), &["run", "-c", "exp.toml", "--out", "runs"]);
    assert!(run.status.success());

    let out = triphase(dir.path(), &["ablate", "--runs", "runs"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("3phase"));
    assert!(text.contains("absent"));
    assert!(dir.path().join("runs/ablation.json").exists());

    let json_out = triphase(dir.path(), &["ablate", "--runs", "runs", "--json"]);
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&json_out)).unwrap();
    assert!(parsed["ft"]["median_accuracy"].as_f64().is_some());
    assert_eq!(parsed["3phase"], "absent");
    assert!(parsed["ft"]["manifests"][0].as_str().unwrap().len() == 16);
}

#[test]
fn report_prints_metrics_tables() {
    let dir = tempfile::tempdir().unwrap();
    gen_corpus(dir.path());
    write_experiment(dir.path());
    let run = triphase(dir.path(), &["run", "-c", "exp.toml", "--out", "runs"]);
    assert!(run.status.success());

    let out = triphase(dir.path(), &["report", "--run", "runs/ft/seed1"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("test accuracy"));
    assert!(text.contains("Precision"));
    assert!(text.contains("confusion matrix"));

    let json_out = triphase(dir.path(), &["report", "--run", "runs/ft/seed1", "--json"]);
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&json_out)).unwrap();
    assert_eq!(parsed["variant"], "ft");
}

#[test]
fn bad_config_exits_1_missing_data_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[data]\n").unwrap();
    let out = triphase(dir.path(), &["run", "-c", "bad.toml"]);
    assert_eq!(out.status.code(), Some(1));

    fs::write(
        dir.path().join("gone.toml"),
        "[data]\npath = \"nope.jsonl\"\n",
    )
    .unwrap();
    let out = triphase(dir.path(), &["run", "-c", "gone.toml"]);
    assert_eq!(out.status.code(), Some(2), "missing file is a runtime failure");
}
