//! `triphase` command-line entry point.
//!
//! Subcommands: `run` (execute variants x seeds from an experiment file),
//! `ablate` (median table over completed runs), `report` (one run's metrics),
//! `gen-synth` (synthetic JSONL corpus), `stats` (corpus statistics).
//!
//! Exit codes: 0 success, 1 config error, 2 runtime failure.
//! The `TRIPHASE_OUT` environment variable sets the output root.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use triphase_core::config::ExperimentConfig;
use triphase_core::corpus::{
    build_vocab_and_tokenize, compute_stats, load_dataset, split_dataset, stats_table,
    tokenize_with_vocab, Dataset,
};
use triphase_core::synth::{gen_synthetic, write_jsonl, SyntheticSpec};
use triphase_core::train::{run_variant, RunManifest, Variant};
use triphase_core::util::median;
use triphase_core::{Error, Result};

#[derive(Parser)]
#[command(name = "triphase", version, about = "Three-phase text-classifier training")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute every configured (variant, seed) pair
    Run {
        /// Experiment TOML file
        #[arg(short, long)]
        config: PathBuf,
        /// Output directory (overrides the experiment file)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overwrite existing run directories
        #[arg(long)]
        force: bool,
        /// Comma-separated seed override, e.g. "1,2,3"
        #[arg(long)]
        seeds: Option<String>,
        /// Comma-separated variant override, e.g. "3phase,ft"
        #[arg(long)]
        variants: Option<String>,
        /// Worker threads for independent runs
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Median-over-seeds comparison table across completed runs
    Ablate {
        /// Directory holding run outputs
        #[arg(long)]
        runs: PathBuf,
        /// Print the JSON report instead of the text table
        #[arg(long)]
        json: bool,
    },
    /// Metrics report for a single run
    Report {
        /// Run directory or manifest.json path
        #[arg(long)]
        run: PathBuf,
        /// Print the raw manifest JSON
        #[arg(long)]
        json: bool,
    },
    /// Generate a synthetic JSONL dataset
    GenSynth {
        #[arg(long)]
        classes: usize,
        /// Comma-separated per-class sizes, e.g. "400,200,100,25"
        #[arg(long)]
        sizes: String,
        #[arg(long, default_value_t = 2000)]
        vocab: usize,
        #[arg(long, default_value_t = 0.5)]
        signal: f64,
        #[arg(long, default_value_t = 1)]
        levels: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Corpus statistics for a JSONL dataset
    Stats {
        data: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        val_frac: f64,
        #[arg(long, default_value_t = 0.2)]
        test_frac: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Run { config, out, force, seeds, variants, jobs } => {
            cmd_run(&config, out, force, seeds, variants, jobs)
        }
        Cmd::Ablate { runs, json } => cmd_ablate(&runs, json),
        Cmd::Report { run, json } => cmd_report(&run, json),
        Cmd::GenSynth { classes, sizes, vocab, signal, levels, seed, out } => {
            cmd_gen_synth(classes, &sizes, vocab, signal, levels, seed, &out)
        }
        Cmd::Stats { data, val_frac, test_frac, seed, json } => {
            cmd_stats(&data, val_frac, test_frac, seed, json)
        }
    }
}

fn parse_u64_list(s: &str, what: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<u64>()
                .map_err(|_| Error::Config(format!("bad {what} entry \"{p}\"")))
        })
        .collect()
}

fn parse_usize_list(s: &str, what: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<usize>()
                .map_err(|_| Error::Config(format!("bad {what} entry \"{p}\"")))
        })
        .collect()
}

fn output_root() -> PathBuf {
    std::env::var_os("TRIPHASE_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn load_experiment_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match (&cfg.data.path, &cfg.data.synthetic) {
        (Some(path), None) => load_dataset(path),
        (None, Some(spec)) => gen_synthetic(spec, cfg.data.synthetic_seed),
        _ => Err(Error::Config("exactly one data source is required".into())),
    }
}

fn placeholder_manifest(variant: Variant, seed: u64, cfg: &ExperimentConfig) -> RunManifest {
    RunManifest {
        variant: variant.id().into(),
        seed,
        status: "incomplete".into(),
        note: None,
        vocab_size: 0,
        truncation_length: 0,
        class_count: 0,
        model: cfg.model.to_model_config(6),
        training: cfg.training.clone(),
        balance: None,
        phases: Vec::new(),
        test_metrics: None,
        test_reads_before_eval: 0,
        timestamps: Default::default(),
    }
}

fn cmd_run(
    config_path: &Path,
    out: Option<PathBuf>,
    force: bool,
    seeds: Option<String>,
    variants: Option<String>,
    jobs: usize,
) -> Result<()> {
    let mut cfg = ExperimentConfig::from_file(config_path)?;
    if let Some(s) = seeds {
        cfg.experiment.seeds = parse_u64_list(&s, "seed")?;
    }
    if let Some(v) = variants {
        cfg.experiment.variants = v.split(',').map(|p| p.trim().to_string()).collect();
    }
    cfg.validate()?;
    let variants: Vec<Variant> = cfg
        .experiment
        .variants
        .iter()
        .map(|v| Variant::parse(v))
        .collect::<Result<_>>()?;

    let base = match out {
        Some(p) => p,
        None => {
            let rel = cfg.experiment.output_dir.clone().unwrap_or_else(|| {
                let stem = config_path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "experiment".into());
                format!("runs/{stem}")
            });
            output_root().join(rel)
        }
    };

    let dataset = load_experiment_dataset(&cfg)?;
    let tasks: Vec<(Variant, u64)> = variants
        .iter()
        .flat_map(|&v| cfg.experiment.seeds.iter().map(move |&s| (v, s)))
        .collect();

    // collision check up front so --force is an explicit choice
    let mut dirs = Vec::with_capacity(tasks.len());
    for &(variant, seed) in &tasks {
        let dir = base.join(variant.id()).join(format!("seed{seed}"));
        if dir.exists() {
            if !force {
                return Err(Error::Config(format!(
                    "output directory {} already exists (use --force to overwrite)",
                    dir.display()
                )));
            }
            fs::remove_dir_all(&dir)?;
        }
        dirs.push(dir);
    }
    for (dir, &(variant, seed)) in dirs.iter().zip(&tasks) {
        fs::create_dir_all(dir)?;
        placeholder_manifest(variant, seed, &cfg).save(dir.join("manifest.json"))?;
    }

    let jobs = jobs.max(1);
    let mut results: Vec<Option<Result<RunManifest>>> = Vec::new();
    results.resize_with(tasks.len(), || None);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results_mx = std::sync::Mutex::new(&mut results);
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(tasks.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= tasks.len() {
                    break;
                }
                let (variant, seed) = tasks[i];
                let res = run_variant(variant, &cfg, &dataset, seed, Some(&dirs[i]));
                let mut guard = results_mx.lock().expect("results lock");
                guard[i] = Some(res);
            });
        }
    });

    let mut failed = false;
    println!("{:<12} {:>6} {:>12} {:>10}", "variant", "seed", "status", "test acc");
    for (i, slot) in results.into_iter().enumerate() {
        let (variant, seed) = tasks[i];
        match slot.expect("every task executed") {
            Ok(manifest) => {
                write_run_log(&dirs[i], &manifest)?;
                let acc = manifest
                    .test_accuracy()
                    .map(|a| format!("{:.2}%", a * 100.0))
                    .unwrap_or_else(|| "-".into());
                println!("{:<12} {:>6} {:>12} {:>10}", variant.id(), seed, manifest.status, acc);
                if manifest.status != "complete" {
                    failed = true;
                }
            }
            Err(e) => {
                println!("{:<12} {:>6} {:>12} {:>10}", variant.id(), seed, "failed", "-");
                eprintln!("run {variant}/seed{seed} failed: {e}");
                failed = true;
            }
        }
    }
    if failed {
        return Err(Error::Model("one or more runs did not complete".into()));
    }
    Ok(())
}

fn write_run_log(dir: &Path, manifest: &RunManifest) -> Result<()> {
    let mut log = String::new();
    let _ = writeln!(log, "run {} seed {} [{}]", manifest.variant, manifest.seed, manifest.status);
    let _ = writeln!(
        log,
        "vocab {} truncation {} classes {}",
        manifest.vocab_size, manifest.truncation_length, manifest.class_count
    );
    for phase in &manifest.phases {
        let _ = writeln!(
            log,
            "phase {:<6} best_epoch {:<3} best_val {:.6} ({})",
            phase.phase, phase.best_epoch, phase.best_val, phase.selection
        );
        let curve: Vec<String> = phase.val_curve.iter().map(|v| format!("{v:.4}")).collect();
        let _ = writeln!(log, "  curve: [{}]", curve.join(", "));
    }
    if let Some(m) = &manifest.test_metrics {
        let _ = writeln!(
            log,
            "test accuracy {:.4} macro_f1 {:.4}",
            m.accuracy, m.macro_f1
        );
    }
    let _ = writeln!(log, "manifest hash {}", manifest.content_hash());
    fs::write(dir.join("log.txt"), log)?;
    Ok(())
}

fn collect_manifests(dir: &Path) -> Result<Vec<RunManifest>> {
    let mut found = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == "manifest.json") {
                found.push(RunManifest::load(&path)?);
            }
        }
    }
    found.sort_by_key(|m| (m.variant.clone(), m.seed));
    Ok(found)
}

fn cmd_ablate(runs: &Path, json: bool) -> Result<()> {
    if !runs.exists() {
        return Err(Error::Config(format!("runs directory {} not found", runs.display())));
    }
    let manifests = collect_manifests(runs)?;
    let mut by_variant: BTreeMap<String, Vec<&RunManifest>> = BTreeMap::new();
    for m in manifests.iter().filter(|m| m.status == "complete") {
        by_variant.entry(m.variant.clone()).or_default().push(m);
    }

    let mut report = serde_json::Map::new();
    let mut header = format!("{:<12}", "metric");
    let mut acc_row = format!("{:<12}", "accuracy");
    let mut f1_row = format!("{:<12}", "macro F1");
    let mut seeds_row = format!("{:<12}", "seeds");
    for variant in Variant::TABLE_ORDER {
        let id = variant.id();
        header.push_str(&format!(" {id:>10}"));
        match by_variant.get(id) {
            Some(ms) => {
                let accs: Vec<f64> = ms.iter().filter_map(|m| m.test_accuracy()).collect();
                let f1s: Vec<f64> = ms
                    .iter()
                    .filter_map(|m| m.test_metrics.as_ref().map(|t| t.macro_f1))
                    .collect();
                let acc = median(&accs).unwrap_or(f64::NAN);
                let f1 = median(&f1s).unwrap_or(f64::NAN);
                acc_row.push_str(&format!(" {:>9.2}%", acc * 100.0));
                f1_row.push_str(&format!(" {:>9.2}%", f1 * 100.0));
                seeds_row.push_str(&format!(" {:>10}", ms.len()));
                report.insert(
                    id.to_string(),
                    serde_json::json!({
                        "median_accuracy": acc,
                        "median_macro_f1": f1,
                        "seeds": ms.iter().map(|m| m.seed).collect::<Vec<_>>(),
                        "manifests": ms.iter().map(|m| m.content_hash()).collect::<Vec<_>>(),
                    }),
                );
            }
            None => {
                acc_row.push_str(&format!(" {:>10}", "absent"));
                f1_row.push_str(&format!(" {:>10}", "absent"));
                seeds_row.push_str(&format!(" {:>10}", 0));
                report.insert(id.to_string(), serde_json::Value::String("absent".into()));
            }
        }
    }

    let json_report = serde_json::Value::Object(report);
    fs::write(
        runs.join("ablation.json"),
        serde_json::to_string_pretty(&json_report)?,
    )?;
    if json {
        println!("{}", serde_json::to_string_pretty(&json_report)?);
    } else {
        println!("{header}");
        println!("{acc_row}");
        println!("{f1_row}");
        println!("{seeds_row}");
        println!("(medians over seeds; full report in {})", runs.join("ablation.json").display());
    }
    Ok(())
}

fn cmd_report(run: &Path, json: bool) -> Result<()> {
    let manifest_path = if run.is_dir() { run.join("manifest.json") } else { run.to_path_buf() };
    let manifest = RunManifest::load(&manifest_path)?;
    if json {
        println!("{}", manifest.to_json());
        return Ok(());
    }
    println!(
        "run {} seed {} [{}]  hash {}",
        manifest.variant,
        manifest.seed,
        manifest.status,
        manifest.content_hash()
    );
    if let Some(note) = &manifest.note {
        println!("note: {note}");
    }
    for phase in &manifest.phases {
        println!(
            "phase {:<6} epochs {:<3} best_epoch {:<3} best_val {:.6}",
            phase.phase, phase.epochs_run, phase.best_epoch, phase.best_val
        );
    }
    if let Some(m) = &manifest.test_metrics {
        let names: Vec<String> = (0..m.per_class.len()).map(|i| format!("class{i}")).collect();
        println!("\ntest accuracy: {:.2}%", m.accuracy * 100.0);
        print!("{}", m.precision_recall_table(&names));
        print!("{}", m.f1_table(&names));
        print!("{}", m.confusion_table());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_gen_synth(
    classes: usize,
    sizes: &str,
    vocab: usize,
    signal: f64,
    levels: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let spec = SyntheticSpec {
        n_classes: classes,
        sizes: parse_usize_list(sizes, "size")?,
        vocab_size: vocab,
        signal_strength: signal,
        levels,
        indicators_per_class: 6,
        min_len: 8,
        max_len: 16,
    };
    let ds = gen_synthetic(&spec, seed)?;
    write_jsonl(&ds, out)?;
    println!(
        "wrote {} examples over {} classes to {}",
        ds.examples.len(),
        ds.n_classes(),
        out.display()
    );
    Ok(())
}

fn cmd_stats(data: &Path, val_frac: f64, test_frac: f64, seed: u64, json: bool) -> Result<()> {
    let ds = load_dataset(data)?;
    let (mut train, mut val, mut test) = split_dataset(&ds, val_frac, test_frac, seed)?;
    build_vocab_and_tokenize(&mut train, usize::MAX / 2)?;
    let vocab = train.vocab.clone().expect("vocab built");
    tokenize_with_vocab(&mut val, &vocab);
    tokenize_with_vocab(&mut test, &vocab);

    let splits = [
        ("train", compute_stats(&train)),
        ("validation", compute_stats(&val)),
        ("test", compute_stats(&test)),
    ];
    if json {
        let obj: serde_json::Map<String, serde_json::Value> = splits
            .iter()
            .map(|(name, s)| (name.to_string(), serde_json::to_value(s).expect("stats serialize")))
            .collect();
        println!("{}", serde_json::to_string_pretty(&serde_json::Value::Object(obj))?);
    } else {
        let rows: Vec<(&str, &triphase_core::corpus::CorpusStats)> =
            splits.iter().map(|(n, s)| (*n, s)).collect();
        print!("{}", stats_table(&rows));
        println!("\nper-class counts (train):");
        for (class, count) in &splits[0].1.per_class {
            println!("  {class:<24} {count}");
        }
    }
    Ok(())
}
