//! Command-line orchestration: `generate`, `train`, `eval`, `as2`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
//! Anything that affects results comes from a config file; flags carry only
//! paths and switches. `STYLESEG_SEED` overrides the config seed (recorded
//! in the run manifest).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use styleseg_core::config::{load_generate_spec, load_train_spec};
use styleseg_core::data::{generate_synthetic_corpus, load_corpus, IngestConfig, Split};
use styleseg_core::error::Error;
use styleseg_core::evaluation::{self, GroupKey};
use styleseg_core::metrics;
use styleseg_core::training::{self, Checkpoint, TrainConfig};
use styleseg_core::util::fnv1a64_hex;

#[derive(Parser)]
#[command(name = "styleseg", version, about = "Segmentation style discovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic multi-style corpus to disk.
    Generate(GenerateArgs),
    /// Train a model (style discovery, relaxed-WTA baseline, or single-mask).
    Train(TrainArgs),
    /// Evaluate a checkpoint over a corpus split and emit the report CSVs.
    Eval(EvalArgs),
    /// Print the alignment strength of a comma-separated fraction vector.
    As2(As2Args),
}

#[derive(Args)]
struct GenerateArgs {
    /// Generation config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overwrite an existing non-empty target directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Training config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Continue from the latest epoch checkpoint in checkpoint_dir.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint directory: either an epoch directory or a run directory
    /// containing best.txt.
    #[arg(long, required_unless_present = "as2_only")]
    checkpoint: Option<PathBuf>,
    /// Corpus directory to evaluate on.
    #[arg(long, required_unless_present = "as2_only")]
    corpus: Option<PathBuf>,
    /// Output directory for the CSV reports.
    #[arg(long)]
    out: PathBuf,
    /// Corpus split to evaluate.
    #[arg(long, default_value = "test")]
    split: String,
    /// Binarization threshold for predicted channels.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Metadata key for the assignment table
    /// (preference|tool|annotator|planted_style).
    #[arg(long, default_value = "preference")]
    group_key: String,
    /// Recompute assignment.csv from an existing records.csv, without a
    /// model (preference grouping only).
    #[arg(long, value_name = "RECORDS_CSV")]
    as2_only: Option<PathBuf>,
}

#[derive(Args)]
struct As2Args {
    /// Comma-separated non-negative fractions, e.g. "0.7,0.15,0.15".
    fractions: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::As2(args) => cmd_as2(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

/// Seed override from the environment, if present.
fn env_seed() -> Result<Option<u64>, Error> {
    match std::env::var("STYLESEG_SEED") {
        Ok(v) => v
            .parse::<u64>()
            .map(Some)
            .map_err(|_| Error::config("STYLESEG_SEED", format!("not an integer: {v:?}"))),
        Err(_) => Ok(None),
    }
}

#[derive(serde::Serialize)]
struct RunManifest {
    command: String,
    config_path: Option<String>,
    config_hash: Option<String>,
    code_version: String,
    seed: Option<u64>,
    seed_source: Option<&'static str>,
    started_unix: u64,
    outputs: Vec<String>,
    parallel: bool,
    threads: usize,
}

impl RunManifest {
    fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            config_path: None,
            config_hash: None,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: None,
            seed_source: None,
            started_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            outputs: Vec::new(),
            parallel: styleseg_core::exec::parallel_enabled(),
            threads: styleseg_core::exec::thread_count(),
        }
    }

    /// Written before any long computation starts.
    fn write(&self, dir: &Path) -> Result<(), Error> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::format("run manifest", e.to_string()))?;
        std::fs::write(dir.join("run_manifest.json"), json)
            .map_err(|e| Error::io("writing run_manifest.json", e))
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<(), Error> {
    let (spec, raw) = load_generate_spec(&args.config)?;
    let mut cfg = spec.to_synth_config();
    cfg.validate()?;

    let mut seed_source = "config";
    if let Some(seed) = env_seed()? {
        cfg.master_seed = seed;
        seed_source = "env";
    }

    let out_dir = &spec.corpus.out_dir;
    if !args.force && dir_non_empty(out_dir) {
        return Err(Error::config(
            "corpus.out_dir",
            format!(
                "{} exists and is not empty; pass --force to overwrite",
                out_dir.display()
            ),
        ));
    }

    let mut manifest = RunManifest::new("generate");
    manifest.config_path = Some(args.config.display().to_string());
    manifest.config_hash = Some(fnv1a64_hex(raw.as_bytes()));
    manifest.seed = Some(cfg.master_seed);
    manifest.seed_source = Some(seed_source);
    manifest.outputs = vec![
        out_dir.join("manifest.csv").display().to_string(),
        out_dir.join("images").display().to_string(),
        out_dir.join("masks").display().to_string(),
    ];
    manifest.write(out_dir)?;

    let generated = generate_synthetic_corpus(&cfg, out_dir)?;
    println!(
        "generated {} images / {} masks at {}",
        generated.n_images,
        generated.n_masks,
        generated.root.display()
    );
    Ok(())
}

fn dir_non_empty(dir: &Path) -> bool {
    std::fs::read_dir(dir)
        .map(|mut entries| entries.next().is_some())
        .unwrap_or(false)
}

fn cmd_train(args: TrainArgs) -> Result<(), Error> {
    let (spec, raw) = load_train_spec(&args.config)?;
    let mut cfg: TrainConfig = spec.to_train_config();
    let mut seed_source = "config";
    if let Some(seed) = env_seed()? {
        cfg.seed = seed;
        seed_source = "env";
    }
    cfg.validate()?;

    let corpus = load_corpus(
        &spec.run.corpus_dir,
        &IngestConfig {
            resolution: cfg.resolution,
        },
    )?;

    let mut manifest = RunManifest::new("train");
    manifest.config_path = Some(args.config.display().to_string());
    manifest.config_hash = Some(fnv1a64_hex(raw.as_bytes()));
    manifest.seed = Some(cfg.seed);
    manifest.seed_source = Some(seed_source);
    manifest.outputs = vec![
        cfg.checkpoint_dir.join("runlog.csv").display().to_string(),
        cfg.checkpoint_dir.join("best.txt").display().to_string(),
    ];
    manifest.write(&cfg.checkpoint_dir)?;

    let (state, log) = if args.resume {
        let Some((epoch, dir)) = training::latest_epoch_dir(&cfg.checkpoint_dir)? else {
            return Err(Error::config(
                "run.checkpoint_dir",
                format!("no epoch checkpoints under {}", cfg.checkpoint_dir.display()),
            ));
        };
        eprintln!("resuming from epoch {epoch} ({})", dir.display());
        let mut ckpt = training::load_checkpoint(&dir)?;
        ckpt.prepare_resume(&cfg)?;
        let log_path = cfg.checkpoint_dir.join("runlog.csv");
        let log = match std::fs::read_to_string(&log_path) {
            Ok(text) => {
                let mut log = training::RunLog::parse_csv(&text)?;
                log.epochs.truncate(epoch);
                log
            }
            Err(_) => training::RunLog::default(),
        };
        training::resume(&corpus, ckpt, log)?
    } else {
        training::train(&corpus, &cfg)?
    };

    println!("mode        {}", state.config.mode.as_str());
    println!("epochs      {}", state.epoch);
    println!("best epoch  {}", log.best_epoch);
    if let Some(best) = log.epochs.iter().find(|e| e.epoch == log.best_epoch) {
        println!("val_total   {:.6}", best.val_total);
    }
    println!("wall time   {:.1}s", log.wall_time_secs);
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Error> {
    if let Some(records_path) = &args.as2_only {
        return eval_as2_only(&args, records_path);
    }
    let checkpoint_dir = args.checkpoint.as_ref().expect("required by clap");
    let corpus_dir = args.corpus.as_ref().expect("required by clap");

    let ckpt = resolve_checkpoint(checkpoint_dir)?;
    let m = ckpt.config.m;

    let corpus = load_corpus(
        corpus_dir,
        &IngestConfig {
            resolution: ckpt.config.resolution,
        },
    )?;

    let samples = match args.split.as_str() {
        "all" => corpus.samples.iter().collect::<Vec<_>>(),
        s => {
            let split = Split::parse(s)
                .ok_or_else(|| Error::config("--split", format!("unknown split {s:?}")))?;
            corpus.split_samples(split)
        }
    };
    if samples.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no samples in split {:?}",
            args.split
        )));
    }
    let group_key = GroupKey::parse(&args.group_key)
        .ok_or_else(|| Error::config("--group-key", format!("unknown key {:?}", args.group_key)))?;

    let mut manifest = RunManifest::new("eval");
    manifest.seed = None;
    manifest.outputs = ["records.csv", "preferences.csv", "assignment.csv", "shapes.csv"]
        .iter()
        .map(|f| args.out.join(f).display().to_string())
        .collect();
    manifest.write(&args.out)?;

    let records = evaluation::evaluate_corpus(&ckpt.seg, &samples, args.threshold)?;
    write(&args.out.join("records.csv"), evaluation::records_csv(&records, m))?;

    let prefs = evaluation::preference_reports(&records)?;
    write(&args.out.join("preferences.csv"), evaluation::preferences_csv(&prefs))?;

    if m >= 2 {
        let table = evaluation::group_style_assignment(&records, group_key)?;
        write(&args.out.join("assignment.csv"), evaluation::assignment_csv(&table, m))?;
    } else {
        write(
            &args.out.join("assignment.csv"),
            "group,as2,modal_style\n".to_string(),
        )?;
        eprintln!("warning: single-style model; assignment table is empty");
    }

    let shapes = evaluation::consistency_analysis(&ckpt.seg, &samples, args.threshold)?;
    write(&args.out.join("shapes.csv"), evaluation::shapes_csv(&shapes.table))?;

    let stats = evaluation::style_statistics(&records)?;
    println!("records     {}", records.len());
    println!(
        "dice        max {:.4}±{:.4}  mean {:.4}±{:.4}  median {:.4}±{:.4}  min {:.4}±{:.4}",
        stats.max.mean,
        stats.max.std,
        stats.mean.mean,
        stats.mean.std,
        stats.median.mean,
        stats.median.std,
        stats.min.mean,
        stats.min.std
    );
    Ok(())
}

fn eval_as2_only(args: &EvalArgs, records_path: &Path) -> Result<(), Error> {
    let text = std::fs::read_to_string(records_path)
        .map_err(|e| Error::io(format!("reading {}", records_path.display()), e))?;
    let records = evaluation::parse_records_csv(&text)?;
    if records.is_empty() {
        return Err(Error::InvalidInput("records.csv has no rows".into()));
    }
    let m = records[0].style_count();
    if m < 2 {
        return Err(Error::InvalidInput(
            "AS² undefined for a single style".into(),
        ));
    }

    let mut manifest = RunManifest::new("eval --as2-only");
    manifest.outputs = vec![args.out.join("assignment.csv").display().to_string()];
    manifest.write(&args.out)?;

    let table = evaluation::group_style_assignment(&records, GroupKey::Preference)?;
    write(&args.out.join("assignment.csv"), evaluation::assignment_csv(&table, m))?;
    for row in &table.rows {
        println!("{}: as2 {:.6} modal style {}", row.group, row.as2, row.modal_style);
    }
    Ok(())
}

fn resolve_checkpoint(dir: &Path) -> Result<Checkpoint, Error> {
    if dir.join("model.bin").exists() {
        training::load_checkpoint(dir)
    } else if dir.join("best.txt").exists() {
        training::load_best(dir)
    } else {
        Err(Error::InvalidInput(format!(
            "{} holds neither model.bin nor best.txt",
            dir.display()
        )))
    }
}

fn write(path: &Path, content: String) -> Result<(), Error> {
    std::fs::write(path, content)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn cmd_as2(args: As2Args) -> Result<(), Error> {
    let values: Vec<f64> = args
        .fractions
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::config("fractions", format!("not a number: {s:?}")))
        })
        .collect::<Result<_, _>>()?;
    if values.len() < 2 {
        return Err(Error::config(
            "fractions",
            "AS² needs at least 2 fractions",
        ));
    }
    if values.iter().any(|&v| v < 0.0) {
        return Err(Error::config("fractions", "fractions must be non-negative"));
    }
    let total: f64 = values.iter().sum();
    if (total - 1.0).abs() > 1e-3 {
        return Err(Error::config(
            "fractions",
            format!("fractions sum to {total}, expected 1 within 1e-3"),
        ));
    }
    let normalized: Vec<f64> = values.iter().map(|v| v / total).collect();
    let value = metrics::as2_of_fractions(&normalized)?;
    println!("{value:.6}");
    Ok(())
}
