//! `sentinel` command line: dataset synthesis, splitting, training,
//! evaluation, the comparison matrix, offline/streaming inference, and
//! checkpoint inspection.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use sentinel_core::dataset::manifest::{ingest_manifest, read_manifest, write_manifest, SplitSet};
use sentinel_core::dataset::split::split_dataset;
use sentinel_core::dataset::synth::{generate_dataset, MotionClass, SynthSpec};
use sentinel_core::error::Result;
use sentinel_core::stream::{
    infer_video, latency_percentiles, AsyncStream, StreamConfig, StreamSession,
};
use sentinel_core::train::{
    evaluate_model, fmt_metric, inspect_checkpoint, load_checkpoint, run_matrix, save_checkpoint,
    CheckpointMeta, EvalOptions, MatrixOptions, TrainOptions,
};
use sentinel_core::video::{ppm::PpmStream, AugmentSpec, CropAnchor, SampleMode};
use sentinel_core::{Error, ModelConfig};

#[derive(Parser)]
#[command(
    name = "sentinel",
    about = "Video anomaly detection: train CNN+GRU/LSTM sequence classifiers and run them on stored or live frame feeds",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Single,
    Sliding,
}

impl From<ModeArg> for SampleMode {
    fn from(m: ModeArg) -> SampleMode {
        match m {
            ModeArg::Single => SampleMode::SingleSequence,
            ModeArg::Sliding => SampleMode::Sliding,
        }
    }
}

#[derive(Args)]
struct SeedArg {
    /// Random seed; falls back to $VSNT_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
}

impl SeedArg {
    fn resolve(&self) -> u64 {
        self.seed
            .or_else(|| std::env::var("VSNT_SEED").ok().and_then(|s| s.parse().ok()))
            .unwrap_or(0)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-class motion dataset (calm vs agitated).
    Synth {
        /// Output directory; receives one directory per video plus manifest.jsonl.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        calm: usize,
        #[arg(long, default_value_t = 20)]
        agitated: usize,
        #[arg(long, default_value_t = 64)]
        frames: usize,
        #[arg(long, default_value_t = 16.0)]
        fps: f64,
        #[arg(long, default_value_t = 32)]
        side: usize,
        #[arg(long, default_value_t = 3)]
        sprites: usize,
        /// Also write a stratified split at this train fraction.
        #[arg(long)]
        split_ratio: Option<f64>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Assign a stratified train/test split to an existing manifest.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0.6)]
        ratio: f64,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Train a model on the train split and write a checkpoint + curves.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// JSON file overriding ModelConfig fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::Single)]
        mode: ModeArg,
        #[arg(long, default_value_t = 1.0)]
        window_seconds: f64,
        /// Enable seeded flip/crop augmentation on the training split.
        #[arg(long)]
        augment: bool,
        /// Stop early once held-out accuracy reaches this value.
        #[arg(long)]
        stop_at_val_acc: Option<f64>,
        /// Label treated as the anomaly class (default: first class).
        #[arg(long)]
        positive_class: Option<String>,
        /// Base path for curve outputs (.csv/.svg); default: next to the checkpoint.
        #[arg(long)]
        curve: Option<PathBuf>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Evaluate a checkpoint on a split and write a metrics CSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, value_enum, default_value_t = ModeArg::Single)]
        mode: ModeArg,
        #[arg(long, default_value_t = 1.0)]
        window_seconds: f64,
        #[arg(long)]
        positive_class: Option<String>,
        /// Metrics CSV output path.
        #[arg(long)]
        metrics_out: Option<PathBuf>,
    },
    /// Train and evaluate every backbone x cell x head variant.
    Matrix {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        epochs: usize,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Directory for matrix.csv and matrix.txt.
        #[arg(long)]
        out_dir: PathBuf,
        /// Run configurations one at a time instead of in parallel.
        #[arg(long)]
        sequential: bool,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Classify a stored video or a live PPM stream on stdin.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Frame directory of a stored video.
        #[arg(long, conflicts_with = "stream")]
        video: Option<PathBuf>,
        /// Read concatenated binary PPM frames from stdin.
        #[arg(long)]
        stream: bool,
        /// Declared frame rate of the stream.
        #[arg(long, default_value_t = 30.0)]
        fps: f64,
        #[arg(long, default_value_t = 1.0)]
        window_seconds: f64,
        #[arg(long, default_value_t = 0.5)]
        threshold: f32,
        #[arg(long, value_enum, default_value_t = ModeArg::Sliding)]
        mode: ModeArg,
        /// Frames between predictions (default: half a window).
        #[arg(long)]
        emit_stride: Option<usize>,
        /// Decouple ingestion from inference (newest window wins, drops counted).
        #[arg(long)]
        async_pipeline: bool,
        /// Also append alert JSON lines to this file.
        #[arg(long)]
        alert_log: Option<PathBuf>,
    },
    /// Print a checkpoint's header and parameter table.
    InspectCheckpoint {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

/// Parse and run; returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ModelConfig> {
    let cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text)?
        }
        None => ModelConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            out,
            calm,
            agitated,
            frames,
            fps,
            side,
            sprites,
            split_ratio,
            seed,
        } => {
            let seed = seed.resolve();
            let base = SynthSpec {
                class_kind: MotionClass::Calm,
                n_frames: frames,
                fps,
                side,
                seed,
                sprite_count: sprites,
            };
            let mut manifest = generate_dataset(&out, &base, calm, agitated)?;
            if let Some(ratio) = split_ratio {
                split_dataset(&mut manifest, ratio, seed)?;
                write_manifest(&out.join("manifest.jsonl"), &manifest)?;
            }
            println!(
                "wrote {} videos ({} calm, {} agitated) under {}",
                manifest.records.len(),
                calm,
                agitated,
                out.display()
            );
            Ok(())
        }
        Command::Split { manifest, ratio, seed } => {
            let mut m = read_manifest(&manifest)?;
            split_dataset(&mut m, ratio, seed.resolve())?;
            write_manifest(&manifest, &m)?;
            let train = m.records_for(SplitSet::Train).len();
            let test = m.records_for(SplitSet::Test).len();
            println!("split {} records: {train} train / {test} test", m.records.len());
            Ok(())
        }
        Command::Train {
            manifest,
            out,
            config,
            epochs,
            mode,
            window_seconds,
            augment,
            stop_at_val_acc,
            positive_class,
            curve,
            seed,
        } => {
            let seed = seed.resolve();
            let cfg = load_config(config.as_deref())?;
            let m = ingest_manifest(&manifest)?;
            let opts = TrainOptions {
                epochs,
                seed,
                mode: mode.into(),
                window_seconds,
                augment: augment.then(|| AugmentSpec {
                    flip: true,
                    crop_fraction: 0.85,
                    zoom: 1.0,
                    seed,
                    crop_anchor: CropAnchor::Random,
                }),
                stop_at_val_accuracy: stop_at_val_acc,
                positive_label: positive_class,
            };
            let outcome = sentinel_core::train::train(&cfg, &m, &opts)?;
            let meta = CheckpointMeta {
                config: cfg,
                seed,
                epoch: outcome.epochs_run,
            };
            save_checkpoint(&outcome.model, &meta, &out)?;
            let curve_base = curve.unwrap_or_else(|| out.clone());
            let csv_path = curve_base.with_extension("curve.csv");
            let svg_path = curve_base.with_extension("curve.svg");
            outcome.curve.write_csv(&csv_path)?;
            outcome.curve.write_svg(&svg_path)?;
            let last = outcome.curve.rows.last();
            println!(
                "trained {} epoch(s); final val_acc {}; checkpoint {}",
                outcome.epochs_run,
                last.map(|r| format!("{:.3}", r.val_acc)).unwrap_or_default(),
                out.display()
            );
            if outcome.skipped_sequences > 0 {
                eprintln!("warning: {} sequences skipped as unreadable", outcome.skipped_sequences);
            }
            Ok(())
        }
        Command::Eval {
            checkpoint,
            manifest,
            threshold,
            mode,
            window_seconds,
            positive_class,
            metrics_out,
        } => {
            let (model, meta) = load_checkpoint(&checkpoint)?;
            let m = ingest_manifest(&manifest)?;
            let report = evaluate_model(&model, &m, SplitSet::Test, &EvalOptions {
                threshold,
                mode: mode.into(),
                window_seconds,
                positive_label: positive_class,
            })?;
            let key = meta.config.describe();
            println!(
                "{key}: accuracy {:.4} precision {} recall {} f1 {} (tp {} fp {} tn {} fn {})",
                report.accuracy,
                fmt_metric(report.precision),
                fmt_metric(report.recall),
                fmt_metric(report.f1),
                report.tp,
                report.fp,
                report.tn,
                report.fn_
            );
            if let Some(path) = metrics_out {
                let mut csv = String::from("config,accuracy,precision,recall,f1,tp,fp,tn,fn\n");
                csv.push_str(&format!(
                    "{key},{:.4},{},{},{},{},{},{},{}\n",
                    report.accuracy,
                    fmt_metric(report.precision),
                    fmt_metric(report.recall),
                    fmt_metric(report.f1),
                    report.tp,
                    report.fp,
                    report.tn,
                    report.fn_
                ));
                std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
            }
            Ok(())
        }
        Command::Matrix {
            manifest,
            config,
            epochs,
            threshold,
            out_dir,
            sequential,
            seed,
        } => {
            let cfg = load_config(config.as_deref())?;
            let m = ingest_manifest(&manifest)?;
            let report = run_matrix(&cfg, &m, &MatrixOptions {
                epochs,
                seed: seed.resolve(),
                threshold,
                parallel: !sequential,
            });
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            let csv_path = out_dir.join("matrix.csv");
            let txt_path = out_dir.join("matrix.txt");
            std::fs::write(&csv_path, report.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
            std::fs::write(&txt_path, report.to_table()).map_err(|e| Error::io(&txt_path, e))?;
            print!("{}", report.to_table());
            Ok(())
        }
        Command::Infer {
            checkpoint,
            video,
            stream,
            fps,
            window_seconds,
            threshold,
            mode,
            emit_stride,
            async_pipeline,
            alert_log,
        } => {
            let (model, _) = load_checkpoint(&checkpoint)?;
            let cfg = StreamConfig {
                fps,
                window_seconds,
                threshold,
                emit_stride,
            };
            let mut log_file = match &alert_log {
                Some(p) => Some(
                    std::fs::OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(p)
                        .map_err(|e| Error::io(p, e))?,
                ),
                None => None,
            };
            let mut emit = |record: &sentinel_core::stream::AlertRecord| -> Result<()> {
                let line = serde_json::to_string(record)?;
                println!("{line}");
                if let Some(f) = log_file.as_mut() {
                    writeln!(f, "{line}").map_err(|e| Error::io("<alert-log>", e))?;
                }
                Ok(())
            };
            if let Some(dir) = video {
                let verdict = infer_video(&model, &dir, mode.into(), &cfg)?;
                for r in &verdict.records {
                    emit(r)?;
                }
                let lat: Vec<f64> = verdict.records.iter().map(|r| r.wall_ms).collect();
                let pct = latency_percentiles(&lat);
                println!(
                    "{}",
                    serde_json::json!({
                        "verdict": verdict.verdict,
                        "max_p": verdict.max_probability,
                        "windows": verdict.records.len(),
                        "padded": verdict.padded,
                        "latency_ms_p50": pct.map(|p| p.0),
                        "latency_ms_p95": pct.map(|p| p.1),
                    })
                );
                Ok(())
            } else if stream {
                let stdin = std::io::stdin();
                let mut frames = PpmStream::new(stdin.lock());
                let model = Arc::new(model);
                if async_pipeline {
                    let mut session = AsyncStream::new(model, &cfg)?;
                    while let Some(frame) = frames.next_frame()? {
                        session.push_frame(&frame)?;
                    }
                    let outcome = session.finish()?;
                    for r in &outcome.records {
                        emit(r)?;
                    }
                    let lat: Vec<f64> = outcome.records.iter().map(|r| r.wall_ms).collect();
                    let pct = latency_percentiles(&lat);
                    println!(
                        "{}",
                        serde_json::json!({
                            "windows": outcome.records.len(),
                            "dropped_windows": outcome.dropped_windows,
                            "latency_ms_p50": pct.map(|p| p.0),
                            "latency_ms_p95": pct.map(|p| p.1),
                        })
                    );
                } else {
                    let mut session = StreamSession::new(model, &cfg)?;
                    let mut count = 0usize;
                    while let Some(frame) = frames.next_frame()? {
                        if let Some(record) = session.push_frame(&frame)? {
                            emit(&record)?;
                            count += 1;
                        }
                    }
                    let pct = latency_percentiles(session.latencies_ms());
                    println!(
                        "{}",
                        serde_json::json!({
                            "frames": session.frames_seen(),
                            "windows": count,
                            "latency_ms_p50": pct.map(|p| p.0),
                            "latency_ms_p95": pct.map(|p| p.1),
                        })
                    );
                }
                Ok(())
            } else {
                Err(Error::InvalidArgument(
                    "infer needs --video <dir> or --stream".into(),
                ))
            }
        }
        Command::InspectCheckpoint { checkpoint } => {
            let summary = inspect_checkpoint(&checkpoint)?;
            println!(
                "config: {}",
                serde_json::to_string_pretty(&summary.meta.config)?
            );
            println!("seed: {}  epoch: {}", summary.meta.seed, summary.meta.epoch);
            println!("parameters ({} tensors, {} values):", summary.params.len(), summary.total_values);
            for (name, shape) in &summary.params {
                println!("  {name:<24} {shape:?}");
            }
            Ok(())
        }
    }
}
