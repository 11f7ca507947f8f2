//! Training loop (plain SGD on BCE over generator batches) and per-video
//! evaluation against the test split.

use super::curve::{CurveRow, LearningCurve};
use super::metrics::{MetricsReport, PredictionRecord};
use crate::dataset::manifest::{DatasetManifest, SplitSet};
use crate::error::{Error, Result};
use crate::layers::{ForwardMode, LossKind, ModelConfig, SequenceClassifier};
use crate::rng;
use crate::stream::{infer_video_meta, StreamConfig, WindowScorer};
use crate::tensor::{sgd_step, Tape};
use crate::video::{AugmentSpec, BatchGenerator, GeneratorConfig, SampleMode, VideoMeta};

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub epochs: usize,
    pub seed: u64,
    /// Sequence preparation for the training split.
    pub mode: SampleMode,
    pub window_seconds: f64,
    pub augment: Option<AugmentSpec>,
    /// Stop once held-out accuracy reaches this value.
    pub stop_at_val_accuracy: Option<f64>,
    /// Label counted as "anomaly"; defaults to the first class in sorted order.
    pub positive_label: Option<String>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 10,
            seed: 0,
            mode: SampleMode::SingleSequence,
            window_seconds: 1.0,
            augment: None,
            stop_at_val_accuracy: None,
            positive_label: None,
        }
    }
}

pub struct TrainOutcome {
    pub model: SequenceClassifier<f32>,
    pub curve: LearningCurve,
    pub epochs_run: usize,
    pub skipped_sequences: usize,
}

fn positive_label(manifest: &DatasetManifest, opts: Option<&String>) -> Result<String> {
    match opts {
        Some(l) => {
            if !manifest.classes.contains(l) {
                return Err(Error::InvalidArgument(format!(
                    "positive label {l} not among classes {:?}",
                    manifest.classes
                )));
            }
            Ok(l.clone())
        }
        None => Ok(manifest.classes[0].clone()),
    }
}

pub fn train(
    cfg: &ModelConfig,
    manifest: &DatasetManifest,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.loss != LossKind::Bce {
        return Err(Error::InvalidArgument(
            "training uses the binary head; only bce loss is supported".into(),
        ));
    }
    if manifest.classes.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "binary training needs exactly 2 classes, got {:?}",
            manifest.classes
        )));
    }
    if !manifest.has_split() {
        return Err(Error::Manifest("train: manifest has no split".into()));
    }
    manifest.validate_split()?;
    for side in [SplitSet::Train, SplitSet::Test] {
        for class in &manifest.classes {
            let n = manifest
                .records
                .iter()
                .filter(|r| &r.label == class && manifest.split.get(&r.id) == Some(&side))
                .count();
            if n == 0 {
                return Err(Error::Manifest(format!(
                    "class {class} has no videos in the {side:?} split"
                )));
            }
        }
    }
    let positive = positive_label(manifest, opts.positive_label.as_ref())?;
    let train_records = manifest.records_for(SplitSet::Train);

    let mut model = SequenceClassifier::<f32>::new(cfg, opts.seed)?;
    let mut curve = LearningCurve::default();
    let mut skipped = 0usize;
    let mut epochs_run = 0usize;

    for epoch in 0..opts.epochs {
        let gen_cfg = GeneratorConfig {
            augment: opts.augment.clone(),
            window_seconds: opts.window_seconds,
            seed: rng::mix(&[rng::mix_tag(opts.seed, "epoch-shuffle"), epoch as u64]),
            ..GeneratorConfig::from_model(cfg, opts.mode, opts.seed)
        };
        let mut generator = BatchGenerator::new(train_records.clone(), gen_cfg)?;
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        let mut seen = 0usize;

        for (batch_idx, batch) in generator.by_ref().enumerate() {
            let batch = batch?;
            let scale = 1.0 / batch.len() as f32;
            for i in 0..batch.len() {
                let seq = batch.sequence(i);
                let target = if batch.labels[i] == positive { 1.0f32 } else { 0.0 };
                // Masks depend on the sample, not the epoch, so an lr=0 run
                // repeats the identical loss every epoch.
                let dropout_seed = rng::mix(&[
                    rng::mix_tag(opts.seed, "dropout"),
                    rng::mix_tag(0, &batch.ids[i]),
                    batch.starts[i] as u64,
                ]);
                let mut tape = Tape::new();
                let mut run = || -> Result<f64> {
                    let (p, binding) =
                        model.forward_on_tape(&mut tape, &seq, &ForwardMode::Train { dropout_seed })?;
                    let prob = tape.value(p).item()?;
                    let loss = tape.bce_loss(p, target)?;
                    let loss_val = tape.value(loss).item()? as f64;
                    let scaled = tape.affine(loss, scale, 0.0)?;
                    tape.backward(scaled)?;
                    model.accumulate_grads(&tape, &binding)?;
                    if (prob >= 0.5) == (target >= 0.5) {
                        correct += 1;
                    }
                    Ok(loss_val)
                };
                match run() {
                    Ok(l) => loss_sum += l,
                    Err(Error::NonFinite { .. }) => {
                        return Err(Error::Diverged { epoch, batch: batch_idx })
                    }
                    Err(e) => return Err(e),
                }
                seen += 1;
            }
            if cfg.lr > 0.0 {
                sgd_step(model.params_mut(), cfg.lr as f32)?;
            } else {
                for p in model.params_mut() {
                    p.zero_grad();
                }
            }
        }
        skipped += generator.skipped();
        if seen == 0 {
            return Err(Error::Manifest("train: no readable training sequences".into()));
        }

        let report = evaluate_model(&model, manifest, SplitSet::Test, &EvalOptions {
            positive_label: Some(positive.clone()),
            ..EvalOptions::default()
        })?;
        let val_loss = validation_loss(&report);
        curve.push(CurveRow {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_acc: correct as f64 / seen as f64,
            val_loss,
            val_acc: report.accuracy,
        });
        epochs_run = epoch + 1;
        log::info!(
            "epoch {epoch}: train_loss {:.4} train_acc {:.3} val_acc {:.3}",
            loss_sum / seen as f64,
            correct as f64 / seen as f64,
            report.accuracy
        );
        if let Some(target) = opts.stop_at_val_accuracy {
            if report.accuracy >= target {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model,
        curve,
        epochs_run,
        skipped_sequences: skipped,
    })
}

/// Mean BCE of the per-video probabilities in an evaluation report.
fn validation_loss(report: &MetricsReport) -> f64 {
    if report.predictions.is_empty() {
        return f64::NAN;
    }
    let eps = 1e-7f64;
    report
        .predictions
        .iter()
        .map(|p| {
            let prob = p.probability.clamp(eps, 1.0 - eps);
            if p.actual_positive {
                -prob.ln()
            } else {
                -(1.0 - prob).ln()
            }
        })
        .sum::<f64>()
        / report.predictions.len() as f64
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub threshold: f64,
    /// Per-video probability: one whole-video sequence, or max over sliding
    /// windows.
    pub mode: SampleMode,
    pub window_seconds: f64,
    pub positive_label: Option<String>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            threshold: 0.5,
            mode: SampleMode::SingleSequence,
            window_seconds: 1.0,
            positive_label: None,
        }
    }
}

/// Score one stored video into a single probability under the given mode.
pub fn video_probability(
    scorer: &dyn WindowScorer,
    meta: &VideoMeta,
    mode: SampleMode,
    window_seconds: f64,
) -> Result<f32> {
    let cfg = StreamConfig {
        fps: meta.fps,
        window_seconds,
        threshold: 0.5,
        emit_stride: None,
    };
    Ok(infer_video_meta(scorer, meta, mode, &cfg)?.max_probability)
}

pub fn evaluate_model(
    model: &SequenceClassifier<f32>,
    manifest: &DatasetManifest,
    split: SplitSet,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    let records = manifest.records_for(split);
    if records.is_empty() {
        return Err(Error::Manifest(format!("{split:?} split is empty")));
    }
    let positive = positive_label(manifest, opts.positive_label.as_ref())?;
    let mut predictions = Vec::with_capacity(records.len());
    for meta in &records {
        let p = video_probability(model, meta, opts.mode, opts.window_seconds)? as f64;
        predictions.push(PredictionRecord {
            id: meta.id.clone(),
            probability: p,
            predicted_positive: p >= opts.threshold,
            actual_positive: meta.label == positive,
        });
    }
    Ok(MetricsReport::from_predictions(predictions))
}
