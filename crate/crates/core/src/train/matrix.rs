//! The comparison grid: every backbone x cell x head variant trained and
//! evaluated on one dataset, reported as an aligned table and CSV.

use rayon::prelude::*;

use super::metrics::{fmt_metric, MetricsReport};
use super::trainer::{evaluate_model, train, EvalOptions, TrainOptions};
use crate::dataset::manifest::{DatasetManifest, SplitSet};
use crate::layers::{BackboneKind, CellKind, ModelConfig};
use crate::rng;

#[derive(Clone, Debug)]
pub struct MatrixOptions {
    pub epochs: usize,
    pub seed: u64,
    pub threshold: f64,
    /// Run configurations in parallel (results are merged in grid order
    /// either way, and per-config seeds make parallelism order-free).
    pub parallel: bool,
}

impl Default for MatrixOptions {
    fn default() -> Self {
        MatrixOptions {
            epochs: 1,
            seed: 0,
            threshold: 0.5,
            parallel: true,
        }
    }
}

pub struct MatrixEntry {
    pub key: String,
    pub config: ModelConfig,
    pub outcome: Result<MetricsReport, String>,
}

pub struct MatrixReport {
    pub entries: Vec<MatrixEntry>,
}

/// All 4 backbones x 2 cells x 2 head variants over `base`.
pub fn grid_configs(base: &ModelConfig) -> Vec<ModelConfig> {
    let mut configs = Vec::with_capacity(16);
    for backbone in BackboneKind::ALL {
        for cell in CellKind::ALL {
            for with_pred_head in [true, false] {
                configs.push(ModelConfig {
                    backbone,
                    cell,
                    with_pred_head,
                    freeze_boundary: base.freeze_boundary,
                    ..base.clone()
                });
            }
        }
    }
    configs
}

pub fn run_matrix(
    base: &ModelConfig,
    manifest: &DatasetManifest,
    opts: &MatrixOptions,
) -> MatrixReport {
    let configs = grid_configs(base);
    let run_one = |cfg: &ModelConfig| -> MatrixEntry {
        let key = cfg.describe();
        let train_opts = TrainOptions {
            epochs: opts.epochs,
            seed: rng::mix(&[opts.seed, rng::mix_tag(0, &key)]),
            ..TrainOptions::default()
        };
        let outcome = train(cfg, manifest, &train_opts)
            .and_then(|o| {
                evaluate_model(&o.model, manifest, SplitSet::Test, &EvalOptions {
                    threshold: opts.threshold,
                    ..EvalOptions::default()
                })
            })
            .map_err(|e| e.to_string());
        if let Err(e) = &outcome {
            log::warn!("matrix run {key} failed: {e}");
        }
        MatrixEntry {
            key,
            config: cfg.clone(),
            outcome,
        }
    };
    let entries = if opts.parallel {
        configs.par_iter().map(run_one).collect()
    } else {
        configs.iter().map(run_one).collect()
    };
    MatrixReport { entries }
}

impl MatrixReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("config,accuracy,precision,recall,f1,tp,fp,tn,fn\n");
        for e in &self.entries {
            match &e.outcome {
                Ok(m) => out.push_str(&format!(
                    "{},{:.4},{},{},{},{},{},{},{}\n",
                    e.key,
                    m.accuracy,
                    fmt_metric(m.precision),
                    fmt_metric(m.recall),
                    fmt_metric(m.f1),
                    m.tp,
                    m.fp,
                    m.tn,
                    m.fn_
                )),
                Err(_) => out.push_str(&format!("{},n/a,n/a,n/a,n/a,0,0,0,0\n", e.key)),
            }
        }
        out
    }

    /// Aligned text table shaped like the published comparison.
    pub fn to_table(&self) -> String {
        let pct = |v: Option<f64>| match v {
            Some(x) => format!("{:.1}%", x * 100.0),
            None => "n/a".to_string(),
        };
        let mut rows: Vec<[String; 5]> = vec![[
            "Model".into(),
            "Accuracy".into(),
            "Precision".into(),
            "Recall".into(),
            "F1-Score".into(),
        ]];
        for e in &self.entries {
            let row = match &e.outcome {
                Ok(m) => [
                    e.key.clone(),
                    pct(Some(m.accuracy)),
                    pct(m.precision),
                    pct(m.recall),
                    pct(m.f1),
                ],
                Err(err) => [
                    e.key.clone(),
                    format!("failed: {err}"),
                    String::new(),
                    String::new(),
                    String::new(),
                ],
            };
            rows.push(row);
        }
        let widths: Vec<usize> = (0..5)
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in rows.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:<w$}"))
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 8));
                out.push('\n');
            }
        }
        out
    }
}
