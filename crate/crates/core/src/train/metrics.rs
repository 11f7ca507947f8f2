//! Confusion counts and the derived metric set (accuracy, precision, recall,
//! F1). Zero-denominator metrics are reported as undefined, never coerced.

use serde::Serialize;

/// One per-video prediction in an evaluation run.
#[derive(Clone, Debug, Serialize)]
pub struct PredictionRecord {
    pub id: String,
    pub probability: f64,
    pub predicted_positive: bool,
    pub actual_positive: bool,
}

#[derive(Clone, Debug, Default)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub predictions: Vec<PredictionRecord>,
}

pub fn f1_from_pr(precision: f64, recall: f64) -> f64 {
    2.0 * precision * recall / (precision + recall)
}

impl MetricsReport {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> MetricsReport {
        let total = tp + fp + tn + fn_;
        let accuracy = if total > 0 {
            (tp + tn) as f64 / total as f64
        } else {
            0.0
        };
        let precision = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
        let recall = (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(f1_from_pr(p, r)),
            _ => None,
        };
        MetricsReport {
            tp,
            fp,
            tn,
            fn_,
            accuracy,
            precision,
            recall,
            f1,
            predictions: Vec::new(),
        }
    }

    pub fn from_predictions(predictions: Vec<PredictionRecord>) -> MetricsReport {
        let mut counts = [0usize; 4];
        for p in &predictions {
            let idx = match (p.predicted_positive, p.actual_positive) {
                (true, true) => 0,
                (true, false) => 1,
                (false, false) => 2,
                (false, true) => 3,
            };
            counts[idx] += 1;
        }
        let mut report = Self::from_counts(counts[0], counts[1], counts[2], counts[3]);
        report.predictions = predictions;
        report
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// "n/a" for undefined metrics in CSV and table output.
pub fn fmt_metric(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "n/a".to_string(),
    }
}
