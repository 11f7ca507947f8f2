//! Per-epoch learning curves, written as CSV and a self-contained SVG plot.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LearningCurve {
    pub rows: Vec<CurveRow>,
}

impl LearningCurve {
    pub fn push(&mut self, row: CurveRow) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Two stacked panels: losses on top, accuracies below.
    pub fn to_svg(&self) -> String {
        const W: f64 = 640.0;
        const PANEL_H: f64 = 220.0;
        const MARGIN: f64 = 45.0;
        let n = self.rows.len();
        let mut svg = String::new();
        svg.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{}\" \
             font-family=\"sans-serif\" font-size=\"11\">\n",
            PANEL_H * 2.0 + 20.0
        ));
        if n == 0 {
            svg.push_str("<text x=\"20\" y=\"30\">no epochs recorded</text></svg>\n");
            return svg;
        }
        let loss_max = self
            .rows
            .iter()
            .flat_map(|r| [r.train_loss, r.val_loss])
            .fold(1e-9f64, f64::max);
        let x_of = |i: usize| MARGIN + (W - 2.0 * MARGIN) * i as f64 / (n.max(2) - 1) as f64;
        let panel = |svg: &mut String,
                     top: f64,
                     title: &str,
                     max: f64,
                     series: [(&str, Vec<f64>, &str); 2]| {
            let y_of = |v: f64| top + (PANEL_H - MARGIN) * (1.0 - (v / max).clamp(0.0, 1.0)) + 10.0;
            svg.push_str(&format!(
                "<text x=\"{MARGIN}\" y=\"{}\" font-weight=\"bold\">{title}</text>\n",
                top + 12.0
            ));
            // axes
            svg.push_str(&format!(
                "<line x1=\"{MARGIN}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"#999\"/>\n",
                top + PANEL_H - MARGIN + 10.0,
                W - MARGIN
            ));
            svg.push_str(&format!(
                "<line x1=\"{MARGIN}\" y1=\"{}\" x2=\"{MARGIN}\" y2=\"{}\" stroke=\"#999\"/>\n",
                top + 10.0,
                top + PANEL_H - MARGIN + 10.0
            ));
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" fill=\"#666\">{max:.3}</text>\n",
                2.0,
                top + 16.0
            ));
            for (li, (name, values, color)) in series.into_iter().enumerate() {
                let points: Vec<String> = values
                    .iter()
                    .enumerate()
                    .map(|(i, v)| format!("{:.1},{:.1}", x_of(i), y_of(*v)))
                    .collect();
                svg.push_str(&format!(
                    "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                    points.join(" ")
                ));
                svg.push_str(&format!(
                    "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{name}</text>\n",
                    W - MARGIN - 70.0,
                    top + 14.0 + 13.0 * li as f64
                ));
            }
        };
        panel(
            &mut svg,
            0.0,
            "loss",
            loss_max,
            [
                ("train", self.rows.iter().map(|r| r.train_loss).collect(), "#c0392b"),
                ("val", self.rows.iter().map(|r| r.val_loss).collect(), "#e67e22"),
            ],
        );
        panel(
            &mut svg,
            PANEL_H + 10.0,
            "accuracy",
            1.0,
            [
                ("train", self.rows.iter().map(|r| r.train_acc).collect(), "#27ae60"),
                ("val", self.rows.iter().map(|r| r.val_acc).collect(), "#2980b9"),
            ],
        );
        svg.push_str("</svg>\n");
        svg
    }

    pub fn write_svg(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_svg()).map_err(|e| Error::io(path, e))
    }
}
