//! Per-fold metrics, mean/std aggregation and report rendering.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, LossKind};
use crate::metrics::ConfusionMatrix;
use crate::{Error, Result};

/// Column order used in `folds.csv` and the aggregate block.
pub const METRIC_NAMES: [&str; 9] = [
    "auc",
    "precision_pos",
    "precision_neg",
    "sensitivity_pos",
    "sensitivity_neg",
    "accuracy",
    "f1_threshold",
    "trust_pos",
    "trust_neg",
];

/// Metrics compared across runs (higher is better for all of them).
pub const COMPARED_METRICS: [&str; 8] = [
    "auc",
    "precision_pos",
    "precision_neg",
    "sensitivity_pos",
    "sensitivity_neg",
    "accuracy",
    "trust_pos",
    "trust_neg",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub auc: f64,
    pub precision_pos: f64,
    pub precision_neg: f64,
    pub sensitivity_pos: f64,
    pub sensitivity_neg: f64,
    pub accuracy: f64,
    pub f1_threshold: f64,
    pub trust_pos: f64,
    pub trust_neg: f64,
    /// False when no test sample was predicted positive (precision reported as 1.0).
    pub precision_pos_defined: bool,
    pub precision_neg_defined: bool,
    pub confusion: ConfusionMatrix,
    pub selected_epoch: usize,
    pub val_accuracy_by_epoch: Vec<f64>,
}

impl FoldMetrics {
    pub fn metric(&self, name: &str) -> Option<f64> {
        Some(match name {
            "auc" => self.auc,
            "precision_pos" => self.precision_pos,
            "precision_neg" => self.precision_neg,
            "sensitivity_pos" => self.sensitivity_pos,
            "sensitivity_neg" => self.sensitivity_neg,
            "accuracy" => self.accuracy,
            "f1_threshold" => self.f1_threshold,
            "trust_pos" => self.trust_pos,
            "trust_neg" => self.trust_neg,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub name: String,
    pub mean: f64,
    /// Sample standard deviation across folds.
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn aggregate(folds: &[FoldMetrics]) -> Vec<MetricSummary> {
    METRIC_NAMES
        .iter()
        .map(|&name| {
            let vals: Vec<f64> = folds.iter().filter_map(|f| f.metric(name)).collect();
            let (mean, std) = mean_std(&vals);
            MetricSummary {
                name: name.to_string(),
                mean,
                std,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// `<loss>/<init>`, e.g. `auc_max/pretrained`.
    pub label: String,
    pub loss: LossKind,
    pub init: String,
    pub seed: u64,
    pub data: String,
    /// `(positives, negatives)` in the pool that is folded.
    pub train_pool: (usize, usize),
    pub test: (usize, usize),
    pub prior: f64,
    pub folds: Vec<FoldMetrics>,
    pub aggregate: Vec<MetricSummary>,
    pub config: ExperimentConfig,
}

impl RunReport {
    pub fn summary(&self, name: &str) -> Option<&MetricSummary> {
        self.aggregate.iter().find(|m| m.name == name)
    }

    pub fn mean(&self, name: &str) -> f64 {
        self.summary(name).map_or(f64::NAN, |m| m.mean)
    }

    /// True when the aggregate block equals a fresh recomputation.
    pub fn aggregate_is_consistent(&self) -> bool {
        aggregate(&self.folds) == self.aggregate
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn folds_csv(&self) -> String {
        let mut out = String::from("fold,");
        out.push_str(&METRIC_NAMES.join(","));
        out.push_str(",selected_epoch,seed\n");
        for f in &self.folds {
            let _ = write!(out, "{}", f.fold);
            for name in METRIC_NAMES {
                let _ = write!(out, ",{}", f.metric(name).unwrap());
            }
            let _ = writeln!(out, ",{},{}", f.selected_epoch, self.seed);
        }
        out
    }

    /// Writes `report.json` and `folds.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("report.json");
        std::fs::write(&json, self.to_json()?).map_err(|e| Error::io(&json, e))?;
        let csv = dir.join("folds.csv");
        std::fs::write(&csv, self.folds_csv()).map_err(|e| Error::io(&csv, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Best run per compared metric: exactly one row index per column (the
/// first on ties).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    /// `means[row][column]`
    pub means: Vec<Vec<f64>>,
    pub stds: Vec<Vec<f64>>,
    /// `best[column]` is the winning row index.
    pub best: Vec<usize>,
}

impl GridSummary {
    pub fn from_reports(reports: &[RunReport]) -> Self {
        let columns: Vec<String> = COMPARED_METRICS.iter().map(|s| s.to_string()).collect();
        let rows = reports.iter().map(|r| r.label.clone()).collect();
        let means: Vec<Vec<f64>> = reports
            .iter()
            .map(|r| COMPARED_METRICS.iter().map(|m| r.mean(m)).collect())
            .collect();
        let stds = reports
            .iter()
            .map(|r| {
                COMPARED_METRICS
                    .iter()
                    .map(|m| r.summary(m).map_or(f64::NAN, |s| s.std))
                    .collect()
            })
            .collect();
        let best = (0..columns.len())
            .map(|c| {
                let mut best = 0;
                for r in 1..means.len() {
                    if means[r][c] > means[best][c] {
                        best = r;
                    }
                }
                best
            })
            .collect();
        Self {
            rows,
            columns,
            means,
            stds,
            best,
        }
    }
}

fn pretty_init(init: &str) -> &str {
    match init {
        "pretrained" => "Self-supervised",
        _ => "Scratch",
    }
}

fn pretty_loss(loss: LossKind) -> &'static str {
    match loss {
        LossKind::Ce => "CE Opt",
        LossKind::AucMax => "AUC Max",
    }
}

fn cell(r: &RunReport, metric: &str, overall_best: bool) -> String {
    match r.summary(metric) {
        Some(m) => format!(
            "{:.4}{} ± {:.1}%",
            m.mean,
            if overall_best { "*" } else { "" },
            m.std * 100.0
        ),
        None => "n/a".into(),
    }
}

/// Markdown tables: precision and sensitivity per class, positive-class
/// trust pivoted by loss and initialization, and AUC. Within each loss
/// the best value is bold; `*` marks the best across all runs.
pub fn render_tables(reports: &[RunReport]) -> String {
    let mut out = String::new();
    let best_overall = |metric: &str| -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, r) in reports.iter().enumerate() {
            if best.is_none_or(|b| r.mean(metric) > reports[b].mean(metric)) {
                best = Some(i);
            }
        }
        best
    };
    let best_in_loss = |metric: &str, loss: LossKind| -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, r) in reports.iter().enumerate().filter(|(_, r)| r.loss == loss) {
            if best.is_none_or(|b| r.mean(metric) > reports[b].mean(metric)) {
                best = Some(i);
            }
        }
        best
    };
    let decorated = |i: usize, metric: &str| -> String {
        let r = &reports[i];
        let s = cell(r, metric, best_overall(metric) == Some(i));
        let group = reports.iter().filter(|o| o.loss == r.loss).count();
        if group > 1 && best_in_loss(metric, r.loss) == Some(i) {
            return format!("**{s}**");
        }
        s
    };

    for (title, neg, pos) in [
        ("Precision", "precision_neg", "precision_pos"),
        ("Sensitivity", "sensitivity_neg", "sensitivity_pos"),
    ] {
        let _ = writeln!(out, "### {title} on the held-out test split\n");
        let _ = writeln!(out, "| Initialization | Negative | Positive |");
        let _ = writeln!(out, "|---|---|---|");
        for (i, r) in reports.iter().enumerate() {
            let _ = writeln!(
                out,
                "| {} ({}) | {} | {} |",
                pretty_init(&r.init),
                pretty_loss(r.loss),
                decorated(i, neg),
                decorated(i, pos)
            );
        }
        out.push('\n');
    }

    let _ = writeln!(out, "### Positive-class trust\n");
    let _ = writeln!(out, "| Cost Function | Scratch | Self-supervised |");
    let _ = writeln!(out, "|---|---|---|");
    for loss in [LossKind::Ce, LossKind::AucMax] {
        let find = |init: &str| {
            reports
                .iter()
                .position(|r| r.loss == loss && r.init == init)
                .map_or("n/a".to_string(), |i| decorated(i, "trust_pos"))
        };
        if reports.iter().any(|r| r.loss == loss) {
            let _ = writeln!(
                out,
                "| {} | {} | {} |",
                pretty_loss(loss),
                find("scratch"),
                find("pretrained")
            );
        }
    }
    out.push('\n');

    let _ = writeln!(out, "### ROC AUC\n");
    let _ = writeln!(out, "| Run | AUC |");
    let _ = writeln!(out, "|---|---|");
    for (i, r) in reports.iter().enumerate() {
        let _ = writeln!(
            out,
            "| {} ({}) | {} |",
            pretty_init(&r.init),
            pretty_loss(r.loss),
            decorated(i, "auc")
        );
    }
    out
}
