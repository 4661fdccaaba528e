//! Accuracy-threshold anomaly detection.
//!
//! The operator knows which application should be running. A monitored run is
//! anomalous when the fraction of its patterns recognized as that application
//! falls strictly below `baseline_accuracy[expected] * theta_th`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::learn::PhenotypeModel;
use crate::patterns::PatternVector;
use crate::{AppKind, Error, Result};

pub const DEFAULT_THETA: f64 = 0.95;
pub const DEFAULT_MIN_SNIPPETS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectOptions {
    pub theta_th: f64,
    /// Fewer patterns than this is an error rather than a verdict.
    pub min_snippets: usize,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self {
            theta_th: DEFAULT_THETA,
            min_snippets: DEFAULT_MIN_SNIPPETS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionVerdict {
    pub expected: AppKind,
    pub observed_accuracy: f64,
    pub threshold: f64,
    pub theta_th: f64,
    pub anomalous: bool,
    pub snippet_count: usize,
    /// Predicted label counts.
    pub confusion: BTreeMap<AppKind, usize>,
    /// Anomaly intensity recorded on the monitored trace, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anomaly_intensity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<u32>,
}

pub fn detect(
    model: &PhenotypeModel,
    patterns: &[PatternVector],
    expected: AppKind,
    options: &DetectOptions,
) -> Result<DetectionVerdict> {
    let theta = options.theta_th;
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::invalid(format!("theta_th must be in (0, 1], got {theta}")));
    }
    let baseline = *model
        .baseline_accuracy
        .get(&expected)
        .ok_or_else(|| Error::UnknownLabel(format!("'{expected}' is not a label of this model")))?;
    if patterns.is_empty() {
        return Err(Error::invalid("no patterns to monitor"));
    }
    if patterns.len() < options.min_snippets {
        return Err(Error::invalid(format!(
            "{} patterns is below the minimum of {}",
            patterns.len(),
            options.min_snippets
        )));
    }

    let preds = model.recognize_all(patterns)?;
    let mut confusion = BTreeMap::new();
    for p in &preds {
        *confusion.entry(*p).or_insert(0) += 1;
    }
    let hits = confusion.get(&expected).copied().unwrap_or(0);
    let observed = hits as f64 / preds.len() as f64;
    let threshold = baseline * theta;
    let run_id = patterns[0].run_id;
    let same_run = patterns.iter().all(|p| p.run_id == run_id);

    Ok(DetectionVerdict {
        expected,
        observed_accuracy: observed,
        threshold,
        theta_th: theta,
        anomalous: observed < threshold,
        snippet_count: preds.len(),
        confusion,
        anomaly_intensity: None,
        run_id: same_run.then_some(run_id),
    })
}

/// Mean monitored accuracy per (intensity, application).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub apps: Vec<AppKind>,
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub intensity: Option<f64>,
    /// One cell per entry of `apps`; `None` where no verdict exists.
    pub cells: Vec<Option<f64>>,
}

pub fn intensity_label(a: f64) -> String {
    if a == 0.0 {
        "Clean".to_string()
    } else {
        format!("With {}% anomaly", (a * 100.0).round() as i64)
    }
}

/// Groups verdicts by recorded intensity (unknown counts as clean) and by
/// expected application. Rows ascend by intensity.
pub fn detection_report(verdicts: &[DetectionVerdict]) -> DetectionReport {
    let mut apps: Vec<AppKind> = verdicts.iter().map(|v| v.expected).collect();
    apps.sort_unstable();
    apps.dedup();

    // intensities keyed in per-mille to group float values robustly
    let mut groups: BTreeMap<i64, BTreeMap<AppKind, (f64, usize)>> = BTreeMap::new();
    for v in verdicts {
        let key = (v.anomaly_intensity.unwrap_or(0.0) * 1000.0).round() as i64;
        let cell = groups.entry(key).or_default().entry(v.expected).or_insert((0.0, 0));
        cell.0 += v.observed_accuracy;
        cell.1 += 1;
    }
    let rows = groups
        .into_iter()
        .map(|(key, cells)| {
            let intensity = key as f64 / 1000.0;
            ReportRow {
                label: intensity_label(intensity),
                intensity: Some(intensity),
                cells: apps
                    .iter()
                    .map(|a| cells.get(a).map(|(s, n)| s / *n as f64))
                    .collect(),
            }
        })
        .collect();
    DetectionReport { apps, rows }
}

impl DetectionReport {
    pub fn row(&self, label: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn cell(&self, row: &str, app: AppKind) -> Option<f64> {
        let col = self.apps.iter().position(|&a| a == app)?;
        self.row(row)?.cells[col]
    }

    /// Fixed-width text table, two decimals per cell.
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(8);
        let mut out = format!("{:width$}", "");
        for a in &self.apps {
            let _ = write!(out, " {:>12}", a.name());
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{:width$}", r.label);
            for c in &r.cells {
                match c {
                    Some(v) => {
                        let _ = write!(out, " {:>12.2}", v);
                    }
                    None => {
                        let _ = write!(out, " {:>12}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}
