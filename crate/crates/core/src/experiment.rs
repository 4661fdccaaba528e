//! Seeded experiment harness: corpus generation, the accuracy-vs-window
//! sweep and the threshold/anomaly study.
//!
//! Every random draw comes from a stream derived from the master seed and
//! the (purpose, application, run) coordinates, so reports are reproducible
//! bit for bit and independent of the thread count.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::detect::{detect, detection_report, DetectOptions, DetectionReport, DetectionVerdict};
use crate::imaging::{fit_scale, Companding, QuantizationScale};
use crate::learn::{train, PhenotypeModel, SplitSpec, SplitUnit, TrainConfig};
use crate::patterns::{patterns_of_series, FeatureSeries, PatternVector};
use crate::sim::{build_grid_topology, inject_anomaly, simulate_run, AppProfile, ThroughputTrace, Topology};
use crate::{par, seed, AppKind, Result};

/// Seed stream tags.
pub const STREAM_TRAIN: u64 = 1;
pub const STREAM_MONITOR: u64 = 2;
pub const STREAM_ANOMALY: u64 = 3;
const STREAM_SPLIT: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub levels: usize,
    pub window_s: usize,
    pub retention: f64,
    pub k: usize,
    pub theta_th: f64,
    pub train_fraction: f64,
    pub split_unit: SplitUnit,
    /// Training runs per class (reference scale is 200).
    pub runs_per_app: usize,
    /// Fresh runs per (application, intensity) cell of the anomaly study.
    pub monitored_runs: usize,
    pub intensities: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub include_diagonal: bool,
    pub companding: Companding,
    pub min_snippets: usize,
    pub seed: u64,
    /// Replacement profiles; classes not listed use their defaults.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub profiles: Vec<AppProfile>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            levels: 9,
            window_s: 100,
            retention: 0.95,
            k: 5,
            theta_th: 0.95,
            train_fraction: 0.8,
            split_unit: SplitUnit::Pattern,
            runs_per_app: 50,
            monitored_runs: 40,
            intensities: vec![0.1, 0.2, 0.3],
            rows: 10,
            cols: 10,
            include_diagonal: false,
            companding: Companding::Log { knee: 0.01 },
            min_snippets: crate::detect::DEFAULT_MIN_SNIPPETS,
            seed: 1,
            profiles: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn topology(&self) -> Result<Topology> {
        build_grid_topology(self.rows, self.cols, 0)
    }

    pub fn profile(&self, app: AppKind) -> AppProfile {
        self.profiles
            .iter()
            .find(|p| p.kind == app)
            .cloned()
            .unwrap_or_else(|| AppProfile::default_for(app))
    }

    fn train_config(&self, window_s: usize) -> TrainConfig {
        TrainConfig {
            window_s,
            include_diagonal: self.include_diagonal,
            split: SplitSpec {
                train_fraction: self.train_fraction,
                seed: seed::derive(self.seed, &[STREAM_SPLIT]),
                unit: self.split_unit,
            },
            retention: self.retention,
            k: self.k,
        }
    }
}

/// Seed of one run on one stream.
pub fn run_seed(master: u64, stream: u64, app: AppKind, run: u32) -> u64 {
    seed::derive(master, &[stream, app.index() as u64, run as u64])
}

/// `runs` clean traces of `app` from the given seed stream.
pub fn simulate_runs(cfg: &RunConfig, topo: &Topology, app: AppKind, runs: usize, stream: u64) -> Result<Vec<ThroughputTrace>> {
    let profile = cfg.profile(app);
    let ids: Vec<u32> = (0..runs as u32).collect();
    par::try_map_collect(&ids, |&run| simulate_run(&profile, topo, run, run_seed(cfg.seed, stream, app, run)))
}

/// The labeled training corpus: `runs_per_app` runs of every class.
pub fn training_corpus(cfg: &RunConfig) -> Result<Vec<ThroughputTrace>> {
    let topo = cfg.topology()?;
    let mut out = Vec::new();
    for app in AppKind::ALL {
        out.extend(simulate_runs(cfg, &topo, app, cfg.runs_per_app, STREAM_TRAIN)?);
    }
    Ok(out)
}

pub fn fit_corpus_scale(cfg: &RunConfig, traces: &[ThroughputTrace]) -> Result<QuantizationScale> {
    fit_scale(traces, cfg.levels, cfg.companding)
}

pub fn feature_series(cfg: &RunConfig, traces: &[ThroughputTrace], scale: &QuantizationScale) -> Result<Vec<FeatureSeries>> {
    par::try_map_collect(traces, |t| FeatureSeries::from_trace(t, scale, cfg.rows, cfg.cols))
}

/// Patterns of every run, grouped per run in input order.
pub fn run_patterns(series: &[FeatureSeries], window_s: usize, include_diagonal: bool) -> Result<Vec<Vec<PatternVector>>> {
    par::try_map_collect(series, |s| patterns_of_series(s, window_s, include_diagonal))
}

/// A trained model together with the corpus artifacts it came from.
pub struct Trained {
    pub scale: QuantizationScale,
    pub series: Vec<FeatureSeries>,
    pub model: PhenotypeModel,
}

pub fn train_on_corpus(cfg: &RunConfig, traces: &[ThroughputTrace], window_s: usize) -> Result<Trained> {
    let scale = fit_corpus_scale(cfg, traces)?;
    let series = feature_series(cfg, traces, &scale)?;
    let patterns: Vec<PatternVector> = run_patterns(&series, window_s, cfg.include_diagonal)?.into_iter().flatten().collect();
    let model = train(&patterns, scale, &cfg.train_config(window_s))?;
    Ok(Trained { scale, series, model })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig8Row {
    pub window_s: usize,
    pub accuracy: BTreeMap<AppKind, f64>,
    pub mean_accuracy: f64,
    pub pca_dims: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig8Report {
    pub apps: Vec<AppKind>,
    pub rows: Vec<Fig8Row>,
}

impl Fig8Report {
    /// `window,<app>...,mean`, one row per window.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("window");
        for a in &self.apps {
            let _ = write!(out, ",{a}");
        }
        out.push_str(",mean\n");
        for r in &self.rows {
            let _ = write!(out, "{}", r.window_s);
            for a in &self.apps {
                let _ = write!(out, ",{:.6}", r.accuracy.get(a).copied().unwrap_or(f64::NAN));
            }
            let _ = writeln!(out, ",{:.6}", r.mean_accuracy);
        }
        out
    }
}

/// Held-out accuracy per class for each window size. Features are computed
/// once; each window gets its own split, PCA and database.
pub fn fig8(cfg: &RunConfig, windows: &[usize]) -> Result<Fig8Report> {
    let traces = training_corpus(cfg)?;
    let scale = fit_corpus_scale(cfg, &traces)?;
    let series = feature_series(cfg, &traces, &scale)?;
    drop(traces);
    let mut rows = Vec::new();
    for &w in windows {
        if let Some(short) = series.iter().find(|s| s.len() < w) {
            return Err(crate::Error::invalid(format!(
                "window {w} s exceeds the {} s run {} of {}",
                short.len(),
                short.run_id,
                short.app_label
            )));
        }
        let patterns: Vec<PatternVector> = run_patterns(&series, w, cfg.include_diagonal)?.into_iter().flatten().collect();
        let model = train(&patterns, scale, &cfg.train_config(w))?;
        let mean = model.baseline_accuracy.values().sum::<f64>() / model.baseline_accuracy.len() as f64;
        rows.push(Fig8Row {
            window_s: w,
            accuracy: model.baseline_accuracy.clone(),
            mean_accuracy: mean,
            pca_dims: model.pca.output_dim(),
        });
    }
    Ok(Fig8Report {
        apps: AppKind::ALL.to_vec(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table4Report {
    pub window_s: usize,
    pub theta_th: f64,
    pub apps: Vec<AppKind>,
    /// Held-out baseline accuracy R_p.
    pub normal: Vec<f64>,
    /// `R_p * theta_th`.
    pub thresholds: Vec<f64>,
    /// Mean monitored accuracy per intensity row (clean first).
    pub monitored: DetectionReport,
    /// Fraction of anomalous verdicts per (row, app), same layout as `monitored`.
    pub flagged: Vec<Vec<f64>>,
    pub pca_dims: usize,
    pub verdicts: Vec<DetectionVerdict>,
}

impl Table4Report {
    /// Row order: Normal, Thresholds, each anomaly intensity, then the clean
    /// monitored runs.
    pub fn text_rows(&self) -> Vec<(String, Vec<f64>)> {
        let mut rows = vec![
            ("Normal".to_string(), self.normal.clone()),
            ("Thresholds".to_string(), self.thresholds.clone()),
        ];
        let mut clean = None;
        for r in &self.monitored.rows {
            let cells: Vec<f64> = r.cells.iter().map(|c| c.unwrap_or(f64::NAN)).collect();
            if r.intensity == Some(0.0) {
                clean = Some(("Clean monitored".to_string(), cells));
            } else {
                rows.push((r.label.clone(), cells));
            }
        }
        rows.extend(clean);
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("row");
        for a in &self.apps {
            let _ = write!(out, ",{a}");
        }
        out.push('\n');
        for (label, cells) in self.text_rows() {
            out.push_str(&label);
            for c in cells {
                let _ = write!(out, ",{c:.6}");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let rows = self.text_rows();
        let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
        let mut out = format!("{:width$}", "");
        for a in &self.apps {
            let _ = write!(out, " {:>12}", a.name());
        }
        out.push('\n');
        for (label, cells) in rows {
            let _ = write!(out, "{label:width$}");
            for c in cells {
                let _ = write!(out, " {c:>12.2}");
            }
            out.push('\n');
        }
        out
    }

    pub fn false_positive_rate(&self) -> f64 {
        let clean: Vec<_> = self.verdicts.iter().filter(|v| v.anomaly_intensity == Some(0.0)).collect();
        if clean.is_empty() {
            return 0.0;
        }
        clean.iter().filter(|v| v.anomalous).count() as f64 / clean.len() as f64
    }
}

/// Trains at `cfg.window_s`, then monitors `cfg.monitored_runs` fresh runs of
/// every application at intensity 0 and at each of `cfg.intensities`.
pub fn table4(cfg: &RunConfig) -> Result<Table4Report> {
    let traces = training_corpus(cfg)?;
    let trained = train_on_corpus(cfg, &traces, cfg.window_s)?;
    drop(traces);
    let model = &trained.model;
    let topo = cfg.topology()?;
    let opts = DetectOptions {
        theta_th: cfg.theta_th,
        min_snippets: cfg.min_snippets,
    };
    let apps = AppKind::APPLICATIONS.to_vec();

    let mut intensities = vec![0.0];
    intensities.extend(cfg.intensities.iter().copied().filter(|&a| a > 0.0));

    let mut verdicts = Vec::new();
    for &app in &apps {
        let clean = simulate_runs(cfg, &topo, app, cfg.monitored_runs, STREAM_MONITOR)?;
        for (level, &a) in intensities.iter().enumerate() {
            let monitored: Vec<ThroughputTrace> = par::try_map_collect(&clean, |t| {
                inject_anomaly(t, a, run_seed(cfg.seed, STREAM_ANOMALY + 16 * level as u64, app, t.run_id))
            })?;
            let series = feature_series(cfg, &monitored, &trained.scale)?;
            let per_run = run_patterns(&series, cfg.window_s, cfg.include_diagonal)?;
            let cell: Vec<DetectionVerdict> = par::try_map_collect(&per_run, |patterns| {
                let mut v = detect(model, patterns, app, &opts)?;
                v.anomaly_intensity = Some(a);
                Ok::<_, crate::Error>(v)
            })?;
            verdicts.extend(cell);
        }
    }

    let monitored = detection_report(&verdicts);
    let flagged = monitored
        .rows
        .iter()
        .map(|r| {
            monitored
                .apps
                .iter()
                .map(|&app| {
                    let cell: Vec<_> = verdicts
                        .iter()
                        .filter(|v| v.expected == app && v.anomaly_intensity == r.intensity)
                        .collect();
                    cell.iter().filter(|v| v.anomalous).count() as f64 / cell.len().max(1) as f64
                })
                .collect()
        })
        .collect();

    Ok(Table4Report {
        window_s: cfg.window_s,
        theta_th: cfg.theta_th,
        normal: apps.iter().map(|a| model.baseline_accuracy[a]).collect(),
        thresholds: apps.iter().map(|a| model.baseline_accuracy[a] * cfg.theta_th).collect(),
        apps,
        monitored,
        flagged,
        pca_dims: model.pca.output_dim(),
        verdicts,
    })
}
