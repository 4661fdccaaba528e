//! CSV and JSON file formats.
//!
//! * trace: `<stem>.csv` with header `t,device_0,...` (kbps, 3 decimals) and
//!   a `<stem>.json` sidecar with the run metadata
//! * features: `t,f_0,...,f_19`, one row per second
//! * patterns: `patterns.csv` with header `label,run_id,start_t,c_0,...` and
//!   a `patterns.json` sidecar describing the layout and the pipeline
//! * model: one JSON document

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::imaging::QuantizationScale;
use crate::learn::{PhenotypeModel, MODEL_VERSION};
use crate::patterns::{pattern_len, FeatureSeries, PatternVector};
use crate::sim::ThroughputTrace;
use crate::{AppKind, Error, Result, FEATURE_COUNT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub app_label: AppKind,
    pub run_id: u32,
    pub seed: u64,
    pub anomaly_intensity: f64,
    pub rows: usize,
    pub cols: usize,
    pub mean_throughput_kbps: f64,
}

impl TraceMeta {
    pub fn of(trace: &ThroughputTrace) -> Self {
        Self {
            app_label: trace.app_label,
            run_id: trace.run_id,
            seed: trace.seed,
            anomaly_intensity: trace.anomaly_intensity,
            rows: trace.rows,
            cols: trace.cols,
            mean_throughput_kbps: trace.mean_throughput_kbps,
        }
    }
}

pub fn trace_stem(trace: &ThroughputTrace) -> String {
    format!("{}_{:04}", trace.app_label, trace.run_id)
}

pub fn trace_csv(trace: &ThroughputTrace) -> String {
    let d = trace.device_count();
    let mut out = String::with_capacity(trace.duration() * d * 8);
    out.push('t');
    for i in 0..d {
        let _ = write!(out, ",device_{i}");
    }
    out.push('\n');
    for (t, row) in trace.samples.iter().enumerate() {
        let _ = write!(out, "{t}");
        for v in row {
            let _ = write!(out, ",{v:.3}");
        }
        out.push('\n');
    }
    out
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`; returns the CSV path.
pub fn write_trace(dir: &Path, trace: &ThroughputTrace) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let stem = trace_stem(trace);
    let csv_path = dir.join(format!("{stem}.csv"));
    fs::write(&csv_path, trace_csv(trace))?;
    let meta = serde_json::to_string_pretty(&TraceMeta::of(trace))?;
    fs::write(dir.join(format!("{stem}.json")), meta + "\n")?;
    Ok(csv_path)
}

fn parse_f64(path: &Path, s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::format(path, format!("not a number: '{s}'")))
}

/// Reads a trace CSV and its JSON sidecar.
pub fn read_trace(csv_path: &Path) -> Result<ThroughputTrace> {
    let meta_path = csv_path.with_extension("json");
    let meta: TraceMeta = serde_json::from_str(&fs::read_to_string(&meta_path).map_err(|e| {
        Error::format(&meta_path, format!("missing trace metadata: {e}"))
    })?)
    .map_err(|e| Error::format(&meta_path, e.to_string()))?;

    let mut reader = csv::Reader::from_path(csv_path)?;
    let devices = meta.rows * meta.cols;
    let header = reader.headers()?.clone();
    if header.len() != devices + 1 || &header[0] != "t" {
        return Err(Error::format(
            csv_path,
            format!("expected t plus {devices} device columns, got {} columns", header.len()),
        ));
    }
    let mut samples = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let t = parse_f64(csv_path, &rec[0])?;
        if t != i as f64 {
            return Err(Error::format(csv_path, format!("row {i} has t = {t}")));
        }
        let row = rec.iter().skip(1).map(|s| parse_f64(csv_path, s)).collect::<Result<Vec<_>>>()?;
        if row.iter().any(|v| *v < 0.0) {
            return Err(Error::format(csv_path, format!("negative throughput at t = {i}")));
        }
        samples.push(row);
    }
    Ok(ThroughputTrace {
        app_label: meta.app_label,
        run_id: meta.run_id,
        seed: meta.seed,
        anomaly_intensity: meta.anomaly_intensity,
        rows: meta.rows,
        cols: meta.cols,
        mean_throughput_kbps: meta.mean_throughput_kbps,
        samples,
    })
}

/// Every trace CSV in `dir` (those with a JSON sidecar), by file name.
pub fn read_trace_dir(dir: &Path) -> Result<Vec<ThroughputTrace>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv") && p.with_extension("json").exists())
        .collect();
    paths.sort();
    paths.iter().map(|p| read_trace(p)).collect()
}

pub fn features_csv(series: &FeatureSeries) -> String {
    let mut out = String::from("t");
    for f in 0..FEATURE_COUNT {
        let _ = write!(out, ",f_{f}");
    }
    out.push('\n');
    for (t, v) in series.values.iter().enumerate() {
        let _ = write!(out, "{t}");
        for x in v.0 {
            let _ = write!(out, ",{x}");
        }
        out.push('\n');
    }
    out
}

/// Layout and provenance of a pattern file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternMeta {
    /// Coefficients per pattern.
    pub dim: usize,
    pub include_diagonal: bool,
    /// Always `"upper-triangle-lexicographic"`: `(0,1), (0,2), ..., (18,19)`,
    /// with `(i,i)` entries first in each row when the diagonal is included.
    pub pair_ordering: String,
    pub feature_names: Vec<String>,
    pub levels: usize,
    pub window_s: usize,
    pub scale: QuantizationScale,
    pub rows: usize,
    pub cols: usize,
}

pub const PAIR_ORDERING: &str = "upper-triangle-lexicographic";

impl PatternMeta {
    pub fn new(scale: QuantizationScale, window_s: usize, include_diagonal: bool, rows: usize, cols: usize) -> Self {
        Self {
            dim: pattern_len(FEATURE_COUNT, include_diagonal),
            include_diagonal,
            pair_ordering: PAIR_ORDERING.to_string(),
            feature_names: crate::texture::FeatureVector::names(),
            levels: scale.levels,
            window_s,
            scale,
            rows,
            cols,
        }
    }
}

pub fn patterns_csv(patterns: &[PatternVector], dim: usize) -> String {
    let mut out = String::from("label,run_id,start_t");
    for c in 0..dim {
        let _ = write!(out, ",c_{c}");
    }
    out.push('\n');
    for p in patterns {
        let _ = write!(out, "{},{},{}", p.label, p.run_id, p.start_t);
        for c in &p.coeffs {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    out
}

/// Writes `patterns.csv` and `patterns.json` into `dir`.
pub fn write_patterns(dir: &Path, patterns: &[PatternVector], meta: &PatternMeta) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("patterns.csv"), patterns_csv(patterns, meta.dim))?;
    fs::write(dir.join("patterns.json"), serde_json::to_string_pretty(meta)? + "\n")?;
    Ok(())
}

pub fn read_patterns(dir: &Path) -> Result<(PatternMeta, Vec<PatternVector>)> {
    let meta_path = dir.join("patterns.json");
    let meta: PatternMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?)
        .map_err(|e| Error::format(&meta_path, e.to_string()))?;
    let csv_path = dir.join("patterns.csv");
    let mut reader = csv::Reader::from_path(&csv_path)?;
    if reader.headers()?.len() != meta.dim + 3 {
        return Err(Error::format(&csv_path, format!("expected {} coefficient columns", meta.dim)));
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let label: AppKind = rec[0].parse()?;
        let run_id = rec[1]
            .parse()
            .map_err(|_| Error::format(&csv_path, format!("bad run id '{}'", &rec[1])))?;
        let start_t = rec[2]
            .parse()
            .map_err(|_| Error::format(&csv_path, format!("bad start '{}'", &rec[2])))?;
        let coeffs = rec.iter().skip(3).map(|s| parse_f64(&csv_path, s)).collect::<Result<Vec<_>>>()?;
        out.push(PatternVector {
            label,
            run_id,
            start_t,
            include_diagonal: meta.include_diagonal,
            coeffs,
        });
    }
    Ok((meta, out))
}

pub fn save_model(path: &Path, model: &PhenotypeModel) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string(model)? + "\n")?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<PhenotypeModel> {
    let model: PhenotypeModel = serde_json::from_str(&fs::read_to_string(path)?)
        .map_err(|e| Error::format(path, e.to_string()))?;
    if model.version != MODEL_VERSION {
        return Err(Error::ConfigMismatch(format!(
            "model version {} is not supported (expected {MODEL_VERSION})",
            model.version
        )));
    }
    Ok(model)
}

/// Refuses patterns that were produced by a different pipeline than the model's.
pub fn check_compatible(model: &PhenotypeModel, meta: &PatternMeta) -> Result<()> {
    let c = &model.config;
    let mut problems = Vec::new();
    if c.levels != meta.levels {
        problems.push(format!("levels {} vs {}", c.levels, meta.levels));
    }
    if c.window_s != meta.window_s {
        problems.push(format!("window {} vs {}", c.window_s, meta.window_s));
    }
    if c.include_diagonal != meta.include_diagonal {
        problems.push(format!("include_diagonal {} vs {}", c.include_diagonal, meta.include_diagonal));
    }
    if model.scale != meta.scale {
        problems.push("quantization scale differs".to_string());
    }
    if meta.pair_ordering != PAIR_ORDERING {
        problems.push(format!("pair ordering '{}'", meta.pair_ordering));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::ConfigMismatch(format!("model vs patterns: {}", problems.join("; "))))
    }
}
