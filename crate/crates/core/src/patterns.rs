//! Feature time series, sliding-window snippets and correlation patterns.

use serde::{Deserialize, Serialize};

use crate::imaging::{quantize, QuantizationScale};
use crate::sim::ThroughputTrace;
use crate::texture::{feature_vector, FeatureVector};
use crate::{AppKind, Error, Result, FEATURE_COUNT};

/// Per-second feature vectors of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSeries {
    pub app_label: AppKind,
    pub run_id: u32,
    pub values: Vec<FeatureVector>,
}

impl FeatureSeries {
    /// Quantizes every time sample of `trace` on a `rows x cols` image and
    /// extracts its features.
    pub fn from_trace(
        trace: &ThroughputTrace,
        scale: &QuantizationScale,
        rows: usize,
        cols: usize,
    ) -> Result<Self> {
        let values = trace
            .samples
            .iter()
            .map(|s| feature_vector(&quantize(s, scale, rows, cols)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            app_label: trace.app_label,
            run_id: trace.run_id,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A window of consecutive feature vectors.
#[derive(Debug, Clone, Copy)]
pub struct Snippet<'a> {
    pub start_t: usize,
    pub window: &'a [FeatureVector],
}

impl Snippet<'_> {
    pub fn column(&self, f: usize) -> impl Iterator<Item = f64> + '_ {
        self.window.iter().map(move |v| v.0[f])
    }
}

/// All stride-1 windows of length `window_s`: `T - T_S + 1` of them.
pub fn slice(series: &FeatureSeries, window_s: usize) -> Result<Vec<Snippet<'_>>> {
    if window_s < 2 {
        return Err(Error::invalid(format!("window must be at least 2 s, got {window_s}")));
    }
    if window_s > series.len() {
        return Err(Error::invalid(format!(
            "window {window_s} s exceeds the {} s series of {} run {}",
            series.len(),
            series.app_label,
            series.run_id
        )));
    }
    Ok(series
        .values
        .windows(window_s)
        .enumerate()
        .map(|(start_t, window)| Snippet { start_t, window })
        .collect())
}

/// Pearson correlation; 0 when either series is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::invalid("correlation needs at least two samples"));
    }
    if is_constant(x) || is_constant(y) {
        return Ok(0.0);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    Ok(correlation(sxy, sxx, syy))
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|&v| v == x[0])
}

fn correlation(sxy: f64, sxx: f64, syy: f64) -> f64 {
    let denom = (sxx * syy).sqrt();
    if !(denom > 0.0) {
        return 0.0;
    }
    (sxy / denom).clamp(-1.0, 1.0)
}

/// Number of coefficients in a pattern over `n` features.
pub fn pattern_len(n: usize, include_diagonal: bool) -> usize {
    if include_diagonal {
        n * (n + 1) / 2
    } else {
        n * (n - 1) / 2
    }
}

/// Upper-triangle `(i, j)` pairs in lexicographic order.
pub fn pair_order(n: usize, include_diagonal: bool) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| {
            let first = if include_diagonal { i } else { i + 1 };
            (first..n).map(move |j| (i, j))
        })
        .collect()
}

/// A communication pattern: pairwise correlations of one snippet's feature
/// columns, in [`pair_order`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternVector {
    pub label: AppKind,
    pub run_id: u32,
    pub start_t: usize,
    pub include_diagonal: bool,
    pub coeffs: Vec<f64>,
}

/// Correlation coefficients of one snippet. Diagonal entries, when
/// requested, are 1 for varying columns and 0 for constant ones.
pub fn pattern_of(snippet: &Snippet<'_>, include_diagonal: bool) -> Vec<f64> {
    let n = snippet.window.len() as f64;
    let mut centered: Vec<[f64; FEATURE_COUNT]> = Vec::with_capacity(snippet.window.len());
    let mut constant = [true; FEATURE_COUNT];
    let first = snippet.window[0].0;
    let mut mean = [0.0; FEATURE_COUNT];
    for row in snippet.window {
        for f in 0..FEATURE_COUNT {
            mean[f] += row.0[f];
            if row.0[f] != first[f] {
                constant[f] = false;
            }
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    for row in snippet.window {
        let mut c = [0.0; FEATURE_COUNT];
        for f in 0..FEATURE_COUNT {
            c[f] = row.0[f] - mean[f];
        }
        centered.push(c);
    }
    let mut ss = [0.0; FEATURE_COUNT];
    for c in &centered {
        for f in 0..FEATURE_COUNT {
            ss[f] += c[f] * c[f];
        }
    }

    pair_order(FEATURE_COUNT, include_diagonal)
        .into_iter()
        .map(|(i, j)| {
            if constant[i] || constant[j] {
                0.0
            } else if i == j {
                1.0
            } else {
                let sxy: f64 = centered.iter().map(|c| c[i] * c[j]).sum();
                correlation(sxy, ss[i], ss[j])
            }
        })
        .collect()
}

/// Every pattern of one run, in window order.
pub fn patterns_of_series(
    series: &FeatureSeries,
    window_s: usize,
    include_diagonal: bool,
) -> Result<Vec<PatternVector>> {
    Ok(slice(series, window_s)?
        .iter()
        .map(|s| PatternVector {
            label: series.app_label,
            run_id: series.run_id,
            start_t: s.start_t,
            include_diagonal,
            coeffs: pattern_of(s, include_diagonal),
        })
        .collect())
}
