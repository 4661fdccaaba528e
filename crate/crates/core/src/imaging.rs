//! Communication images: one time sample of a trace as a grid of gray levels.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::sim::ThroughputTrace;
use crate::{Error, Result};

/// How throughput is mapped onto `[0, 1]` before rounding to a level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Companding {
    /// `v / G`.
    Linear,
    /// `ln(1 + v / (knee * G)) / ln(1 + 1 / knee)`. Resolves low-throughput
    /// classes that a linear map folds into level 0.
    Log { knee: f64 },
}

impl Companding {
    fn apply(self, x: f64) -> f64 {
        match self {
            Companding::Linear => x,
            Companding::Log { knee } => (x / knee).ln_1p() / (1.0 / knee).ln_1p(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizationScale {
    /// Throughput mapped to the top gray level, kbps.
    pub max_throughput: f64,
    pub levels: usize,
    pub companding: Companding,
}

impl QuantizationScale {
    pub fn new(max_throughput: f64, levels: usize) -> Result<Self> {
        Self::with_companding(max_throughput, levels, Companding::Linear)
    }

    pub fn with_companding(max_throughput: f64, levels: usize, companding: Companding) -> Result<Self> {
        if !(max_throughput > 0.0) || !max_throughput.is_finite() {
            return Err(Error::invalid(format!(
                "quantization maximum must be positive, got {max_throughput}"
            )));
        }
        if levels < 2 || levels > 256 {
            return Err(Error::invalid(format!("levels must be in 2..=256, got {levels}")));
        }
        match companding {
            Companding::Log { knee } if !(knee > 0.0) || !knee.is_finite() => {
                return Err(Error::invalid(format!("log knee must be positive, got {knee}")));
            }
            _ => {}
        }
        Ok(Self {
            max_throughput,
            levels,
            companding,
        })
    }

    /// Gray level of one throughput value.
    pub fn level(&self, v: f64) -> u8 {
        let top = (self.levels - 1) as f64;
        let x = (v / self.max_throughput).clamp(0.0, 1.0);
        let l = (self.companding.apply(x) * top).round();
        l.clamp(0.0, top) as u8
    }
}

/// Empirical percentile with linear interpolation between order statistics.
fn percentile(values: &mut [f64], q: f64) -> f64 {
    let n = values.len();
    let rank = q * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let (_, lo_v, rest) = values.select_nth_unstable_by(lo, f64::total_cmp);
    let lo_v = *lo_v;
    if hi == lo {
        return lo_v;
    }
    // hi == lo + 1 is the minimum of the upper partition
    let hi_v = rest.iter().copied().fold(f64::INFINITY, f64::min);
    lo_v + (rank - lo as f64) * (hi_v - lo_v)
}

/// Fraction of the corpus distribution used as the top of the scale.
pub const SCALE_PERCENTILE: f64 = 0.995;

/// Fits the global scale to the 99.5th percentile of every sample in the corpus.
pub fn fit_scale(traces: &[ThroughputTrace], levels: usize, companding: Companding) -> Result<QuantizationScale> {
    let mut all: Vec<f64> = traces
        .iter()
        .flat_map(|t| t.samples.iter().flatten().copied())
        .collect();
    if all.is_empty() {
        return Err(Error::Degenerate("cannot fit a scale to an empty corpus".into()));
    }
    let max = all.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::Degenerate("corpus throughput is all zero".into()));
    }
    let mut g = percentile(&mut all, SCALE_PERCENTILE);
    if !(g > 0.0) {
        g = max;
    }
    QuantizationScale::with_companding(g, levels, companding)
}

/// An `H x W` image of gray levels; pixel `(x, y)` holds device `W * x + y`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommunicationImage {
    pub rows: usize,
    pub cols: usize,
    pub levels: usize,
    pub pixels: Vec<u8>,
}

impl CommunicationImage {
    pub fn from_pixels(rows: usize, cols: usize, levels: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: pixels.len(),
            });
        }
        if let Some(&p) = pixels.iter().find(|&&p| p as usize >= levels) {
            return Err(Error::invalid(format!("pixel value {p} exceeds {} levels", levels)));
        }
        Ok(Self {
            rows,
            cols,
            levels,
            pixels,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.cols + col]
    }

    pub fn transpose(&self) -> Self {
        let mut pixels = vec![0u8; self.pixels.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                pixels[c * self.rows + r] = self.get(r, c);
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            levels: self.levels,
            pixels,
        }
    }

    /// Plain-text PGM (P2) with `maxval = L - 1`.
    pub fn to_pgm(&self) -> String {
        let mut out = format!("P2\n{} {}\n{}\n", self.cols, self.rows, self.levels - 1);
        for row in self.pixels.chunks(self.cols) {
            let line: Vec<String> = row.iter().map(u8::to_string).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }
}

/// Quantizes one time sample (one value per device) into an image. Devices
/// fill the image row-major; surplus cells stay 0.
pub fn quantize(
    sample: &[f64],
    scale: &QuantizationScale,
    rows: usize,
    cols: usize,
) -> Result<CommunicationImage> {
    if sample.len() > rows * cols {
        return Err(Error::invalid(format!(
            "{} devices do not fit a {rows}x{cols} image",
            sample.len()
        )));
    }
    let mut pixels = vec![0u8; rows * cols];
    for (px, &v) in pixels.iter_mut().zip(sample) {
        *px = scale.level(v);
    }
    Ok(CommunicationImage {
        rows,
        cols,
        levels: scale.levels,
        pixels,
    })
}
