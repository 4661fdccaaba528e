//! Directional gray-level co-occurrence matrices and their texture features.

use serde::{Deserialize, Serialize};

use crate::imaging::CommunicationImage;
use crate::{Error, Result, FEATURE_COUNT};

/// Adjacency relation between a pixel and its partner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Horizontal,
    Vertical,
    PositiveDiagonal,
    AntiDiagonal,
}

impl Direction {
    /// Fixed order used in feature vectors.
    pub const ALL: [Direction; 4] = [
        Direction::Horizontal,
        Direction::Vertical,
        Direction::PositiveDiagonal,
        Direction::AntiDiagonal,
    ];

    /// `(row, col)` displacement from a pixel to its partner.
    pub fn offset(self) -> (isize, isize) {
        match self {
            Direction::Horizontal => (0, 1),
            Direction::Vertical => (1, 0),
            Direction::PositiveDiagonal => (1, 1),
            Direction::AntiDiagonal => (1, -1),
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Direction::Horizontal => "h",
            Direction::Vertical => "v",
            Direction::PositiveDiagonal => "pd",
            Direction::AntiDiagonal => "ad",
        }
    }
}

/// Ordered pair counts for one direction. `counts[i * levels + j]` is the
/// number of pixels with value `i` whose partner has value `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Glcm {
    pub direction: Direction,
    pub levels: usize,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl Glcm {
    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.levels + j]
    }

    /// Counts scaled to probabilities; all zeros when there are no pairs.
    pub fn normalized(&self) -> Vec<f64> {
        if self.total == 0 {
            return vec![0.0; self.counts.len()];
        }
        let total = self.total as f64;
        self.counts.iter().map(|&c| c as f64 / total).collect()
    }
}

pub fn compute_glcm(img: &CommunicationImage, direction: Direction) -> Glcm {
    let levels = img.levels;
    let mut counts = vec![0u64; levels * levels];
    let (dr, dc) = direction.offset();
    let (rows, cols) = (img.rows as isize, img.cols as isize);
    let mut total = 0;
    for r in 0..rows {
        let r2 = r + dr;
        if r2 >= rows {
            continue;
        }
        for c in 0..cols {
            let c2 = c + dc;
            if c2 < 0 || c2 >= cols {
                continue;
            }
            let i = img.get(r as usize, c as usize) as usize;
            let j = img.get(r2 as usize, c2 as usize) as usize;
            counts[i * levels + j] += 1;
            total += 1;
        }
    }
    Glcm {
        direction,
        levels,
        counts,
        total,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextureFeatures {
    pub energy: f64,
    pub entropy: f64,
    pub contrast: f64,
    pub idm: f64,
    pub dm: f64,
}

impl TextureFeatures {
    pub const NAMES: [&'static str; 5] = ["energy", "entropy", "contrast", "idm", "dm"];

    pub fn to_array(self) -> [f64; 5] {
        [self.energy, self.entropy, self.contrast, self.idm, self.dm]
    }
}

/// Energy, Entropy, Contrast, IDM and DM of the normalized matrix.
pub fn features_of(glcm: &Glcm) -> Result<TextureFeatures> {
    if glcm.total == 0 {
        return Err(Error::EmptyGlcm);
    }
    let m = glcm.normalized();
    let l = glcm.levels;
    let (mut sq, mut entropy, mut contrast, mut idm, mut dm) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..l {
        for j in 0..l {
            let p = m[i * l + j];
            if p == 0.0 {
                continue;
            }
            let d = i.abs_diff(j) as f64;
            sq += p * p;
            entropy -= p * p.ln();
            contrast += d * d * p;
            idm += p / (1.0 + d * d);
            dm += d * p;
        }
    }
    Ok(TextureFeatures {
        energy: sq.sqrt(),
        entropy,
        contrast,
        idm,
        dm,
    })
}

/// The 20 features of one image, direction-major in [`Direction::ALL`]
/// order and feature-minor in [`TextureFeatures::NAMES`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

impl FeatureVector {
    pub fn block(&self, direction: Direction) -> &[f64] {
        let k = Direction::ALL.iter().position(|&d| d == direction).unwrap();
        &self.0[k * 5..k * 5 + 5]
    }

    /// Column names `h_energy`, `h_entropy`, ... `ad_dm`.
    pub fn names() -> Vec<String> {
        Direction::ALL
            .iter()
            .flat_map(|d| {
                TextureFeatures::NAMES
                    .iter()
                    .map(move |f| format!("{}_{}", d.short_name(), f))
            })
            .collect()
    }
}

pub fn feature_vector(img: &CommunicationImage) -> Result<FeatureVector> {
    let mut out = [0.0; FEATURE_COUNT];
    for (k, &dir) in Direction::ALL.iter().enumerate() {
        let f = features_of(&compute_glcm(img, dir))?;
        out[k * 5..k * 5 + 5].copy_from_slice(&f.to_array());
    }
    Ok(FeatureVector(out))
}
