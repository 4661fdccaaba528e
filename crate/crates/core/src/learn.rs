//! PCA reduction, k-NN pattern database and recognition.
//!
//! Training splits the labeled patterns per class, fits PCA on the training
//! part only, stores the reduced training patterns as the k-NN database and
//! records each class's held-out recognition accuracy as its baseline.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::imaging::QuantizationScale;
use crate::patterns::{pattern_len, PatternVector};
use crate::{par, seed, AppKind, Error, Result, FEATURE_COUNT};

/// Principal directions of a centered corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `d` unit vectors of length `P`, by decreasing variance.
    pub basis: Vec<Vec<f64>>,
    pub explained_variance_ratio: Vec<f64>,
    /// Trace of the sample covariance.
    pub total_variance: f64,
}

impl Pca {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.basis.len()
    }

    pub fn retained(&self) -> f64 {
        self.explained_variance_ratio.iter().sum()
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.basis
            .iter()
            .map(|b| {
                b.iter()
                    .zip(x.iter().zip(&self.mean))
                    .map(|(w, (v, m))| w * (v - m))
                    .sum()
            })
            .collect()
    }

    /// Maps reduced coordinates back into the input space.
    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (b, &c) in self.basis.iter().zip(z) {
            for (o, w) in out.iter_mut().zip(b) {
                *o += c * w;
            }
        }
        out
    }
}

const COV_CHUNK: usize = 512;

/// Sample covariance, accumulated over fixed row chunks so the result does
/// not depend on the thread count.
fn covariance<R: AsRef<[f64]> + Sync>(data: &[R], mean: &[f64]) -> DMatrix<f64> {
    let p = mean.len();
    let chunks: Vec<&[R]> = data.chunks(COV_CHUNK).collect();
    let partials = par::map_collect(&chunks, |chunk| {
        let x = DMatrix::from_fn(chunk.len(), p, |r, c| chunk[r].as_ref()[c] - mean[c]);
        x.tr_mul(&x)
    });
    let mut cov = DMatrix::zeros(p, p);
    for part in partials {
        cov += part;
    }
    cov / (data.len() - 1) as f64
}

/// Fits PCA and keeps the smallest number of directions whose cumulative
/// explained-variance ratio reaches `retention`.
pub fn fit_pca<R: AsRef<[f64]> + Sync>(data: &[R], retention: f64) -> Result<Pca> {
    if data.len() < 2 {
        return Err(Error::invalid("PCA needs at least two samples"));
    }
    if !(retention > 0.0 && retention <= 1.0) {
        return Err(Error::invalid(format!("retention must be in (0, 1], got {retention}")));
    }
    let p = data[0].as_ref().len();
    if let Some(bad) = data.iter().find(|r| r.as_ref().len() != p) {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: bad.as_ref().len(),
        });
    }
    let n = data.len() as f64;
    let mut mean = vec![0.0; p];
    for r in data {
        for (m, v) in mean.iter_mut().zip(r.as_ref()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }

    let cov = covariance(data, &mean);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = values.iter().sum();
    let scale = mean.iter().map(|m| m.abs()).fold(1.0, f64::max);
    if !(total > f64::EPSILON * scale * scale) {
        return Err(Error::Degenerate("patterns have zero covariance".into()));
    }

    let mut basis = Vec::new();
    let mut ratios = Vec::new();
    let mut cumulative = 0.0;
    for (&i, &v) in order.iter().zip(&values) {
        if cumulative >= retention - 1e-12 {
            break;
        }
        let mut dir: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        let pivot = dir
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bi, bv), (k, x)| if x.abs() > bv { (k, x.abs()) } else { (bi, bv) })
            .0;
        if dir[pivot] < 0.0 {
            dir.iter_mut().for_each(|x| *x = -*x);
        }
        basis.push(dir);
        ratios.push(v / total);
        cumulative += v / total;
    }

    Ok(Pca {
        mean,
        basis,
        explained_variance_ratio: ratios,
        total_variance: total,
    })
}

/// What a held-out split is stratified over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitUnit {
    /// Individual patterns are assigned to train or test.
    #[default]
    Pattern,
    /// Whole runs are assigned, so no run contributes to both sides.
    Run,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    #[serde(default)]
    pub unit: SplitUnit,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Self {
        Self {
            train_fraction,
            seed,
            unit: SplitUnit::Pattern,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "train fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// Per-label shuffled split into `(train, test)` index lists, both sorted.
pub fn stratified_split(patterns: &[PatternVector], spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    spec.validate()?;
    let mut by_label: BTreeMap<AppKind, Vec<usize>> = BTreeMap::new();
    for (i, p) in patterns.iter().enumerate() {
        by_label.entry(p.label).or_default().push(i);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, idx) in by_label {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(spec.seed, &[label.index() as u64]));
        match spec.unit {
            SplitUnit::Pattern => {
                let mut idx = idx;
                idx.shuffle(&mut rng);
                let cut = (spec.train_fraction * idx.len() as f64).round() as usize;
                train.extend_from_slice(&idx[..cut]);
                test.extend_from_slice(&idx[cut..]);
            }
            SplitUnit::Run => {
                let mut runs: Vec<u32> = idx.iter().map(|&i| patterns[i].run_id).collect();
                runs.sort_unstable();
                runs.dedup();
                runs.shuffle(&mut rng);
                let cut = (spec.train_fraction * runs.len() as f64).round() as usize;
                let keep: std::collections::BTreeSet<u32> = runs[..cut].iter().copied().collect();
                for i in idx {
                    if keep.contains(&patterns[i].run_id) {
                        train.push(i);
                    } else {
                        test.push(i);
                    }
                }
            }
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseEntry {
    pub label: AppKind,
    pub coords: Vec<f64>,
}

/// Pipeline settings a query must match to use a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub levels: usize,
    pub window_s: usize,
    pub include_diagonal: bool,
    pub split: SplitSpec,
    pub retention: f64,
    pub k: usize,
}

impl ModelConfig {
    pub fn pattern_dim(&self) -> usize {
        pattern_len(FEATURE_COUNT, self.include_diagonal)
    }
}

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhenotypeModel {
    pub version: u32,
    pub config: ModelConfig,
    pub scale: QuantizationScale,
    pub pca: Pca,
    pub database: Vec<DatabaseEntry>,
    /// Held-out recognition accuracy per label.
    pub baseline_accuracy: BTreeMap<AppKind, f64>,
    /// Held-out pattern count per label.
    pub held_out: BTreeMap<AppKind, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub window_s: usize,
    pub include_diagonal: bool,
    pub split: SplitSpec,
    pub retention: f64,
    pub k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            window_s: 100,
            include_diagonal: false,
            split: SplitSpec::new(0.8, 0),
            retention: 0.95,
            k: 5,
        }
    }
}

/// Trains a model from labeled patterns produced with `scale` and
/// `config.window_s`.
pub fn train(patterns: &[PatternVector], scale: QuantizationScale, config: &TrainConfig) -> Result<PhenotypeModel> {
    if config.k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let dim = pattern_len(FEATURE_COUNT, config.include_diagonal);
    if let Some(bad) = patterns.iter().find(|p| p.coeffs.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.coeffs.len(),
        });
    }
    let (train_idx, test_idx) = stratified_split(patterns, &config.split)?;

    let mut per_label: BTreeMap<AppKind, usize> = BTreeMap::new();
    for p in patterns {
        per_label.entry(p.label).or_insert(0);
    }
    for &i in &train_idx {
        *per_label.get_mut(&patterns[i].label).unwrap() += 1;
    }
    if per_label.is_empty() {
        return Err(Error::invalid("no training patterns"));
    }
    for (&label, &have) in &per_label {
        if have < config.k {
            return Err(Error::InsufficientPatterns {
                label,
                have,
                need: config.k,
            });
        }
    }

    let train_rows: Vec<&[f64]> = train_idx.iter().map(|&i| patterns[i].coeffs.as_slice()).collect();
    let pca = fit_pca(&train_rows, config.retention)?;
    let database = par::map_collect(&train_idx, |&i| DatabaseEntry {
        label: patterns[i].label,
        coords: pca.project(&patterns[i].coeffs),
    });

    let mut model = PhenotypeModel {
        version: MODEL_VERSION,
        config: ModelConfig {
            levels: scale.levels,
            window_s: config.window_s,
            include_diagonal: config.include_diagonal,
            split: config.split,
            retention: config.retention,
            k: config.k,
        },
        scale,
        pca,
        database,
        baseline_accuracy: BTreeMap::new(),
        held_out: BTreeMap::new(),
    };

    let held_out: Vec<&PatternVector> = test_idx.iter().map(|&i| &patterns[i]).collect();
    let eval = model.evaluate(held_out.iter().copied())?;
    for &label in per_label.keys() {
        match eval.accuracy.get(&label) {
            Some(&acc) => {
                model.baseline_accuracy.insert(label, acc);
                model.held_out.insert(label, eval.support[&label]);
            }
            None => {
                return Err(Error::invalid(format!(
                    "label {label} has no held-out patterns to measure its baseline"
                )))
            }
        }
    }
    Ok(model)
}

/// Per-label accuracy and the full confusion matrix.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: BTreeMap<AppKind, f64>,
    /// Patterns per ground-truth label.
    pub support: BTreeMap<AppKind, usize>,
    /// `confusion[truth][predicted]`.
    pub confusion: BTreeMap<AppKind, BTreeMap<AppKind, usize>>,
}

impl Evaluation {
    pub fn from_predictions(pairs: impl IntoIterator<Item = (AppKind, AppKind)>) -> Self {
        let mut eval = Evaluation::default();
        for (truth, pred) in pairs {
            *eval.support.entry(truth).or_insert(0) += 1;
            *eval.confusion.entry(truth).or_default().entry(pred).or_insert(0) += 1;
        }
        for (&label, &n) in &eval.support {
            let hit = eval.confusion[&label].get(&label).copied().unwrap_or(0);
            eval.accuracy.insert(label, hit as f64 / n as f64);
        }
        eval
    }

    pub fn mean_accuracy(&self) -> f64 {
        if self.accuracy.is_empty() {
            return 0.0;
        }
        self.accuracy.values().sum::<f64>() / self.accuracy.len() as f64
    }
}

impl PhenotypeModel {
    pub fn labels(&self) -> impl Iterator<Item = AppKind> + '_ {
        self.baseline_accuracy.keys().copied()
    }

    pub fn pattern_dim(&self) -> usize {
        self.pca.input_dim()
    }

    /// Majority label among the `k` nearest database entries of an already
    /// reduced query.
    pub fn recognize_reduced(&self, z: &[f64]) -> AppKind {
        let mut dists: Vec<(f64, usize)> = self
            .database
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let d2: f64 = e.coords.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2, i)
            })
            .collect();
        let k = self.config.k.min(dists.len());
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < dists.len() {
            dists.select_nth_unstable_by(k - 1, cmp);
            dists.truncate(k);
        }
        dists.sort_unstable_by(cmp);

        let mut votes = [0usize; AppKind::ALL.len()];
        for &(_, i) in &dists {
            votes[self.database[i].label.index()] += 1;
        }
        let best = *votes.iter().max().unwrap();
        dists
            .iter()
            .map(|&(_, i)| self.database[i].label)
            .find(|l| votes[l.index()] == best)
            .expect("k >= 1")
    }

    pub fn recognize(&self, coeffs: &[f64]) -> Result<AppKind> {
        if coeffs.len() != self.pattern_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.pattern_dim(),
                got: coeffs.len(),
            });
        }
        Ok(self.recognize_reduced(&self.pca.project(coeffs)))
    }

    /// Recognizes every pattern (in parallel) and returns predictions in input order.
    pub fn recognize_all<'a>(&self, patterns: impl IntoIterator<Item = &'a PatternVector>) -> Result<Vec<AppKind>> {
        let patterns: Vec<&PatternVector> = patterns.into_iter().collect();
        par::try_map_collect(&patterns, |p| self.recognize(&p.coeffs))
    }

    pub fn evaluate<'a>(&self, patterns: impl IntoIterator<Item = &'a PatternVector>) -> Result<Evaluation> {
        let patterns: Vec<&PatternVector> = patterns.into_iter().collect();
        let preds = self.recognize_all(patterns.iter().copied())?;
        Ok(Evaluation::from_predictions(
            patterns.iter().map(|p| p.label).zip(preds),
        ))
    }
}
