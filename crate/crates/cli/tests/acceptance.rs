//! Acceptance criteria, one test per criterion.
//!
//! Each test prints a single `criterion N ...: PASS|FAIL` line (run with
//! `--nocapture` to see them) and fails when its criterion is not met.
//! Reference values come from independent oracles defined in this file.

use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use netphen::experiment::{fig8, RunConfig, Table4Report};
use netphen::imaging::{CommunicationImage, QuantizationScale};
use netphen::learn::{fit_pca, train, DatabaseEntry, PhenotypeModel, TrainConfig};
use netphen::patterns::{pattern_len, pattern_of, patterns_of_series, pearson, slice, FeatureSeries, PatternVector, Snippet};
use netphen::texture::{compute_glcm, feature_vector, Direction, FeatureVector};
use netphen::{AppKind, FEATURE_COUNT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(n: u32, name: &str, ok: bool, elapsed: Duration, detail: &str) {
    let status = if ok { "PASS" } else { "FAIL" };
    println!("criterion {n} {name}: {status} ({:.2} s) {detail}", elapsed.as_secs_f64());
    assert!(ok, "criterion {n} {name} failed: {detail}");
}

// ---------------------------------------------------------------- oracles

/// GLCM counts by enumerating every ordered pair of pixel positions.
fn brute_glcm(img: &CommunicationImage, (dr, dc): (isize, isize)) -> Vec<u64> {
    let l = img.levels;
    let mut counts = vec![0u64; l * l];
    let cells: Vec<(isize, isize)> = (0..img.rows as isize)
        .flat_map(|r| (0..img.cols as isize).map(move |c| (r, c)))
        .collect();
    for &(r1, c1) in &cells {
        for &(r2, c2) in &cells {
            if r2 - r1 == dr && c2 - c1 == dc {
                let i = img.get(r1 as usize, c1 as usize) as usize;
                let j = img.get(r2 as usize, c2 as usize) as usize;
                counts[i * l + j] += 1;
            }
        }
    }
    counts
}

/// Energy, entropy, contrast, IDM and DM evaluated term by term.
fn direct_features(counts: &[u64], l: usize) -> [f64; 5] {
    let total: u64 = counts.iter().sum();
    let m = |i: usize, j: usize| counts[i * l + j] as f64 / total as f64;
    let mut energy = 0.0;
    let mut entropy = 0.0;
    let mut contrast = 0.0;
    let mut idm = 0.0;
    let mut dm = 0.0;
    for i in 0..l {
        for j in 0..l {
            let v = m(i, j);
            let d = i as f64 - j as f64;
            energy += v * v;
            if v > 0.0 {
                entropy += v * -v.ln();
            }
            contrast += d * d * v;
            idm += v / (1.0 + d * d);
            dm += d.abs() * v;
        }
    }
    [energy.sqrt(), entropy, contrast, idm, dm]
}

/// Pearson coefficient from raw sums.
fn raw_sum_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt()
}

/// k-NN by sorting the whole database; ties in the vote go to the label of
/// the nearest tied neighbor.
fn sorted_knn(db: &[DatabaseEntry], z: &[f64], k: usize) -> AppKind {
    let mut all: Vec<(f64, usize)> = db
        .iter()
        .enumerate()
        .map(|(i, e)| (e.coords.iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum(), i))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let nearest: Vec<AppKind> = all[..k].iter().map(|&(_, i)| db[i].label).collect();
    let count = |l: AppKind| nearest.iter().filter(|&&x| x == l).count();
    let best = nearest.iter().map(|&l| count(l)).max().unwrap();
    *nearest.iter().find(|&&l| count(l) == best).unwrap()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix; returns
/// eigenvalues and the eigenvectors as columns.
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j].powi(2)).sum();
        if off < 1e-22 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

/// Total squared reconstruction error when keeping the smallest number of
/// principal directions whose variance share reaches `retention`.
fn oracle_reconstruction_error(data: &[Vec<f64>], retention: f64) -> (usize, f64) {
    let n = data.len();
    let p = data[0].len();
    let mean: Vec<f64> = (0..p).map(|j| data.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let cov: Vec<Vec<f64>> = (0..p)
        .map(|i| {
            (0..p)
                .map(|j| data.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (n - 1) as f64)
                .collect()
        })
        .collect();
    let (values, vectors) = jacobi_eigen(cov);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap());
    let total: f64 = values.iter().map(|v| v.max(0.0)).sum();
    let mut d = 0;
    let mut share = 0.0;
    while share < retention - 1e-12 {
        share += values[order[d]].max(0.0) / total;
        d += 1;
    }
    let err = data
        .iter()
        .map(|r| {
            let centered: Vec<f64> = r.iter().zip(&mean).map(|(x, m)| x - m).collect();
            let mut recon = vec![0.0; p];
            for &k in &order[..d] {
                let coef: f64 = (0..p).map(|i| vectors[i][k] * centered[i]).sum();
                for i in 0..p {
                    recon[i] += coef * vectors[i][k];
                }
            }
            centered.iter().zip(&recon).map(|(c, x)| (c - x).powi(2)).sum::<f64>()
        })
        .sum();
    (d, err)
}

/// Spearman correlation with average ranks for ties.
fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        v.iter()
            .map(|&a| {
                let below = v.iter().filter(|&&b| b < a).count() as f64;
                let equal = v.iter().filter(|&&b| b == a).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect()
    }
    raw_sum_pearson(&ranks(x), &ranks(y))
}

fn random_image(rng: &mut ChaCha8Rng) -> CommunicationImage {
    let rows = rng.gen_range(2..13);
    let cols = rng.gen_range(2..13);
    let levels = rng.gen_range(2..11);
    let pixels = (0..rows * cols).map(|_| rng.gen_range(0..levels) as u8).collect();
    CommunicationImage::from_pixels(rows, cols, levels, pixels).unwrap()
}

// -------------------------------------------------------------- criteria

const TABLE1_IMAGE: [[u8; 10]; 11] = [
    [1, 3, 2, 0, 2, 4, 1, 2, 1, 0],
    [4, 1, 2, 2, 4, 1, 1, 0, 1, 2],
    [1, 3, 2, 0, 4, 2, 3, 3, 1, 3],
    [4, 2, 2, 3, 3, 4, 2, 4, 3, 3],
    [1, 3, 1, 4, 1, 4, 2, 1, 3, 1],
    [1, 0, 1, 0, 1, 3, 2, 4, 3, 1],
    [0, 4, 2, 4, 1, 4, 3, 1, 0, 3],
    [3, 3, 1, 0, 0, 3, 2, 4, 3, 2],
    [1, 3, 3, 3, 0, 1, 2, 2, 4, 2],
    [0, 3, 4, 3, 2, 3, 2, 2, 3, 1],
    [1, 2, 0, 3, 2, 1, 2, 1, 3, 4],
];

#[test]
fn criterion_1_glcm_golden() {
    let t = Instant::now();
    let img = CommunicationImage::from_pixels(11, 10, 5, TABLE1_IMAGE.iter().flatten().copied().collect()).unwrap();
    let count = compute_glcm(&img, Direction::Horizontal).count(1, 2);
    let elapsed = t.elapsed();
    verdict(1, "GLCM golden", count == 6 && elapsed < Duration::from_secs(1), elapsed, &format!("#(1,2) = {count}"));
}

#[test]
fn criterion_2_oracle_equivalence() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut problems = Vec::new();

    // GLCM counts and features on random images
    for n in 0..120 {
        let img = random_image(&mut rng);
        let fv = feature_vector(&img).unwrap();
        for (k, dir) in Direction::ALL.into_iter().enumerate() {
            let glcm = compute_glcm(&img, dir);
            let oracle = brute_glcm(&img, dir.offset());
            if glcm.counts != oracle {
                problems.push(format!("image {n} {dir:?}: counts differ"));
                continue;
            }
            let want = direct_features(&oracle, img.levels);
            for (f, (&got, &w)) in fv.0[k * 5..k * 5 + 5].iter().zip(&want).enumerate() {
                if (got - w).abs() > 1e-12 {
                    problems.push(format!("image {n} {dir:?} feature {f}: {got} vs {w}"));
                }
            }
        }
    }

    // Pearson, both the pairwise function and whole patterns
    for n in 0..100 {
        let len = rng.gen_range(3..200);
        let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.5 * v + rng.gen_range(-1.0..1.0)).collect();
        let got = pearson(&x, &y).unwrap();
        let want = raw_sum_pearson(&x, &y);
        if (got - want).abs() > 1e-12 {
            problems.push(format!("pearson {n}: {got} vs {want}"));
        }
    }
    for n in 0..10 {
        let len = rng.gen_range(5..120);
        let window: Vec<FeatureVector> = (0..len)
            .map(|_| {
                let mut v = [0.0; FEATURE_COUNT];
                v.iter_mut().for_each(|x| *x = rng.gen_range(0.0..3.0));
                FeatureVector(v)
            })
            .collect();
        let snippet = Snippet { start_t: 0, window: &window };
        let pattern = pattern_of(&snippet, false);
        let mut idx = 0;
        for i in 0..FEATURE_COUNT {
            for j in i + 1..FEATURE_COUNT {
                let xi: Vec<f64> = snippet.column(i).collect();
                let xj: Vec<f64> = snippet.column(j).collect();
                let want = raw_sum_pearson(&xi, &xj);
                if (pattern[idx] - want).abs() > 1e-12 {
                    problems.push(format!("pattern {n} ({i},{j}): {} vs {want}", pattern[idx]));
                }
                idx += 1;
            }
        }
    }

    // k-NN against a full sort
    let blobs: Vec<PatternVector> = AppKind::ALL
        .iter()
        .flat_map(|&label| {
            let center: Vec<f64> = (0..pattern_len(FEATURE_COUNT, false)).map(|_| rng.gen_range(-0.5..0.5)).collect();
            (0..40)
                .map(|i| PatternVector {
                    label,
                    run_id: i,
                    start_t: 0,
                    include_diagonal: false,
                    coeffs: center.iter().map(|c| c + rng.gen_range(-0.6..0.6)).collect(),
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let model: PhenotypeModel = train(&blobs, QuantizationScale::new(1.0, 9).unwrap(), &TrainConfig::default()).unwrap();
    let d = model.pca.output_dim();
    let spread: Vec<f64> = (0..d)
        .map(|c| model.database.iter().map(|e| e.coords[c].abs()).fold(0.0, f64::max))
        .collect();
    for q in 0..100 {
        let z: Vec<f64> = spread.iter().map(|s| rng.gen_range(-s..*s)).collect();
        let got = model.recognize_reduced(&z);
        let want = sorted_knn(&model.database, &z, model.config.k);
        if got != want {
            problems.push(format!("knn query {q}: {got} vs {want}"));
        }
    }

    // PCA reconstruction error against Jacobi
    for (n, (samples, dim, rank)) in [(200, 30, 4), (150, 45, 8), (300, 20, 20)].into_iter().enumerate() {
        let loadings: Vec<Vec<f64>> = (0..rank).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let data: Vec<Vec<f64>> = (0..samples)
            .map(|_| {
                let f: Vec<f64> = (0..rank).map(|k| rng.gen_range(-1.0..1.0) * (rank - k) as f64).collect();
                (0..dim)
                    .map(|j| 3.0 + (0..rank).map(|k| f[k] * loadings[k][j]).sum::<f64>() + 0.05 * rng.gen_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        let pca = fit_pca(&data, 0.95).unwrap();
        let got: f64 = data
            .iter()
            .map(|r| {
                let back = pca.reconstruct(&pca.project(r));
                r.iter().zip(&back).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            })
            .sum();
        let (want_d, want) = oracle_reconstruction_error(&data, 0.95);
        if pca.output_dim() != want_d || (got - want).abs() > 1e-6 * want.max(1.0) {
            problems.push(format!("pca {n}: d {} vs {want_d}, error {got} vs {want}", pca.output_dim()));
        }
    }

    let elapsed = t.elapsed();
    let ok = problems.is_empty() && elapsed < Duration::from_secs(30);
    verdict(2, "oracle equivalence", ok, elapsed, &problems.iter().take(5).cloned().collect::<Vec<_>>().join("; "));
}

#[test]
fn criterion_3_snippet_counts() {
    let t = Instant::now();
    let mut problems = Vec::new();
    let mut combos = 0;
    for total in [60, 100, 195, 202, 242] {
        for window in [2, 30, 50, 60] {
            let series = FeatureSeries {
                app_label: AppKind::Dgd,
                run_id: 0,
                values: (0..total).map(|i| FeatureVector([i as f64; FEATURE_COUNT])).collect(),
            };
            let got = slice(&series, window).unwrap().len();
            let pats = patterns_of_series(&series, window, false).unwrap().len();
            if got != total - window + 1 || pats != got {
                problems.push(format!("T {total} T_S {window}: {got} snippets, {pats} patterns"));
            }
            combos += 1;
        }
    }
    let elapsed = t.elapsed();
    let ok = combos == 20 && problems.is_empty() && elapsed < Duration::from_secs(1);
    verdict(3, "snippet arithmetic", ok, elapsed, &format!("{combos} combinations {}", problems.join("; ")));
}

#[test]
fn criterion_4_window_sweep() {
    let t = Instant::now();
    let windows = [50usize, 100, 150, 190];
    let report = fig8(&RunConfig::default(), &windows).unwrap();
    let elapsed = t.elapsed();
    let means: Vec<f64> = report.rows.iter().map(|r| r.mean_accuracy).collect();
    let last = report.rows.last().unwrap();
    let low: Vec<String> = last
        .accuracy
        .iter()
        .filter(|(_, &a)| a < 0.95)
        .map(|(app, a)| format!("{app} {a:.4}"))
        .collect();
    let monotone = means.windows(2).all(|w| w[1] >= w[0]);
    let ws: Vec<f64> = windows.iter().map(|&w| w as f64).collect();
    let rho = spearman(&ws, &means);
    let ok = low.is_empty() && monotone && rho >= 0.8 && elapsed < Duration::from_secs(600);
    let detail = format!(
        "means {:?}, spearman {rho:.3}, below 0.95 at 190: [{}]",
        means.iter().map(|m| format!("{m:.5}")).collect::<Vec<_>>(),
        low.join(", ")
    );
    verdict(4, "accuracy vs window", ok, elapsed, &detail);
}

struct Table4Runs {
    first: Vec<Vec<u8>>,
    second: Vec<Vec<u8>>,
    report: Table4Report,
    elapsed: Duration,
}

/// Runs `netphen experiment table4` twice with the same seed.
fn table4_runs() -> &'static Table4Runs {
    static RUNS: OnceLock<Table4Runs> = OnceLock::new();
    RUNS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let run = |tag: &str| -> (Vec<Vec<u8>>, Duration) {
            let t = Instant::now();
            let files = ["txt", "csv", "json"].map(|ext| dir.path().join(format!("{tag}.{ext}")));
            let status = Command::new(env!("CARGO_BIN_EXE_netphen"))
                .args(["experiment", "table4", "--seed", "1", "--out"])
                .arg(&files[0])
                .arg("--csv")
                .arg(&files[1])
                .arg("--json")
                .arg(&files[2])
                .env_remove("NETPHEN_SEED")
                .status()
                .unwrap();
            assert!(status.success());
            (files.iter().map(|f| std::fs::read(f).unwrap()).collect(), t.elapsed())
        };
        let (first, elapsed) = run("a");
        let (second, _) = run("b");
        let report = serde_json::from_slice(&first[2]).unwrap();
        Table4Runs { first, second, report, elapsed }
    })
}

#[test]
fn criterion_5_anomaly_study() {
    let runs = table4_runs();
    let r = &runs.report;
    let mut problems = Vec::new();
    if r.window_s != 100 || r.theta_th != 0.95 {
        problems.push(format!("window {} theta {}", r.window_s, r.theta_th));
    }
    for &a in &[0.1, 0.2, 0.3] {
        for (k, &app) in r.apps.iter().enumerate() {
            let n = r
                .verdicts
                .iter()
                .filter(|v| v.expected == app && v.anomaly_intensity == Some(a))
                .count();
            if n != 40 {
                problems.push(format!("{app} at {a}: {n} runs"));
            }
            let label = netphen::detect::intensity_label(a);
            let cell = r.monitored.cell(&label, app).unwrap();
            if !(cell < r.thresholds[k]) {
                problems.push(format!("{app} {label}: {cell:.4} >= {:.4}", r.thresholds[k]));
            }
        }
    }
    for &app in &r.apps {
        let series: Vec<f64> = ["Clean", "With 10% anomaly", "With 20% anomaly", "With 30% anomaly"]
            .iter()
            .map(|l| r.monitored.cell(l, app).unwrap())
            .collect();
        if series.windows(2).any(|w| w[1] > w[0]) {
            problems.push(format!(
                "{app} not non-increasing: {:?}",
                series.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>()
            ));
        }
    }
    let fpr = r.false_positive_rate();
    if fpr > 0.10 {
        problems.push(format!("false positive rate {fpr:.4}"));
    }
    let ok = problems.is_empty() && runs.elapsed < Duration::from_secs(600);
    verdict(5, "anomaly study", ok, runs.elapsed, &format!("fpr {fpr:.4}; {}", problems.join("; ")));
}

#[test]
fn criterion_6_dimensions() {
    let t = Instant::now();
    let runs = table4_runs();
    let series = FeatureSeries {
        app_label: AppKind::Consensus,
        run_id: 0,
        values: (0..30)
            .map(|i| {
                let mut v = [0.0; FEATURE_COUNT];
                for (f, x) in v.iter_mut().enumerate() {
                    *x = ((i * (f + 1)) % 7) as f64;
                }
                FeatureVector(v)
            })
            .collect(),
    };
    let plain = patterns_of_series(&series, 10, false).unwrap()[0].coeffs.len();
    let diag = patterns_of_series(&series, 10, true).unwrap()[0].coeffs.len();
    let img = CommunicationImage::from_pixels(3, 3, 4, vec![0, 1, 2, 3, 0, 1, 2, 3, 0]).unwrap();
    let nf = feature_vector(&img).unwrap().0.len();
    let d = runs.report.pca_dims;
    let ok = FEATURE_COUNT == 20
        && nf == 20
        && FeatureVector::names().len() == 20
        && (plain, diag) == (190, 210)
        && (pattern_len(20, false), pattern_len(20, true)) == (190, 210)
        && d < 30;
    verdict(6, "dimension contract", ok, t.elapsed(), &format!("N_f {nf}, lengths {plain}/{diag}, pca d {d}"));
}

#[test]
fn criterion_7_determinism() {
    let runs = table4_runs();
    let same: Vec<bool> = runs.first.iter().zip(&runs.second).map(|(a, b)| a == b).collect();
    let ok = same.iter().all(|&s| s) && runs.first.iter().all(|f| !f.is_empty());
    let sizes: Vec<usize> = runs.first.iter().map(Vec::len).collect();
    verdict(7, "determinism", ok, runs.elapsed, &format!("text/csv/json identical {same:?}, bytes {sizes:?}"));
}
