//! `netphen` command-line frontend.
//!
//! Commands compose through files: `simulate` writes traces, `patterns`
//! turns traces into pattern files, `train` fits a model, and `classify` /
//! `detect` apply it. `experiment` runs the seeded window sweep and the
//! anomaly study end to end.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use netphen::detect::{detect, DetectOptions, DetectionVerdict, DEFAULT_MIN_SNIPPETS, DEFAULT_THETA};
use netphen::experiment::{self, RunConfig};
use netphen::imaging::{fit_scale, Companding, QuantizationScale};
use netphen::io::{self, PatternMeta};
use netphen::learn::{train, SplitSpec, SplitUnit, TrainConfig};
use netphen::patterns::{patterns_of_series, FeatureSeries, PatternVector};
use netphen::sim::inject_anomaly;
use netphen::AppKind;

const DEFAULT_SEED: u64 = 1;

#[derive(Parser)]
#[command(name = "netphen", version, about = "Traffic phenotyping and anomaly detection for CPS networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic throughput traces
    Simulate(SimulateArgs),
    /// Turn traces into communication patterns
    Patterns(PatternsArgs),
    /// Fit a phenotype model to labeled patterns
    Train(TrainArgs),
    /// Recognize the application behind each pattern
    Classify(ClassifyArgs),
    /// Flag runs whose recognition accuracy falls below threshold
    Detect(DetectArgs),
    /// Seeded end-to-end experiments
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(Args)]
struct SeedArg {
    /// Master seed
    #[arg(long, env = "NETPHEN_SEED", default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum CompandingArg {
    Linear,
    Log,
}

#[derive(Args)]
struct QuantArgs {
    /// Gray levels L
    #[arg(long, default_value_t = 9)]
    levels: usize,
    /// Companding applied before quantization
    #[arg(long, value_enum, default_value = "log")]
    companding: CompandingArg,
    /// Knee of the log companding, relative to the scale maximum
    #[arg(long, default_value_t = 0.01)]
    knee: f64,
}

impl QuantArgs {
    fn companding(&self) -> Companding {
        match self.companding {
            CompandingArg::Linear => Companding::Linear,
            CompandingArg::Log => Companding::Log { knee: self.knee },
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    app: AppKind,
    #[arg(long, default_value_t = 50)]
    runs: usize,
    #[command(flatten)]
    seed: SeedArg,
    /// Anomaly intensity added to every run
    #[arg(long, default_value_t = 0.0)]
    anomaly: f64,
    /// Seed stream: 1 for training corpora, 2 for monitored runs
    #[arg(long, default_value_t = experiment::STREAM_TRAIN)]
    stream: u64,
    #[arg(long, default_value_t = 10)]
    rows: usize,
    #[arg(long, default_value_t = 10)]
    cols: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScaleSource {
    Fit,
    Model,
}

#[derive(Args)]
struct PatternsArgs {
    /// Directory of trace CSV files with JSON sidecars
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    quant: QuantArgs,
    /// Sliding window T_S in seconds
    #[arg(long, default_value_t = 100)]
    window: usize,
    /// Fit the quantization scale to these traces or reuse a model's
    #[arg(long, value_enum, default_value = "fit")]
    scale_from: ScaleSource,
    /// Model file, required with `--scale-from model`
    #[arg(long)]
    model: Option<PathBuf>,
    /// Keep the diagonal of the correlation matrix (210 coefficients)
    #[arg(long)]
    include_diagonal: bool,
    /// Also write per-run feature CSVs here
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Pattern,
    Run,
}

impl From<SplitArg> for SplitUnit {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Pattern => SplitUnit::Pattern,
            SplitArg::Run => SplitUnit::Run,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Pattern directory
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Fraction of variance kept by PCA
    #[arg(long, default_value_t = 0.95)]
    retention: f64,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long, value_enum, default_value = "pattern")]
    split: SplitArg,
    #[command(flatten)]
    seed: SeedArg,
    /// Model file to write
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    model: PathBuf,
    /// Pattern directory
    #[arg(long = "in")]
    input: PathBuf,
    /// Prediction CSV; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    model: PathBuf,
    /// Pattern directory
    #[arg(long = "in")]
    input: PathBuf,
    /// Application that should be running; defaults to each run's label
    #[arg(long)]
    expected: Option<AppKind>,
    #[arg(long, default_value_t = DEFAULT_THETA)]
    theta: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_SNIPPETS)]
    min_snippets: usize,
    /// One verdict over all patterns instead of one per run
    #[arg(long)]
    pooled: bool,
    /// Verdict JSON; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Held-out accuracy per application against window size
    Fig8(Fig8Args),
    /// Baseline, thresholds and monitored accuracy under injected anomalies
    Table4(Table4Args),
}

#[derive(Args)]
struct ExperimentArgs {
    /// RunConfig JSON; flags below override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "NETPHEN_SEED")]
    seed: Option<u64>,
    /// Training runs per class
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    retention: Option<f64>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    #[arg(long, value_enum)]
    companding: Option<CompandingArg>,
    #[arg(long)]
    knee: Option<f64>,
    #[arg(long)]
    include_diagonal: bool,
}

impl ExperimentArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.runs {
            cfg.runs_per_app = v;
        }
        if let Some(v) = self.levels {
            cfg.levels = v;
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = self.retention {
            cfg.retention = v;
        }
        if let Some(v) = self.train_fraction {
            cfg.train_fraction = v;
        }
        if let Some(v) = self.split {
            cfg.split_unit = v.into();
        }
        let current_knee = match cfg.companding {
            Companding::Log { knee } => Some(knee),
            Companding::Linear => None,
        };
        cfg.companding = match (self.companding, self.knee) {
            (Some(CompandingArg::Linear), _) => Companding::Linear,
            (Some(CompandingArg::Log), k) => Companding::Log {
                knee: k.or(current_knee).unwrap_or(0.01),
            },
            (None, Some(k)) if current_knee.is_some() => Companding::Log { knee: k },
            (None, Some(_)) => bail!("--knee applies to log companding only"),
            (None, None) => cfg.companding,
        };
        if self.include_diagonal {
            cfg.include_diagonal = true;
        }
        if cfg.runs_per_app == 0 {
            bail!("--runs must be at least 1 to train a model");
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct Fig8Args {
    #[command(flatten)]
    common: ExperimentArgs,
    /// Window sizes in seconds
    #[arg(long, value_delimiter = ',', default_value = "50,100,150,190")]
    windows: Vec<usize>,
    /// CSV output; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the full report as JSON
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct Table4Args {
    #[command(flatten)]
    common: ExperimentArgs,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    theta: Option<f64>,
    /// Monitored runs per application and intensity
    #[arg(long)]
    monitored: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    intensities: Option<Vec<f64>>,
    /// Text table output; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Full report including every verdict
    #[arg(long)]
    json: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Simulate(a) => simulate(a)?,
        Command::Patterns(a) => patterns(a)?,
        Command::Train(a) => train_cmd(a)?,
        Command::Classify(a) => classify(a)?,
        Command::Detect(a) => return detect_cmd(a),
        Command::Experiment(ExperimentCommand::Fig8(a)) => fig8(a)?,
        Command::Experiment(ExperimentCommand::Table4(a)) => table4(a)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    if a.runs == 0 {
        eprintln!("warning: --runs 0, nothing to simulate");
        return Ok(());
    }
    let cfg = RunConfig {
        seed: a.seed.seed,
        rows: a.rows,
        cols: a.cols,
        ..RunConfig::default()
    };
    let topo = cfg.topology()?;
    let traces = experiment::simulate_runs(&cfg, &topo, a.app, a.runs, a.stream)?;
    for t in &traces {
        let t = if a.anomaly > 0.0 {
            let s = experiment::run_seed(cfg.seed, experiment::STREAM_ANOMALY, a.app, t.run_id);
            inject_anomaly(t, a.anomaly, s)?
        } else {
            t.clone()
        };
        io::write_trace(&a.out, &t)?;
    }
    eprintln!("wrote {} {} runs to {}", traces.len(), a.app, a.out.display());
    Ok(())
}

fn patterns(a: PatternsArgs) -> Result<()> {
    let traces = io::read_trace_dir(&a.input).with_context(|| format!("reading traces from {}", a.input.display()))?;
    let Some(first) = traces.first() else {
        bail!("no traces found in {}", a.input.display());
    };
    let (rows, cols) = (first.rows, first.cols);
    if let Some(t) = traces.iter().find(|t| (t.rows, t.cols) != (rows, cols)) {
        bail!("{} run {} is {}x{}, expected {rows}x{cols}", t.app_label, t.run_id, t.rows, t.cols);
    }
    if let Some(t) = traces.iter().find(|t| t.duration() < a.window) {
        bail!(
            "window {} s exceeds the {} s trace of {} run {}",
            a.window,
            t.duration(),
            t.app_label,
            t.run_id
        );
    }

    let scale: QuantizationScale = match a.scale_from {
        ScaleSource::Fit => fit_scale(&traces, a.quant.levels, a.quant.companding())?,
        ScaleSource::Model => {
            let Some(path) = &a.model else {
                bail!("--scale-from model needs --model");
            };
            let model = io::load_model(path)?;
            if model.scale.levels != a.quant.levels {
                bail!("model uses {} levels, --levels is {}", model.scale.levels, a.quant.levels);
            }
            model.scale
        }
    };

    let mut all = Vec::new();
    for t in &traces {
        let series = FeatureSeries::from_trace(t, &scale, rows, cols)?;
        if let Some(dir) = &a.features {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(format!("{}.features.csv", io::trace_stem(t))), io::features_csv(&series))?;
        }
        all.extend(patterns_of_series(&series, a.window, a.include_diagonal)?);
    }
    let meta = PatternMeta::new(scale, a.window, a.include_diagonal, rows, cols);
    io::write_patterns(&a.out, &all, &meta)?;
    eprintln!(
        "wrote {} patterns of {} coefficients from {} runs to {}",
        all.len(),
        meta.dim,
        traces.len(),
        a.out.display()
    );
    Ok(())
}

fn read_pattern_dir(dir: &Path) -> Result<(PatternMeta, Vec<PatternVector>)> {
    let (meta, pats) = io::read_patterns(dir).with_context(|| format!("reading patterns from {}", dir.display()))?;
    if pats.is_empty() {
        bail!("{} holds no patterns", dir.display());
    }
    Ok((meta, pats))
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let (meta, pats) = read_pattern_dir(&a.input)?;
    let config = TrainConfig {
        window_s: meta.window_s,
        include_diagonal: meta.include_diagonal,
        split: SplitSpec {
            unit: a.split.into(),
            ..SplitSpec::new(a.train_fraction, a.seed.seed)
        },
        retention: a.retention,
        k: a.k,
    };
    let model = train(&pats, meta.scale, &config)?;
    io::save_model(&a.out, &model)?;
    println!("pca dims {} ({:.4} variance)", model.pca.output_dim(), model.pca.retained());
    for (label, acc) in &model.baseline_accuracy {
        println!("{label:12} {acc:.4} ({} held out)", model.held_out[label]);
    }
    Ok(())
}

fn classify(a: ClassifyArgs) -> Result<()> {
    let model = io::load_model(&a.model)?;
    let (meta, pats) = read_pattern_dir(&a.input)?;
    io::check_compatible(&model, &meta)?;
    let preds = model.recognize_all(&pats)?;
    let mut out = String::from("label,run_id,start_t,predicted\n");
    for (p, q) in pats.iter().zip(&preds) {
        out.push_str(&format!("{},{},{},{}\n", p.label, p.run_id, p.start_t, q));
    }
    write_or_print(a.out.as_deref(), &out)?;
    let eval = netphen::learn::Evaluation::from_predictions(pats.iter().map(|p| p.label).zip(preds));
    for (label, acc) in &eval.accuracy {
        eprintln!("{label:12} {acc:.4} of {}", eval.support[label]);
    }
    Ok(())
}

fn detect_cmd(a: DetectArgs) -> Result<ExitCode> {
    let model = io::load_model(&a.model)?;
    let (meta, pats) = read_pattern_dir(&a.input)?;
    io::check_compatible(&model, &meta)?;
    let opts = DetectOptions {
        theta_th: a.theta,
        min_snippets: a.min_snippets,
    };

    let groups: Vec<(AppKind, Vec<PatternVector>)> = if a.pooled {
        let expected = match a.expected {
            Some(e) => e,
            None => {
                let first = pats[0].label;
                if pats.iter().any(|p| p.label != first) {
                    bail!("patterns carry several labels; pass --expected with --pooled");
                }
                first
            }
        };
        vec![(expected, pats)]
    } else {
        let mut by_run: BTreeMap<(AppKind, u32), Vec<PatternVector>> = BTreeMap::new();
        for p in pats {
            by_run.entry((p.label, p.run_id)).or_default().push(p);
        }
        by_run
            .into_iter()
            .map(|((label, _), ps)| (a.expected.unwrap_or(label), ps))
            .collect()
    };

    let verdicts: Vec<DetectionVerdict> = groups
        .iter()
        .map(|(expected, ps)| detect(&model, ps, *expected, &opts))
        .collect::<netphen::Result<_>>()?;
    write_or_print(a.out.as_deref(), &(serde_json::to_string_pretty(&verdicts)? + "\n"))?;

    let flagged = verdicts.iter().filter(|v| v.anomalous).count();
    eprintln!("{flagged} of {} verdicts anomalous", verdicts.len());
    Ok(if flagged > 0 { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn fig8(a: Fig8Args) -> Result<()> {
    let cfg = a.common.config()?;
    if a.windows.is_empty() {
        bail!("--windows needs at least one size");
    }
    let report = experiment::fig8(&cfg, &a.windows)?;
    write_or_print(a.out.as_deref(), &report.to_csv())?;
    if let Some(path) = &a.json {
        write_or_print(Some(path), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    Ok(())
}

fn table4(a: Table4Args) -> Result<()> {
    let mut cfg = a.common.config()?;
    if let Some(v) = a.window {
        cfg.window_s = v;
    }
    if let Some(v) = a.theta {
        cfg.theta_th = v;
    }
    if let Some(v) = a.monitored {
        cfg.monitored_runs = v;
    }
    if let Some(v) = a.intensities {
        cfg.intensities = v;
    }
    let report = experiment::table4(&cfg)?;
    let mut text = report.to_text();
    text.push_str(&format!(
        "false positive rate {:.4}, pca dims {}\n",
        report.false_positive_rate(),
        report.pca_dims
    ));
    write_or_print(a.out.as_deref(), &text)?;
    if let Some(path) = &a.csv {
        write_or_print(Some(path), &report.to_csv())?;
    }
    if let Some(path) = &a.json {
        write_or_print(Some(path), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    Ok(())
}
