//! Command-line front end. Exit codes: 0 success, 1 usage, 2 data,
//! 3 verification failure.

use std::collections::{BTreeMap, HashSet};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::autodiff::OpKind;
use crate::checkpoint::save_checkpoint;
use crate::data::{load_manifest, make_folds, synth_generate, LoadedDataset, SplitRatios, SynthSpec};
use crate::error::Error;
use crate::gradcheck::{self, GradcheckOptions};
use crate::model::{parse_kv, ModelConfig, ModelDims, ModelKind};
use crate::schema::{parse_modalities, DatasetSchema, Modality};
use crate::stats::{self, ConfusionMatrix, RunMetrics};
use crate::training::{read_results, run_grid, GridSpec, ResultRow, ResultsFile, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

pub const SEED_ENV: &str = "FUSIONATTN_SEED";
pub const RESULTS_FILE: &str = "results.csv";

#[derive(Debug, Parser)]
#[command(name = "fusionattn", version, about = "Attention-based multimodal emotion classification")]
pub struct Cli {
    /// Log progress (repeat for per-epoch detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train and evaluate a grid of models over folds and seeds.
    Run(RunArgs),
    /// Welch t-test between two results files.
    Compare(CompareArgs),
    /// Finite-difference gradient verification.
    Gradcheck(GradcheckArgs),
    /// Summary table, comparisons and confusion matrices from a results file.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Scale {
    Desk,
    Full,
}

impl Scale {
    fn schema(self) -> DatasetSchema {
        match self {
            Scale::Desk => DatasetSchema::DESK,
            Scale::Full => DatasetSchema::FULL,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 40)]
    pub n_per_class: usize,
    #[arg(long, allow_negative_numbers = true, default_value_t = 5.0)]
    pub separation: f64,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Feature geometry of the generated files.
    #[arg(long, value_enum, default_value_t = Scale::Desk)]
    pub scale: Scale,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Manifest CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated model kinds: self, cross, self-nosp, cross-nosp, cross+self.
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
    /// Modality set, e.g. tva, ta, v.
    #[arg(long)]
    pub modalities: Option<String>,
    /// Number of the five folds to run (folds 0..n).
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long, env = SEED_ENV)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// key=value file; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Skip writing best-model checkpoints.
    #[arg(long)]
    pub no_checkpoints: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    /// Configuration to take from the first file.
    #[arg(long)]
    pub config_a: Option<String>,
    /// Configuration to take from the second file.
    #[arg(long)]
    pub config_b: Option<String>,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = gradcheck::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    #[arg(long, default_value_t = gradcheck::DEFAULT_STEP)]
    pub step: f64,
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub results: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: msg.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::InvalidArgument { .. } => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Everything `run` needs, after merging defaults, config file and flags.
#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub data: PathBuf,
    pub kinds: Vec<ModelKind>,
    pub modalities: Vec<Modality>,
    pub folds: usize,
    pub repeats: usize,
    pub base_seed: u64,
    pub jobs: usize,
    pub out: PathBuf,
    pub hidden: usize,
    pub heads: usize,
    pub train: TrainConfig,
    pub checkpoints: bool,
}

impl ExperimentSpec {
    pub fn from_args(args: &RunArgs) -> CliResult<Self> {
        let kv = match &args.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::from(Error::io(p, e)))?;
                parse_kv(&text)?
            }
            None => BTreeMap::new(),
        };
        fn pick<T: std::str::FromStr>(
            flag: Option<T>,
            kv: &BTreeMap<String, String>,
            key: &str,
            default: T,
        ) -> CliResult<T> {
            if let Some(v) = flag {
                return Ok(v);
            }
            match kv.get(key) {
                Some(s) => s
                    .parse()
                    .map_err(|_| CliError::usage(format!("config {key}: cannot parse {s:?}"))),
                None => Ok(default),
            }
        }
        let models: Vec<String> = match &args.models {
            Some(m) => m.clone(),
            None => kv
                .get("models")
                .map(|s| s.split(',').map(|x| x.trim().to_owned()).collect())
                .unwrap_or_else(|| vec!["self".to_owned()]),
        };
        let kinds = models
            .iter()
            .map(|m| m.parse::<ModelKind>().map_err(CliError::from))
            .collect::<CliResult<Vec<_>>>()?;
        if kinds.is_empty() {
            return Err(CliError::usage("at least one model kind is required"));
        }
        let code = pick(args.modalities.clone(), &kv, "modalities", "tva".to_owned())?;
        let modalities = parse_modalities(&code)?;

        let mut train = TrainConfig::default();
        train.apply_kv(&kv)?;
        if let Some(v) = args.max_epochs {
            train.max_epochs = v;
        }
        if let Some(v) = args.batch_size {
            train.batch_size = v;
        }
        if let Some(v) = args.learning_rate {
            train.learning_rate = v;
        }
        train.validate()?;

        let spec = ExperimentSpec {
            data: args.data.clone(),
            kinds,
            modalities,
            folds: pick(args.folds, &kv, "folds", 5)?,
            repeats: pick(args.repeats, &kv, "repeats", 10)?,
            base_seed: pick(args.seed, &kv, "seed", 0)?,
            jobs: pick(args.jobs, &kv, "jobs", 1)?,
            out: args.out.clone(),
            hidden: pick(args.hidden, &kv, "hidden", 60)?,
            heads: pick(args.heads, &kv, "heads", 6)?,
            train,
            checkpoints: !args.no_checkpoints,
        };
        if spec.folds == 0 || spec.folds > crate::data::manifest::MAX_FOLDS {
            return Err(CliError::usage(format!(
                "--folds must lie in 1..={}",
                crate::data::manifest::MAX_FOLDS
            )));
        }
        if spec.repeats == 0 || spec.jobs == 0 {
            return Err(CliError::usage("--repeats and --jobs must be at least 1"));
        }
        Ok(spec)
    }

    pub fn model_configs(&self, schema: &DatasetSchema) -> CliResult<Vec<ModelConfig>> {
        let dims = ModelDims::for_schema(schema, self.hidden, self.heads);
        self.kinds
            .iter()
            .map(|&k| ModelConfig::new(k, &self.modalities, dims).map_err(CliError::from))
            .collect()
    }
}

fn cmd_synth(args: &SynthArgs) -> CliResult<String> {
    if !(args.separation >= 0.0) || !args.separation.is_finite() {
        return Err(CliError::usage(format!(
            "--separation must be a finite value >= 0, got {}",
            args.separation
        )));
    }
    if args.n_per_class == 0 {
        return Err(CliError::usage("--n-per-class must be at least 1"));
    }
    let spec = SynthSpec::new(args.n_per_class, args.separation, args.seed, args.scale.schema());
    let m = synth_generate(&spec, &args.out)?;
    Ok(format!(
        "wrote {} utterances ({} feature files) to {}\n",
        m.records.len(),
        m.records.iter().map(|r| r.paths.len()).sum::<usize>(),
        args.out.display()
    ))
}

fn load_confusions(results: &Path, rows: &[ResultRow]) -> CliResult<Vec<(String, ConfusionMatrix)>> {
    let mut out = Vec::new();
    for r in rows {
        let p = ResultsFile::confusion_path(results, &r.config_name, r.fold, r.seed);
        if !p.exists() {
            log::warn!("missing confusion matrix {}", p.display());
            continue;
        }
        let text = fs::read_to_string(&p).map_err(|e| CliError::from(Error::io(&p, e)))?;
        out.push((r.config_name.clone(), ConfusionMatrix::from_csv(&text)?));
    }
    Ok(out)
}

fn report(results: &Path, out: &Path) -> CliResult<String> {
    let rows = read_results(results)?;
    let metrics: Vec<RunMetrics> = rows.iter().map(ResultRow::metrics).collect();
    let cms = load_confusions(results, &rows)?;
    stats::render_outputs(&metrics, &cms, out)?;
    Ok(stats::summary_csv(&metrics)?)
}

fn cmd_run(args: &RunArgs) -> CliResult<String> {
    let spec = ExperimentSpec::from_args(args)?;
    let manifest = load_manifest(&spec.data)?;
    let configs = spec.model_configs(&manifest.schema)?;
    let available = manifest.common_modalities();
    if let Some(m) = spec.modalities.iter().find(|m| !available.contains(m)) {
        return Err(CliError {
            code: EXIT_DATA,
            message: format!("dataset lacks {m} features for some records"),
        });
    }
    let folds = make_folds(&manifest, crate::data::manifest::MAX_FOLDS, SplitRatios::DEFAULT, spec.base_seed)?;
    let data = LoadedDataset::load(&manifest, &spec.modalities)?;

    fs::create_dir_all(&spec.out).map_err(|e| CliError::from(Error::io(&spec.out, e)))?;
    let results_path = spec.out.join(RESULTS_FILE);
    let (mut file, existing) = ResultsFile::open(&results_path)?;
    let done: HashSet<(String, usize, u64)> = existing.iter().map(ResultRow::key).collect();
    let grid = GridSpec {
        configs,
        folds: (0..spec.folds).collect(),
        repeats: spec.repeats,
        base_seed: spec.base_seed,
        train: spec.train.clone(),
        jobs: spec.jobs,
    };
    let total = grid.cells().len();
    let ckpt_dir = spec.out.join("checkpoints");
    let fresh = run_grid(&data, &folds, &grid, &done, |res, model| {
        file.append(res)?;
        if spec.checkpoints {
            save_checkpoint(model, &ckpt_dir.join(format!("{}_f{}_s{}", res.config_name, res.fold, res.seed)))?;
        }
        Ok(())
    })?;
    let summary = report(&results_path, &spec.out)?;
    Ok(format!(
        "{} of {total} runs trained ({} resumed from {})\n{summary}",
        fresh.len(),
        total - fresh.len(),
        results_path.display()
    ))
}

fn select<'a>(rows: &'a [ResultRow], wanted: Option<&str>, path: &Path) -> CliResult<(String, Vec<&'a ResultRow>)> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.config_name.as_str()) {
            names.push(&r.config_name);
        }
    }
    let name = match (wanted, names.as_slice()) {
        (Some(w), _) if names.contains(&w) => w.to_owned(),
        (None, [only]) => (*only).to_owned(),
        (w, _) => {
            return Err(CliError {
                code: EXIT_DATA,
                message: format!(
                    "{}: {}; available configurations: {}",
                    path.display(),
                    match w {
                        Some(w) => format!("no configuration named {w:?}"),
                        None => "several configurations present, choose one".to_owned(),
                    },
                    if names.is_empty() { "(none)".to_owned() } else { names.join(", ") }
                ),
            })
        }
    };
    let picked = rows.iter().filter(|r| r.config_name == name).collect();
    Ok((name, picked))
}

fn cmd_compare(args: &CompareArgs) -> CliResult<String> {
    let rows_a = read_results(&args.a)?;
    let rows_b = read_results(&args.b)?;
    let (name_a, a) = select(&rows_a, args.config_a.as_deref(), &args.a)?;
    let (name_b, b) = select(&rows_b, args.config_b.as_deref(), &args.b)?;
    let mut rows = Vec::new();
    for (metric, get) in [
        ("wa", (|r: &ResultRow| r.test_wa) as fn(&ResultRow) -> f64),
        ("uwa", |r: &ResultRow| r.test_uwa),
    ] {
        let xa: Vec<f64> = a.iter().map(|r| get(r)).collect();
        let xb: Vec<f64> = b.iter().map(|r| get(r)).collect();
        rows.push(stats::compare(metric, &name_a, &xa, &name_b, &xb)?);
    }
    let csv = stats::comparison_csv(&rows);
    match &args.out {
        Some(p) => {
            fs::write(p, &csv).map_err(|e| CliError::from(Error::io(p, e)))?;
            Ok(format!("wrote {}\n{csv}", p.display()))
        }
        None => Ok(csv),
    }
}

fn cmd_gradcheck(args: &GradcheckArgs) -> CliResult<String> {
    if !(args.tolerance > 0.0) || !(args.step > 0.0) {
        return Err(CliError::usage("--tolerance and --step must be positive"));
    }
    let fault = match &args.inject_fault {
        Some(name) => Some(OpKind::from_name(name).ok_or_else(|| {
            let names: Vec<&str> = OpKind::ALL.iter().map(|k| k.name()).collect();
            CliError::usage(format!("unknown op {name:?}; known ops: {}", names.join(", ")))
        })?),
        None => None,
    };
    let report = gradcheck::run(&GradcheckOptions {
        tolerance: args.tolerance,
        step: args.step,
        fault,
    })?;
    let text = report.render(args.tolerance);
    if report.passed() {
        Ok(text)
    } else {
        Err(CliError {
            code: EXIT_VERIFY,
            message: text,
        })
    }
}

/// Parses `args` (program name first) and runs the command, writing its
/// output to stdout and diagnostics to stderr. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();
    let outcome = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Report(a) => report(&a.results, &a.out),
    };
    match outcome {
        Ok(text) => {
            print!("{text}");
            EXIT_OK
        }
        Err(e) => {
            if e.code == EXIT_VERIFY {
                print!("{}", e.message);
            } else {
                eprintln!("error: {}", e.message);
            }
            e.code
        }
    }
}
