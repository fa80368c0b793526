//! The fold × repetition experiment grid and its resumable results file.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use rayon::prelude::*;

use crate::data::{FoldSplit, LoadedDataset, StandardScaler};
use crate::error::{Error, Result};
use crate::model::{FusionModel, ModelConfig};
use crate::stats::{ConfusionMatrix, RunMetrics};

use super::{derive_seed, train_one, FoldData, TrainConfig};

pub const RESULTS_HEADER: [&str; 7] = [
    "config_name",
    "fold",
    "seed",
    "epochs",
    "val_uwa",
    "test_wa",
    "test_uwa",
];

/// Seed of repetition `rep` on `fold`; shared by every configuration so
/// that configurations see the same seeds per cell.
pub fn run_seed(base_seed: u64, fold: usize, rep: usize) -> u64 {
    derive_seed(&[base_seed, fold as u64, rep as u64])
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub config_name: String,
    pub fold: usize,
    pub seed: u64,
    pub epochs: usize,
    pub val_uwa: f64,
    pub test_wa: f64,
    pub test_uwa: f64,
    pub confusion: ConfusionMatrix,
}

/// One line of a results file.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub config_name: String,
    pub fold: usize,
    pub seed: u64,
    pub epochs: usize,
    pub val_uwa: f64,
    pub test_wa: f64,
    pub test_uwa: f64,
}

impl ResultRow {
    pub fn key(&self) -> (String, usize, u64) {
        (self.config_name.clone(), self.fold, self.seed)
    }

    pub fn metrics(&self) -> RunMetrics {
        RunMetrics {
            config: self.config_name.clone(),
            fold: self.fold,
            seed: self.seed,
            test_wa: self.test_wa,
            test_uwa: self.test_uwa,
        }
    }

    fn line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}\n",
            self.config_name, self.fold, self.seed, self.epochs, self.val_uwa, self.test_wa, self.test_uwa
        )
    }
}

impl From<&RunResult> for ResultRow {
    fn from(r: &RunResult) -> Self {
        ResultRow {
            config_name: r.config_name.clone(),
            fold: r.fold,
            seed: r.seed,
            epochs: r.epochs,
            val_uwa: r.val_uwa,
            test_wa: r.test_wa,
            test_uwa: r.test_uwa,
        }
    }
}

/// Parses a results file; the header must match [`RESULTS_HEADER`].
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    let header = reader.headers().map_err(|e| Error::parse(path, e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != RESULTS_HEADER {
        return Err(Error::parse(
            path,
            format!("unexpected header; expected {}", RESULTS_HEADER.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for (n, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, e.to_string()))?;
        let bad = |field: &str| Error::parse(path, format!("row {}: bad {field}", n + 2));
        rows.push(ResultRow {
            config_name: rec[0].to_owned(),
            fold: rec[1].parse().map_err(|_| bad("fold"))?,
            seed: rec[2].parse().map_err(|_| bad("seed"))?,
            epochs: rec[3].parse().map_err(|_| bad("epochs"))?,
            val_uwa: rec[4].parse().map_err(|_| bad("val_uwa"))?,
            test_wa: rec[5].parse().map_err(|_| bad("test_wa"))?,
            test_uwa: rec[6].parse().map_err(|_| bad("test_uwa"))?,
        });
    }
    Ok(rows)
}

/// Append-only results file plus a `confusion/` directory of per-run
/// count matrices beside it.
pub struct ResultsFile {
    path: PathBuf,
    file: File,
}

impl ResultsFile {
    /// Opens `path` for appending, creating it with a header if absent, and
    /// returns the rows already present.
    pub fn open(path: &Path) -> Result<(Self, Vec<ResultRow>)> {
        let existing = if path.exists() && fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false) {
            read_results(path)?
        } else {
            fs::write(path, format!("{}\n", RESULTS_HEADER.join(","))).map_err(|e| Error::io(path, e))?;
            Vec::new()
        };
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok((
            ResultsFile {
                path: path.to_path_buf(),
                file,
            },
            existing,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn confusion_path(results: &Path, config: &str, fold: usize, seed: u64) -> PathBuf {
        results
            .parent()
            .unwrap_or(Path::new(""))
            .join("confusion")
            .join(format!("{config}_f{fold}_s{seed}.csv"))
    }

    /// Writes the confusion sidecar, then the results row, so that a row in
    /// the file implies its sidecar exists.
    pub fn append(&mut self, r: &RunResult) -> Result<()> {
        let cm_path = Self::confusion_path(&self.path, &r.config_name, r.fold, r.seed);
        if let Some(dir) = cm_path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&cm_path, r.confusion.to_csv()).map_err(|e| Error::io(&cm_path, e))?;
        self.file
            .write_all(ResultRow::from(r).line().as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

#[derive(Clone, Debug)]
pub struct GridSpec {
    pub configs: Vec<ModelConfig>,
    /// Folds to run, by index into the fold list.
    pub folds: Vec<usize>,
    pub repeats: usize,
    pub base_seed: u64,
    pub train: TrainConfig,
    pub jobs: usize,
}

impl GridSpec {
    /// Cells in canonical order: configuration, then fold, then repetition.
    pub fn cells(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for c in 0..self.configs.len() {
            for &f in &self.folds {
                for r in 0..self.repeats {
                    out.push((c, f, r));
                }
            }
        }
        out
    }
}

/// Trains every (configuration, fold, repetition) cell not listed in
/// `done` (keyed by configuration name, fold and seed) on up to
/// `spec.jobs` threads. `sink` sees each finished run and its best model on
/// the calling thread, in canonical cell order regardless of completion
/// order.
pub fn run_grid(
    data: &LoadedDataset,
    folds: &[FoldSplit],
    spec: &GridSpec,
    done: &HashSet<(String, usize, u64)>,
    mut sink: impl FnMut(&RunResult, &FusionModel) -> Result<()>,
) -> Result<Vec<RunResult>> {
    if spec.configs.is_empty() {
        return Err(Error::Config("no model configurations to run".into()));
    }
    spec.train.validate()?;
    for &f in &spec.folds {
        if f >= folds.len() {
            return Err(Error::Config(format!("fold {f} does not exist ({} folds)", folds.len())));
        }
    }
    let names: Vec<String> = spec.configs.iter().map(ModelConfig::name).collect();
    let pending: Vec<(usize, usize, usize)> = spec
        .cells()
        .into_iter()
        .filter(|&(c, f, r)| !done.contains(&(names[c].clone(), f, run_seed(spec.base_seed, f, r))))
        .collect();

    let mut scalers: BTreeMap<usize, Option<StandardScaler>> = BTreeMap::new();
    for &f in &spec.folds {
        if let std::collections::btree_map::Entry::Vacant(e) = scalers.entry(f) {
            e.insert(data.fit_audio_scaler(&folds[f].train, f)?);
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let run_cell = |&(c, f, r): &(usize, usize, usize)| -> Result<(RunResult, FusionModel)> {
        let seed = run_seed(spec.base_seed, f, r);
        let config = &spec.configs[c];
        let mut model = FusionModel::build(config, derive_seed(&[seed, 0]))?;
        let split = &folds[f];
        let fold = FoldData {
            fold: f,
            data,
            train: &split.train,
            dev: &split.dev,
            test: &split.test,
            scaler: scalers[&f].as_ref(),
        };
        let cfg = TrainConfig {
            seed,
            ..spec.train.clone()
        };
        let out = train_one(&mut model, &fold, &cfg)?;
        log::info!(
            "{} fold {f} rep {r}: {} epochs, val uwa {:.4}, test wa {:.4}, test uwa {:.4}",
            names[c],
            out.epochs,
            out.val_uwa,
            out.test_wa,
            out.test_uwa
        );
        Ok((
            RunResult {
                config_name: names[c].clone(),
                fold: f,
                seed,
                epochs: out.epochs,
                val_uwa: out.val_uwa,
                test_wa: out.test_wa,
                test_uwa: out.test_uwa,
                confusion: out.test.confusion,
            },
            model,
        ))
    };

    let (tx, rx) = mpsc::channel();
    let mut results = Vec::with_capacity(pending.len());
    let mut first_err = None;
    std::thread::scope(|scope| {
        let pending = &pending;
        let run_cell = &run_cell;
        let pool = &pool;
        scope.spawn(move || {
            pool.install(|| {
                pending
                    .par_iter()
                    .enumerate()
                    .for_each_with(tx, |tx, (i, cell)| {
                        let _ = tx.send((i, run_cell(cell)));
                    })
            })
        });
        let mut buffer = BTreeMap::new();
        let mut next = 0;
        for (i, outcome) in rx {
            buffer.insert(i, outcome);
            while let Some(outcome) = buffer.remove(&next) {
                next += 1;
                if first_err.is_some() {
                    continue;
                }
                match outcome.and_then(|(res, model)| sink(&res, &model).map(|_| res)) {
                    Ok(res) => results.push(res),
                    Err(e) => first_err = Some(e),
                }
            }
        }
    });
    match first_err {
        Some(e) => Err(e),
        None => Ok(results),
    }
}
