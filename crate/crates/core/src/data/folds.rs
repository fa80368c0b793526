//! Stratified k-fold partitioning with a train/dev/test split per fold.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::manifest::DatasetManifest;

/// Relative sizes of the train, dev and test portions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const DEFAULT: SplitRatios = SplitRatios {
        train: 8.0,
        dev: 0.5,
        test: 1.5,
    };
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios::DEFAULT
    }
}

/// Record indices (into `DatasetManifest::records`) for one fold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

impl FoldSplit {
    pub fn ids<'a>(&self, manifest: &'a DatasetManifest, which: &[usize]) -> Vec<&'a str> {
        which.iter().map(|&i| manifest.records[i].id.as_str()).collect()
    }
}

/// Partitions the manifest into `k` test sets and splits the remainder of
/// each fold into train and dev by `ratios.train : ratios.dev`.
///
/// Test sets are stratified by label unless the manifest carries a fold id
/// on every record, in which case those ids are used as-is. Classes with
/// fewer than `k` members cannot be stratified; they are pooled and dealt
/// out round-robin, with a warning.
pub fn make_folds(
    manifest: &DatasetManifest,
    k: usize,
    ratios: SplitRatios,
    seed: u64,
) -> Result<Vec<FoldSplit>> {
    let total = ratios.train + ratios.dev + ratios.test;
    if (total - 10.0).abs() > 1e-9 || ratios.train <= 0.0 || ratios.dev < 0.0 || ratios.test <= 0.0 {
        return Err(Error::invalid(
            "make_folds",
            format!("ratios must be positive and sum to 10, got {ratios:?}"),
        ));
    }
    let n = manifest.records.len();
    if k < 2 || k > n {
        return Err(Error::invalid(
            "make_folds",
            format!("cannot make {k} folds from {n} records"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        by_class.entry(r.label).or_default().push(i);
    }

    let mut fold_of = vec![0usize; n];
    if manifest.has_fold_assignment() {
        for (i, r) in manifest.records.iter().enumerate() {
            let f = r.fold.expect("checked");
            if f >= k {
                return Err(Error::data(
                    Some(&r.id),
                    format!("fold {f} does not exist with {k} folds"),
                ));
            }
            fold_of[i] = f;
        }
    } else {
        let mut next = 0usize;
        let mut pooled = Vec::new();
        for (label, members) in &by_class {
            let mut members = members.clone();
            members.shuffle(&mut rng);
            if members.len() < k {
                log::warn!(
                    "class {label} has {} samples (< {k} folds); assigning it without stratification",
                    members.len()
                );
                pooled.extend(members);
                continue;
            }
            for i in members {
                fold_of[i] = next % k;
                next += 1;
            }
        }
        for i in pooled {
            fold_of[i] = next % k;
            next += 1;
        }
    }

    let dev_share = ratios.dev / (ratios.train + ratios.dev);
    let mut splits = Vec::with_capacity(k);
    for fold in 0..k {
        let mut split = FoldSplit {
            fold,
            train: Vec::new(),
            dev: Vec::new(),
            test: Vec::new(),
        };
        for members in by_class.values() {
            let mut rest = Vec::new();
            for &i in members {
                if fold_of[i] == fold {
                    split.test.push(i);
                } else {
                    rest.push(i);
                }
            }
            rest.shuffle(&mut rng);
            let n_dev = (rest.len() as f64 * dev_share).round() as usize;
            split.dev.extend_from_slice(&rest[..n_dev]);
            split.train.extend_from_slice(&rest[n_dev..]);
        }
        if split.test.is_empty() || split.train.is_empty() {
            return Err(Error::data(None, format!("fold {fold} has an empty train or test split")));
        }
        if split.dev.is_empty() {
            // Too few records for the dev share to round up anywhere.
            let moved = split.train.pop().expect("non-empty");
            split.dev.push(moved);
        }
        split.train.sort_unstable();
        split.dev.sort_unstable();
        split.test.sort_unstable();
        splits.push(split);
    }
    Ok(splits)
}
