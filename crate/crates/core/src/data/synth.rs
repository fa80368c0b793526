//! Synthetic datasets with a controllable class separation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::schema::{DatasetSchema, Modality, NUM_CLASSES};

use super::ftns;
use super::manifest::{write_manifest, DatasetManifest, UtteranceRecord};

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_per_class: usize,
    pub separation: f64,
    pub seed: u64,
    pub schema: DatasetSchema,
    pub modalities: Vec<Modality>,
}

impl SynthSpec {
    pub fn new(n_per_class: usize, separation: f64, seed: u64, schema: DatasetSchema) -> Self {
        SynthSpec {
            n_per_class,
            separation,
            seed,
            schema,
            modalities: Modality::ALL.to_vec(),
        }
    }
}

fn unit_direction(rng: &mut ChaCha8Rng, width: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..width).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Writes `out/manifest.csv`, `out/schema.txt` and one FTNS file per
/// utterance and modality under `out/<modality>/`.
///
/// Every frame of an utterance of class `c` is `separation · μ_{c,m}` plus
/// unit Gaussian noise, where `μ_{c,m}` is a unit vector drawn once per
/// class and modality. Labels cycle through the classes, so every class has
/// exactly `n_per_class` utterances.
pub fn synth_generate(spec: &SynthSpec, out: &Path) -> Result<DatasetManifest> {
    if !(spec.separation >= 0.0) || !spec.separation.is_finite() {
        return Err(Error::invalid(
            "synth",
            format!("separation must be a finite value >= 0, got {}", spec.separation),
        ));
    }
    if spec.n_per_class == 0 || spec.modalities.is_empty() {
        return Err(Error::invalid("synth", "need at least one utterance per class and one modality"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut means = BTreeMap::new();
    for c in 0..NUM_CLASSES {
        for &m in &spec.modalities {
            let width = spec.schema.get(m).width;
            let dir = unit_direction(&mut rng, width);
            means.insert((c, m), dir.into_iter().map(|x| x * spec.separation).collect::<Vec<_>>());
        }
    }

    for &m in &spec.modalities {
        let dir = out.join(m.name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }

    let total = spec.n_per_class * NUM_CLASSES;
    let mut records = Vec::with_capacity(total);
    for i in 0..total {
        let id = format!("s{i:05}");
        let label = i % NUM_CLASSES;
        let mut paths = BTreeMap::new();
        let mut lengths = BTreeMap::new();
        for &m in &spec.modalities {
            let ms = spec.schema.get(m);
            let min_len = ms.max_len.div_ceil(4).max(1);
            let len = rng.random_range(min_len..=ms.max_len);
            let mean = &means[&(label, m)];
            let mut data = Vec::with_capacity(len * ms.width);
            for _ in 0..len {
                for &mu in mean {
                    let noise: f64 = rng.sample(StandardNormal);
                    data.push((mu + noise) as f32);
                }
            }
            let rel = PathBuf::from(format!("{}/{id}.ftns", m.name()));
            let path = out.join(&rel);
            fs::write(&path, ftns::encode_f32(&data, &[len, ms.width])).map_err(|e| Error::io(&path, e))?;
            paths.insert(m, rel);
            lengths.insert(m, len);
        }
        records.push(UtteranceRecord {
            id,
            label,
            fold: None,
            paths,
            lengths,
        });
    }
    let manifest = DatasetManifest {
        schema: spec.schema,
        records,
        root: out.to_path_buf(),
    };
    write_manifest(&manifest, &out.join(MANIFEST_FILE))?;
    Ok(manifest)
}
