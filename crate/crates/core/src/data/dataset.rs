use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::schema::{DatasetSchema, Modality};
use crate::tensor::Tensor;

use super::ftns;
use super::manifest::DatasetManifest;
use super::scaler::{Split, StandardScaler};

/// An unpadded `rows × width` feature matrix as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub rows: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FeatureSequence {
    pub fn new(rows: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * width {
            return Err(Error::shape("feature sequence", &[rows, width], &[data.len()]));
        }
        Ok(FeatureSequence { rows, width, data })
    }

    /// The first `min(rows, len)` frames.
    pub fn head(&self, len: usize) -> &[f32] {
        &self.data[..self.rows.min(len) * self.width]
    }
}

/// Keeps the first `target_len` rows and zero-pads at the end.
pub fn pad_or_truncate(x: &FeatureSequence, target_len: usize, width: usize) -> Result<Tensor> {
    if x.width != width {
        return Err(Error::shape("pad_or_truncate", &[width], &[x.width]));
    }
    if target_len == 0 {
        return Err(Error::invalid("pad_or_truncate", "target length must be positive"));
    }
    let mut data = vec![0.0; target_len * width];
    for (d, &s) in data.iter_mut().zip(x.head(target_len)) {
        *d = s as f64;
    }
    Tensor::new(vec![target_len, width], data)
}

/// Feature payloads for every record of a manifest, held in memory.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub schema: DatasetSchema,
    pub modalities: Vec<Modality>,
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub features: Vec<BTreeMap<Modality, FeatureSequence>>,
}

impl LoadedDataset {
    /// Reads the `modalities` feature files of every record in parallel.
    pub fn load(manifest: &DatasetManifest, modalities: &[Modality]) -> Result<Self> {
        let features = manifest
            .records
            .par_iter()
            .map(|r| {
                let mut out = BTreeMap::new();
                for &m in modalities {
                    let rel = r
                        .paths
                        .get(&m)
                        .ok_or_else(|| Error::data(Some(&r.id), format!("no {m} features")))?;
                    let (data, dims) = ftns::read_f32(&manifest.resolve(rel))
                        .map_err(|e| Error::data(Some(&r.id), e.to_string()))?;
                    if dims.len() != 2 || dims[1] != manifest.schema.get(m).width {
                        return Err(Error::data(
                            Some(&r.id),
                            format!("{m} features have shape {dims:?}"),
                        ));
                    }
                    out.insert(m, FeatureSequence::new(dims[0], dims[1], data)?);
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LoadedDataset {
            schema: manifest.schema,
            modalities: modalities.to_vec(),
            ids: manifest.records.iter().map(|r| r.id.clone()).collect(),
            labels: manifest.records.iter().map(|r| r.label).collect(),
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Fits the audio scaler on the real frames (after truncation) of the
    /// training records. `None` when audio is not loaded.
    pub fn fit_audio_scaler(&self, train: &[usize], fold: usize) -> Result<Option<StandardScaler>> {
        if !self.modalities.contains(&Modality::Audio) {
            return Ok(None);
        }
        let ms = self.schema.get(Modality::Audio);
        let frames = train
            .iter()
            .map(|&i| self.features[i][&Modality::Audio].head(ms.max_len));
        StandardScaler::fit(frames, ms.width, Split::Train, fold).map(Some)
    }

    /// Padded `max_len × width` inputs for record `i`, with the audio
    /// scaler applied to real frames only.
    pub fn inputs(&self, i: usize, scaler: Option<&StandardScaler>) -> Result<BTreeMap<Modality, Tensor>> {
        let mut out = BTreeMap::new();
        for (&m, seq) in &self.features[i] {
            let ms = self.schema.get(m);
            let mut t = pad_or_truncate(seq, ms.max_len, ms.width)?;
            if m == Modality::Audio {
                let s = scaler.ok_or_else(|| Error::invalid("apply_scaler", "scaler has not been fitted"))?;
                s.apply_rows(&mut t, seq.rows)?;
            }
            out.insert(m, t);
        }
        Ok(out)
    }
}
