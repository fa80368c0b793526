//! Dataset manifest: a CSV index of utterances plus an optional
//! `schema.txt` sidecar declaring per-modality widths and maximum lengths.
//!
//! ```text
//! id,label,fold,audio_path,vision_path,text_path
//! s00000,3,,audio/s00000.ftns,vision/s00000.ftns,text/s00000.ftns
//! ```
//!
//! Paths are relative to the manifest's directory. An empty `fold` means
//! folds are assigned by [`make_folds`](super::make_folds).

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::parse_kv;
use crate::schema::{DatasetSchema, Modality, NUM_CLASSES};

use super::ftns;

pub const MANIFEST_HEADER: [&str; 6] = ["id", "label", "fold", "audio_path", "vision_path", "text_path"];
pub const SCHEMA_FILE: &str = "schema.txt";
pub const MAX_FOLDS: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UtteranceRecord {
    pub id: String,
    pub label: usize,
    pub fold: Option<usize>,
    /// Feature file per modality, as written in the manifest.
    pub paths: BTreeMap<Modality, PathBuf>,
    /// Sequence length per modality, from the feature-file headers.
    pub lengths: BTreeMap<Modality, usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub schema: DatasetSchema,
    pub records: Vec<UtteranceRecord>,
    /// Directory that relative feature paths are resolved against.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn resolve(&self, rel: &Path) -> PathBuf {
        if rel.is_absolute() {
            rel.to_path_buf()
        } else {
            self.root.join(rel)
        }
    }

    /// Modalities present in every record.
    pub fn common_modalities(&self) -> Vec<Modality> {
        Modality::ALL
            .into_iter()
            .filter(|m| self.records.iter().all(|r| r.paths.contains_key(m)))
            .collect()
    }

    pub fn has_fold_assignment(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.fold.is_some())
    }
}

pub fn schema_to_kv(schema: &DatasetSchema) -> String {
    let mut s = String::new();
    for m in Modality::ALL {
        let ms = schema.get(m);
        s.push_str(&format!("{m}_width={}\n{m}_max_len={}\n", ms.width, ms.max_len));
    }
    s
}

pub fn schema_from_kv(text: &str) -> Result<DatasetSchema> {
    let map = parse_kv(text)?;
    let positive = |key: String| -> Result<Option<usize>> {
        let Some(v) = map.get(&key) else {
            return Ok(None);
        };
        match v.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{key}: expected a positive integer"))),
        }
    };
    let mut schema = DatasetSchema::FULL;
    for m in Modality::ALL {
        let ms = schema.get_mut(m);
        if let Some(w) = positive(format!("{m}_width"))? {
            ms.width = w;
        }
        if let Some(t) = positive(format!("{m}_max_len"))? {
            ms.max_len = t;
        }
    }
    Ok(schema)
}

/// Reads and validates a manifest. Every referenced feature file's header
/// is checked now; payloads are read later.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let schema_path = root.join(SCHEMA_FILE);
    let schema = if schema_path.exists() {
        let text = fs::read_to_string(&schema_path).map_err(|e| Error::io(&schema_path, e))?;
        schema_from_kv(&text)?
    } else {
        DatasetSchema::FULL
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    let header = reader
        .headers()
        .map_err(|e| Error::parse(path, e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::parse(
            path,
            format!("expected header {}", MANIFEST_HEADER.join(",")),
        ));
    }

    let mut manifest = DatasetManifest {
        schema,
        records: Vec::new(),
        root,
    };
    let mut seen = HashSet::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::parse(path, e.to_string()))?;
        let id = row[0].trim().to_owned();
        if id.is_empty() {
            return Err(Error::data(None, format!("row {}: empty id", line + 2)));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::data(Some(&id), "duplicate id"));
        }
        let label: usize = row[1]
            .trim()
            .parse()
            .map_err(|_| Error::data(Some(&id), format!("label {:?} is not an integer", &row[1])))?;
        if label >= NUM_CLASSES {
            return Err(Error::data(
                Some(&id),
                format!("label {label} outside 0..{NUM_CLASSES}"),
            ));
        }
        let fold = match row[2].trim() {
            "" => None,
            f => {
                let f: usize = f
                    .parse()
                    .map_err(|_| Error::data(Some(&id), format!("fold {f:?} is not an integer")))?;
                if f >= MAX_FOLDS {
                    return Err(Error::data(Some(&id), format!("fold {f} outside 0..{MAX_FOLDS}")));
                }
                Some(f)
            }
        };
        let mut paths = BTreeMap::new();
        let mut lengths = BTreeMap::new();
        for (i, m) in Modality::ALL.into_iter().enumerate() {
            let rel = row[3 + i].trim();
            if rel.is_empty() {
                continue;
            }
            let rel = PathBuf::from(rel);
            let full = manifest.resolve(&rel);
            if !full.exists() {
                return Err(Error::data(
                    Some(&id),
                    format!("{m} feature file {} does not exist", full.display()),
                ));
            }
            let header = ftns::read_header(&full).map_err(|e| Error::data(Some(&id), e.to_string()))?;
            let width = manifest.schema.get(m).width;
            if header.dims.len() != 2 || header.dims[1] != width {
                return Err(Error::data(
                    Some(&id),
                    format!("{m} features have shape {:?}, expected (t, {width})", header.dims),
                ));
            }
            lengths.insert(m, header.dims[0]);
            paths.insert(m, rel);
        }
        if paths.is_empty() {
            return Err(Error::data(Some(&id), "no feature files"));
        }
        manifest.records.push(UtteranceRecord {
            id,
            label,
            fold,
            paths,
            lengths,
        });
    }
    Ok(manifest)
}

/// Writes the manifest CSV to `path` and the schema sidecar next to it.
pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    let csv_err = |e: csv::Error| Error::parse(path, e.to_string());
    writer.write_record(MANIFEST_HEADER).map_err(csv_err)?;
    for r in &manifest.records {
        let mut row = vec![
            r.id.clone(),
            r.label.to_string(),
            r.fold.map(|f| f.to_string()).unwrap_or_default(),
        ];
        for m in Modality::ALL {
            row.push(
                r.paths
                    .get(&m)
                    .map(|p| p.to_string_lossy().replace('\\', "/"))
                    .unwrap_or_default(),
            );
        }
        writer.write_record(&row).map_err(csv_err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    let schema_path = path.parent().unwrap_or(Path::new("")).join(SCHEMA_FILE);
    fs::write(&schema_path, schema_to_kv(&manifest.schema)).map_err(|e| Error::io(&schema_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn write_features(dir: &Path, name: &str, rows: usize, width: usize) -> PathBuf {
        let rel = PathBuf::from(format!("{name}.ftns"));
        let t = Tensor::from_fn(&[rows, width], |i| i as f64 * 0.5);
        ftns::write(&dir.join(&rel), &t, ftns::Precision::F32).unwrap();
        rel
    }

    fn tiny_schema() -> DatasetSchema {
        let mut s = DatasetSchema::DESK;
        s.audio.width = 3;
        s.text.width = 2;
        s
    }

    fn two_record_manifest(dir: &Path) -> DatasetManifest {
        let mut records = Vec::new();
        for (i, label) in [(0, 2usize), (1, 6)] {
            let mut paths = BTreeMap::new();
            let mut lengths = BTreeMap::new();
            paths.insert(Modality::Audio, write_features(dir, &format!("a{i}"), 4 + i, 3));
            paths.insert(Modality::Text, write_features(dir, &format!("t{i}"), 2, 2));
            lengths.insert(Modality::Audio, 4 + i);
            lengths.insert(Modality::Text, 2);
            records.push(UtteranceRecord {
                id: format!("u{i}"),
                label,
                fold: if i == 0 { Some(3) } else { None },
                paths,
                lengths,
            });
        }
        DatasetManifest {
            schema: tiny_schema(),
            records,
            root: dir.to_path_buf(),
        }
    }

    #[test]
    fn write_then_read_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let m = two_record_manifest(dir.path());
        let path = dir.path().join("manifest.csv");
        write_manifest(&m, &path).unwrap();
        let back = load_manifest(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.common_modalities(), vec![Modality::Audio, Modality::Text]);
    }

    #[test]
    fn missing_file_names_the_record() {
        let dir = tempfile::tempdir().unwrap();
        let m = two_record_manifest(dir.path());
        let path = dir.path().join("manifest.csv");
        write_manifest(&m, &path).unwrap();
        fs::remove_file(dir.path().join("a1.ftns")).unwrap();
        let err = load_manifest(&path).unwrap_err().to_string();
        assert!(err.contains("u1"), "{err}");
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = two_record_manifest(dir.path());
        m.records[0].label = 9;
        let path = dir.path().join("manifest.csv");
        write_manifest(&m, &path).unwrap();
        let err = load_manifest(&path).unwrap_err().to_string();
        assert!(err.contains("u0") && err.contains("label 9"), "{err}");
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = two_record_manifest(dir.path());
        m.schema.audio.width = 5;
        let path = dir.path().join("manifest.csv");
        write_manifest(&m, &path).unwrap();
        let err = load_manifest(&path).unwrap_err().to_string();
        assert!(err.contains("u0") && err.contains("audio"), "{err}");
    }

    #[test]
    fn bad_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        fs::write(&path, "id,label\nx,1\n").unwrap();
        assert!(load_manifest(&path).is_err());
    }

    #[test]
    fn schema_kv_round_trip() {
        let s = tiny_schema();
        assert_eq!(schema_from_kv(&schema_to_kv(&s)).unwrap(), s);
        assert!(schema_from_kv("audio_width=0").is_err());
    }
}
