//! Model checkpoints: `config.txt` (key-value model configuration),
//! `params.txt` (one `file name` line per tensor, layout order) and one
//! 64-bit FTNS file per parameter tensor.

use std::fs;
use std::path::Path;

use crate::data::ftns::{self, Precision};
use crate::error::{Error, Result};
use crate::model::{FusionModel, ModelConfig};
use crate::params::ParamSet;

pub const CONFIG_FILE: &str = "config.txt";
pub const INDEX_FILE: &str = "params.txt";

pub fn save_checkpoint(model: &FusionModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config_path = dir.join(CONFIG_FILE);
    fs::write(&config_path, model.config().to_kv()).map_err(|e| Error::io(&config_path, e))?;
    let mut index = String::new();
    for (i, (name, tensor)) in model.params().iter().enumerate() {
        let file = format!("p{i:04}.ftns");
        ftns::write(&dir.join(&file), tensor, Precision::F64)?;
        index.push_str(&format!("{file} {name}\n"));
    }
    let index_path = dir.join(INDEX_FILE);
    fs::write(&index_path, index).map_err(|e| Error::io(&index_path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<FusionModel> {
    let config_path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
    let config = ModelConfig::from_kv(&text)?;
    let index_path = dir.join(INDEX_FILE);
    let index = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let mut params = ParamSet::new();
    for line in index.lines().filter(|l| !l.trim().is_empty()) {
        let (file, name) = line
            .split_once(' ')
            .ok_or_else(|| Error::parse(&index_path, format!("malformed line {line:?}")))?;
        if file.contains('/') || file.contains('\\') {
            return Err(Error::parse(&index_path, format!("file {file:?} escapes the checkpoint")));
        }
        let path = dir.join(file);
        if ftns::read_header(&path)?.precision != Precision::F64 {
            return Err(Error::parse(&path, "checkpoint tensors must be 64-bit"));
        }
        params.insert(name, ftns::read(&path)?)?;
    }
    FusionModel::from_params(&config, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelDims, ModelKind};
    use crate::schema::{DatasetSchema, Modality};

    #[test]
    fn round_trip_is_bit_exact() {
        let dims = ModelDims::for_schema(&DatasetSchema::DESK, 4, 2);
        let kind: ModelKind = "cross+self".parse().unwrap();
        let config = ModelConfig::new(kind, &[Modality::Text, Modality::Audio], dims).unwrap();
        let model = FusionModel::build(&config, 17).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&model, dir.path()).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back.config(), model.config());
        for ((na, a), (nb, b)) in model.params().iter().zip(back.params().iter()) {
            assert_eq!(na, nb);
            assert_eq!(a.shape(), b.shape());
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn missing_tensor_is_an_error() {
        let dims = ModelDims::for_schema(&DatasetSchema::DESK, 4, 2);
        let config = ModelConfig::new("self".parse().unwrap(), &[Modality::Text], dims).unwrap();
        let model = FusionModel::build(&config, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&model, dir.path()).unwrap();
        fs::remove_file(dir.path().join("p0001.ftns")).unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
    }
}
