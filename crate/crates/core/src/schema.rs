//! Modalities, class labels and per-modality input geometry.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 7;

/// Emotion classes in label-index order.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "angry",
    "excited",
    "happy",
    "sad",
    "frustrated",
    "surprise",
    "neutral",
];

/// Input stream. The derived ordering (audio, vision, text) is the canonical
/// order used for parameter layout and attention-pair enumeration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Audio,
    Vision,
    Text,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Audio, Modality::Vision, Modality::Text];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Vision => "vision",
            Modality::Text => "text",
        }
    }

    /// One-letter code used on the command line.
    pub fn code(self) -> char {
        match self {
            Modality::Audio => 'a',
            Modality::Vision => 'v',
            Modality::Text => 't',
        }
    }

    pub fn from_code(c: char) -> Option<Modality> {
        Modality::ALL.into_iter().find(|m| m.code() == c)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Modality::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown modality {s:?}")))
    }
}

/// Parses a modality-set code such as `tva` or `ta` into canonical order.
pub fn parse_modalities(code: &str) -> Result<Vec<Modality>> {
    let mut out = Vec::new();
    for c in code.chars() {
        let m = Modality::from_code(c)
            .ok_or_else(|| Error::Config(format!("unknown modality code {c:?} in {code:?}")))?;
        if out.contains(&m) {
            return Err(Error::Config(format!("modality {m} repeated in {code:?}")));
        }
        out.push(m);
    }
    if out.is_empty() {
        return Err(Error::Config("empty modality set".into()));
    }
    out.sort();
    Ok(out)
}

/// Inverse of [`parse_modalities`], written text-vision-audio (`tva`).
pub fn modalities_code(ms: &[Modality]) -> String {
    let mut sorted = ms.to_vec();
    sorted.sort();
    sorted.iter().rev().map(|m| m.code()).collect()
}

/// Width and maximum (padded) length of one modality's feature sequences.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModalitySchema {
    pub width: usize,
    pub max_len: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetSchema {
    pub audio: ModalitySchema,
    pub vision: ModalitySchema,
    pub text: ModalitySchema,
}

impl DatasetSchema {
    /// MFCC+deltas audio, ResNet face embeddings, GloVe words.
    pub const FULL: DatasetSchema = DatasetSchema {
        audio: ModalitySchema {
            width: 120,
            max_len: 1000,
        },
        vision: ModalitySchema {
            width: 2048,
            max_len: 32,
        },
        text: ModalitySchema {
            width: 300,
            max_len: 128,
        },
    };

    /// Small geometry for synthetic experiments that train in seconds.
    pub const DESK: DatasetSchema = DatasetSchema {
        audio: ModalitySchema {
            width: 12,
            max_len: 40,
        },
        vision: ModalitySchema {
            width: 16,
            max_len: 8,
        },
        text: ModalitySchema {
            width: 10,
            max_len: 16,
        },
    };

    pub fn get(&self, m: Modality) -> ModalitySchema {
        match m {
            Modality::Audio => self.audio,
            Modality::Vision => self.vision,
            Modality::Text => self.text,
        }
    }

    pub fn get_mut(&mut self, m: Modality) -> &mut ModalitySchema {
        match m {
            Modality::Audio => &mut self.audio,
            Modality::Vision => &mut self.vision,
            Modality::Text => &mut self.text,
        }
    }
}

impl Default for DatasetSchema {
    fn default() -> Self {
        DatasetSchema::FULL
    }
}
