//! Fusion model assembly: per-modality encoders, self or cross attention,
//! temporal averaging, statistical pooling and the classifier.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{
    statistical_pooling, temporal_average, ClassifierParams, Dropout, GruParams, MhaParams,
    TimeConvParams,
};
use crate::params::{Bound, ParamSet};
use crate::schema::{modalities_code, parse_modalities, DatasetSchema, Modality, NUM_CLASSES};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttentionMode {
    SelfAttention,
    Cross,
    /// Independent self and cross branches feeding one classifier.
    Combined,
}

impl AttentionMode {
    pub fn name(self) -> &'static str {
        match self {
            AttentionMode::SelfAttention => "self",
            AttentionMode::Cross => "cross",
            AttentionMode::Combined => "cross+self",
        }
    }
}

impl FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self" => Ok(AttentionMode::SelfAttention),
            "cross" => Ok(AttentionMode::Cross),
            "cross+self" | "combined" => Ok(AttentionMode::Combined),
            other => Err(Error::Config(format!("unknown attention mode {other:?}"))),
        }
    }
}

/// Model family names accepted on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelKind {
    pub mode: AttentionMode,
    pub use_statistical_pooling: bool,
}

impl ModelKind {
    pub const ALL: [&'static str; 5] = ["self", "cross", "self-nosp", "cross-nosp", "cross+self"];

    pub fn name(self) -> String {
        if self.use_statistical_pooling {
            self.mode.name().to_owned()
        } else {
            format!("{}-nosp", self.mode.name())
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (mode, sp) = match s.strip_suffix("-nosp") {
            Some(base) => (base, false),
            None => (s, true),
        };
        let mode: AttentionMode = mode.parse()?;
        if mode == AttentionMode::Combined && !sp {
            return Err(Error::Config("cross+self requires statistical pooling".into()));
        }
        Ok(ModelKind {
            mode,
            use_statistical_pooling: sp,
        })
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Input geometry and encoder settings for one modality.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderDims {
    pub max_len: usize,
    pub width: usize,
    /// Output length of the time-axis convolution; `None` for text.
    pub conv_out: Option<usize>,
}

impl EncoderDims {
    pub fn encoded_len(&self) -> usize {
        self.conv_out.unwrap_or(self.max_len)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelDims {
    pub audio: EncoderDims,
    pub vision: EncoderDims,
    pub text: EncoderDims,
    /// GRU hidden size per direction; the encoded width is twice this.
    pub hidden: usize,
    pub heads: usize,
    pub fc_hidden: usize,
    pub classes: usize,
    pub dropout: f64,
}

impl ModelDims {
    /// Audio 1000×120 → 500, vision 32×2048 → 25, text 128×300, 60 hidden
    /// units, 6 heads.
    pub fn full() -> Self {
        ModelDims::for_schema(&DatasetSchema::FULL, 60, 6)
    }

    /// Dimensions for a dataset schema. Convolution output lengths keep the
    /// 1000→500 (audio) and 32→25 (vision) ratios.
    pub fn for_schema(schema: &DatasetSchema, hidden: usize, heads: usize) -> Self {
        let conv = |t: usize, num: usize, den: usize| ((t * num + den / 2) / den).clamp(1, t);
        ModelDims {
            audio: EncoderDims {
                max_len: schema.audio.max_len,
                width: schema.audio.width,
                conv_out: Some(conv(schema.audio.max_len, 500, 1000)),
            },
            vision: EncoderDims {
                max_len: schema.vision.max_len,
                width: schema.vision.width,
                conv_out: Some(conv(schema.vision.max_len, 25, 32)),
            },
            text: EncoderDims {
                max_len: schema.text.max_len,
                width: schema.text.width,
                conv_out: None,
            },
            hidden,
            heads,
            fc_hidden: hidden,
            classes: NUM_CLASSES,
            dropout: 0.1,
        }
    }

    pub fn encoder(&self, m: Modality) -> &EncoderDims {
        match m {
            Modality::Audio => &self.audio,
            Modality::Vision => &self.vision,
            Modality::Text => &self.text,
        }
    }

    pub fn encoder_mut(&mut self, m: Modality) -> &mut EncoderDims {
        match m {
            Modality::Audio => &mut self.audio,
            Modality::Vision => &mut self.vision,
            Modality::Text => &mut self.text,
        }
    }

    /// Width of encoded sequences (`d″`).
    pub fn model_width(&self) -> usize {
        2 * self.hidden
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Canonical (audio, vision, text) order, no repeats.
    pub modalities: Vec<Modality>,
    pub mode: AttentionMode,
    pub use_statistical_pooling: bool,
    pub dims: ModelDims,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, modalities: &[Modality], dims: ModelDims) -> Result<Self> {
        let mut ms = modalities.to_vec();
        ms.sort();
        let cfg = ModelConfig {
            modalities: ms,
            mode: kind.mode,
            use_statistical_pooling: kind.use_statistical_pooling,
            dims,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn kind(&self) -> ModelKind {
        ModelKind {
            mode: self.mode,
            use_statistical_pooling: self.use_statistical_pooling,
        }
    }

    /// `<kind>-<modalities>`, e.g. `cross-nosp-tva`.
    pub fn name(&self) -> String {
        format!("{}-{}", self.kind().name(), modalities_code(&self.modalities))
    }

    pub fn validate(&self) -> Result<()> {
        let ms = &self.modalities;
        if ms.is_empty() {
            return Err(Error::Config("at least one modality is required".into()));
        }
        if ms.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "modalities must be unique and in canonical order".into(),
            ));
        }
        if matches!(self.mode, AttentionMode::Cross | AttentionMode::Combined) && ms.len() < 2 {
            return Err(Error::Config(format!(
                "{} attention needs at least two modalities",
                self.mode.name()
            )));
        }
        if self.mode == AttentionMode::Combined && !self.use_statistical_pooling {
            return Err(Error::Config("cross+self requires statistical pooling".into()));
        }
        let d = &self.dims;
        if d.hidden == 0 || d.heads == 0 || d.fc_hidden == 0 || d.classes == 0 {
            return Err(Error::Config("hidden, heads, fc_hidden and classes must be positive".into()));
        }
        if d.model_width() % d.heads != 0 {
            return Err(Error::Config(format!(
                "{} heads do not divide model width {}",
                d.heads,
                d.model_width()
            )));
        }
        if !(0.0..1.0).contains(&d.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", d.dropout)));
        }
        for &m in ms {
            let e = d.encoder(m);
            if e.max_len == 0 || e.width == 0 {
                return Err(Error::Config(format!("{m}: lengths and widths must be positive")));
            }
            match (m, e.conv_out) {
                (Modality::Text, Some(_)) => {
                    return Err(Error::Config("the text encoder has no convolution".into()))
                }
                (Modality::Audio | Modality::Vision, None) => {
                    return Err(Error::Config(format!("{m} encoder needs a convolution length")))
                }
                (_, Some(out)) if out == 0 || out > e.max_len => {
                    return Err(Error::Config(format!(
                        "{m}: convolution output length {out} must lie in 1..={}",
                        e.max_len
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Ordered (target, source) pairs for cross attention: target-major, both
    /// in canonical order, e.g. a←v, a←t, v←a, v←t, t←a, t←v.
    pub fn cross_pairs(&self) -> Vec<(Modality, Modality)> {
        let ms = &self.modalities;
        ms.iter()
            .flat_map(|&t| ms.iter().filter(move |&&s| s != t).map(move |&s| (t, s)))
            .collect()
    }

    pub fn branch_kinds(&self) -> Vec<BranchKind> {
        match self.mode {
            AttentionMode::SelfAttention => vec![BranchKind::SelfAttention],
            AttentionMode::Cross => vec![BranchKind::Cross],
            AttentionMode::Combined => vec![BranchKind::SelfAttention, BranchKind::Cross],
        }
    }

    /// Number of temporal-average vectors one branch produces.
    pub fn pooled_count(&self, kind: BranchKind) -> usize {
        let m = self.modalities.len();
        match kind {
            BranchKind::SelfAttention => m,
            BranchKind::Cross => m * (m - 1),
        }
    }

    pub fn classifier_input_width(&self) -> usize {
        let d = self.dims.model_width();
        self.branch_kinds()
            .into_iter()
            .map(|k| {
                if self.use_statistical_pooling {
                    2 * d
                } else {
                    self.pooled_count(k) * d
                }
            })
            .sum()
    }

    /// Plain-text `key=value` document, one entry per line.
    pub fn to_kv(&self) -> String {
        let d = &self.dims;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        kv("modalities", modalities_code(&self.modalities));
        kv("mode", self.mode.name().into());
        kv("statistical_pooling", self.use_statistical_pooling.to_string());
        for m in Modality::ALL {
            let e = d.encoder(m);
            kv(&format!("{m}_max_len"), e.max_len.to_string());
            kv(&format!("{m}_width"), e.width.to_string());
            if let Some(c) = e.conv_out {
                kv(&format!("{m}_conv_out"), c.to_string());
            }
        }
        kv("hidden", d.hidden.to_string());
        kv("heads", d.heads.to_string());
        kv("fc_hidden", d.fc_hidden.to_string());
        kv("classes", d.classes.to_string());
        kv("dropout", d.dropout.to_string());
        s
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let map = parse_kv(text)?;
        let get = |k: &str| {
            map.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Config(format!("missing key {k}")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Config(format!("{k}: expected an integer")))
        };
        let enc = |m: Modality| -> Result<EncoderDims> {
            Ok(EncoderDims {
                max_len: num(&format!("{m}_max_len"))?,
                width: num(&format!("{m}_width"))?,
                conv_out: match map.get(&format!("{m}_conv_out")) {
                    Some(v) => Some(v.parse().map_err(|_| {
                        Error::Config(format!("{m}_conv_out: expected an integer"))
                    })?),
                    None => None,
                },
            })
        };
        let dims = ModelDims {
            audio: enc(Modality::Audio)?,
            vision: enc(Modality::Vision)?,
            text: enc(Modality::Text)?,
            hidden: num("hidden")?,
            heads: num("heads")?,
            fc_hidden: num("fc_hidden")?,
            classes: num("classes")?,
            dropout: get("dropout")?
                .parse()
                .map_err(|_| Error::Config("dropout: expected a number".into()))?,
        };
        let cfg = ModelConfig {
            modalities: parse_modalities(get("modalities")?)?,
            mode: get("mode")?.parse()?,
            use_statistical_pooling: get("statistical_pooling")?
                .parse()
                .map_err(|_| Error::Config("statistical_pooling: expected true/false".into()))?,
            dims,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
        map.insert(k.trim().to_owned(), v.trim().to_owned());
    }
    Ok(map)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BranchKind {
    SelfAttention,
    Cross,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub modality: Modality,
    pub conv: Option<TimeConvParams>,
    pub gru: GruParams,
}

#[derive(Clone, Debug)]
pub struct AttentionModule {
    pub target: Modality,
    pub source: Modality,
    pub mha: MhaParams,
}

#[derive(Clone, Debug)]
pub struct Branch {
    pub kind: BranchKind,
    pub encoders: Vec<Encoder>,
    pub attention: Vec<AttentionModule>,
}

/// Intermediate values of one utterance's forward pass.
pub struct Trace {
    /// Encoded sequences per branch and modality.
    pub encoded: Vec<Vec<(Modality, Var)>>,
    /// Attention outputs per branch, as (target, source, output).
    pub attended: Vec<Vec<(Modality, Modality, Var)>>,
    /// Classifier input vector.
    pub features: Var,
    /// Class probabilities.
    pub probs: Var,
}

/// Per-modality inputs for `B` utterances, each tensor `B × t_m × d_m`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    size: usize,
    inputs: BTreeMap<Modality, Tensor>,
}

impl Batch {
    pub fn new(inputs: BTreeMap<Modality, Tensor>) -> Result<Self> {
        let mut size = None;
        for (m, t) in &inputs {
            if t.ndim() != 3 {
                return Err(Error::invalid("batch", format!("{m}: expected B×t×d, got {:?}", t.shape())));
            }
            match size {
                None => size = Some(t.shape()[0]),
                Some(b) if b != t.shape()[0] => {
                    return Err(Error::invalid("batch", "modalities disagree on batch size"))
                }
                _ => {}
            }
        }
        Ok(Batch {
            size: size.ok_or(Error::EmptyInput("batch"))?,
            inputs,
        })
    }

    /// Stacks per-utterance `t × d` matrices.
    pub fn from_utterances(utterances: &[&BTreeMap<Modality, Tensor>]) -> Result<Self> {
        let first = utterances.first().ok_or(Error::EmptyInput("batch"))?;
        let mut inputs = BTreeMap::new();
        for &m in first.keys() {
            let shape = first[&m].shape().to_vec();
            let mut data = Vec::with_capacity(utterances.len() * first[&m].len());
            for u in utterances {
                let t = u
                    .get(&m)
                    .ok_or_else(|| Error::invalid("batch", format!("utterance lacks {m}")))?;
                if t.shape() != shape.as_slice() {
                    return Err(Error::shape("batch", &shape, t.shape()));
                }
                data.extend_from_slice(t.data());
            }
            let mut s = vec![utterances.len()];
            s.extend_from_slice(&shape);
            inputs.insert(m, Tensor::new(s, data)?);
        }
        Batch::new(inputs)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.inputs.keys().copied().collect()
    }

    pub fn input(&self, m: Modality) -> Option<&Tensor> {
        self.inputs.get(&m)
    }

    /// The `t × d` matrix of utterance `b` for modality `m`.
    pub fn utterance(&self, m: Modality, b: usize) -> Result<Tensor> {
        let t = self
            .inputs
            .get(&m)
            .ok_or_else(|| Error::invalid("batch", format!("no {m} input")))?;
        t.slice_rows(b, 1)?.reshape(&t.shape()[1..])
    }
}

#[derive(Clone, Debug)]
pub struct FusionModel {
    config: ModelConfig,
    params: ParamSet,
    branches: Vec<Branch>,
    classifier: ClassifierParams,
}

impl FusionModel {
    /// Initializes every parameter from `seed`. Identical `(config, seed)`
    /// pairs give bit-identical parameters.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let dims = &config.dims;
        let width = dims.model_width();
        let kinds = config.branch_kinds();
        let mut branches = Vec::new();
        for &kind in &kinds {
            let prefix = match (config.mode, kind) {
                (AttentionMode::Combined, BranchKind::SelfAttention) => "self.",
                (AttentionMode::Combined, BranchKind::Cross) => "cross.",
                _ => "",
            };
            let mut encoders = Vec::new();
            for &m in &config.modalities {
                let e = dims.encoder(m);
                let conv = match e.conv_out {
                    Some(out) => Some(TimeConvParams::init(
                        &mut params,
                        &format!("{prefix}encoder.{m}.conv"),
                        e.max_len,
                        out,
                        &mut rng,
                    )?),
                    None => None,
                };
                let gru = GruParams::init(
                    &mut params,
                    &format!("{prefix}encoder.{m}.gru"),
                    e.width,
                    dims.hidden,
                    &mut rng,
                )?;
                encoders.push(Encoder {
                    modality: m,
                    conv,
                    gru,
                });
            }
            let pairs: Vec<(Modality, Modality)> = match kind {
                BranchKind::SelfAttention => config.modalities.iter().map(|&m| (m, m)).collect(),
                BranchKind::Cross => config.cross_pairs(),
            };
            let mut attention = Vec::new();
            for (target, source) in pairs {
                let name = if target == source {
                    format!("{prefix}attention.{target}")
                } else {
                    format!("{prefix}attention.{target}<-{source}")
                };
                attention.push(AttentionModule {
                    target,
                    source,
                    mha: MhaParams::init(&mut params, &name, width, dims.heads, &mut rng)?,
                });
            }
            branches.push(Branch {
                kind,
                encoders,
                attention,
            });
        }
        let classifier = ClassifierParams::init(
            &mut params,
            "classifier",
            config.classifier_input_width(),
            dims.fc_hidden,
            dims.classes,
            &mut rng,
        )?;
        Ok(FusionModel {
            config: config.clone(),
            params,
            branches,
            classifier,
        })
    }

    /// Rebuilds the layout for `config` and installs `params`, which must
    /// match it name for name and shape for shape.
    pub fn from_params(config: &ModelConfig, params: ParamSet) -> Result<Self> {
        let mut model = FusionModel::build(config, 0)?;
        if model.params.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for id in model.params.ids().collect::<Vec<_>>() {
            let name = model.params.name(id).to_owned();
            let src = params
                .id(&name)
                .ok_or_else(|| Error::Config(format!("missing parameter {name}")))?;
            let value = params.get(src);
            if value.shape() != model.params.get(id).shape() {
                return Err(Error::shape("load parameter", model.params.get(id).shape(), value.shape()));
            }
            *model.params.get_mut(id) = value.clone();
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn classifier(&self) -> &ClassifierParams {
        &self.classifier
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn attention_module_count(&self) -> usize {
        self.branches.iter().map(|b| b.attention.len()).sum()
    }

    /// `(name, shape)` for every parameter tensor, in layout order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.params
            .iter()
            .map(|(n, t)| (n.to_owned(), t.shape().to_vec()))
            .collect()
    }

    /// Forward pass for one utterance given its `t_m × d_m` inputs on `tape`.
    pub fn forward_utterance(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        inputs: &BTreeMap<Modality, Var>,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<Trace> {
        let dims = &self.config.dims;
        let given: Vec<Modality> = inputs.keys().copied().collect();
        if given != self.config.modalities {
            return Err(Error::Config(format!(
                "model expects modalities {:?}, got {:?}",
                self.config.modalities, given
            )));
        }
        for (&m, &x) in inputs {
            let e = dims.encoder(m);
            if tape.shape(x) != [e.max_len, e.width] {
                return Err(Error::shape("forward", &[e.max_len, e.width], tape.shape(x)));
            }
        }

        let mut encoded_all = Vec::new();
        let mut attended_all = Vec::new();
        let mut branch_features = Vec::new();
        for branch in &self.branches {
            let mut encoded = BTreeMap::new();
            for enc in &branch.encoders {
                let mut x = inputs[&enc.modality];
                if let Some(conv) = &enc.conv {
                    x = conv.forward(tape, bound, x)?;
                }
                encoded.insert(enc.modality, enc.gru.forward(tape, bound, x)?);
            }
            let mut attended = Vec::new();
            let mut averages = Vec::new();
            for module in &branch.attention {
                let out = module.mha.forward(
                    tape,
                    bound,
                    encoded[&module.target],
                    encoded[&module.source],
                    dropout.as_deref_mut(),
                )?;
                attended.push((module.target, module.source, out.output));
                averages.push(temporal_average(tape, out.output)?);
            }
            let features = if self.config.use_statistical_pooling {
                let width = dims.model_width();
                let rows = averages
                    .iter()
                    .map(|&a| tape.reshape(a, &[1, width]))
                    .collect::<Result<Vec<_>>>()?;
                let stacked = tape.concat(&rows, 0)?;
                statistical_pooling(tape, stacked)?
            } else {
                tape.concat(&averages, 0)?
            };
            branch_features.push(features);
            encoded_all.push(encoded.into_iter().collect());
            attended_all.push(attended);
        }
        let features = tape.concat(&branch_features, 0)?;
        let probs = self.classifier.head(tape, bound, features)?;
        Ok(Trace {
            encoded: encoded_all,
            attended: attended_all,
            features,
            probs,
        })
    }

    /// Class probabilities for a batch, `B × classes`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &Batch,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<Var> {
        if batch.modalities() != self.config.modalities {
            return Err(Error::Config(format!(
                "model expects modalities {:?}, batch has {:?}",
                self.config.modalities,
                batch.modalities()
            )));
        }
        let classes = self.config.dims.classes;
        let mut rows = Vec::with_capacity(batch.size());
        for b in 0..batch.size() {
            let mut inputs = BTreeMap::new();
            for &m in &self.config.modalities {
                inputs.insert(m, tape.constant(batch.utterance(m, b)?));
            }
            let trace = self.forward_utterance(tape, bound, &inputs, dropout.as_deref_mut())?;
            rows.push(tape.reshape(trace.probs, &[1, classes])?);
        }
        tape.concat(&rows, 0)
    }

    /// Evaluation-mode probabilities (no dropout, no gradients).
    pub fn predict(&self, batch: &Batch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let probs = self.forward(&mut tape, &bound, batch, None)?;
        Ok(tape.value(probs).clone())
    }
}
