//! Library-versus-oracle comparisons. Each returns the largest absolute
//! discrepancy so callers can assert or report it.

use std::collections::BTreeMap;

use fusionattn::layers::{mha, time_conv, GruParams, GruWeights, MhaWeights};
use fusionattn::params::{ParamId, ParamSet};
use fusionattn::{FusionModel, Modality, ModelConfig, ModelDims, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{bigru_oracle, flatten, mha_oracle, time_conv_oracle, to_mat, GruOracle, Mat};

fn random(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, -scale, scale, rng)
}

fn mat(t: &Tensor) -> Mat {
    to_mat(t.data(), t.rows(), t.cols())
}

/// H = 2 attention on random 4-wide inputs, separate query and key/value
/// lengths, non-zero output bias.
pub fn mha_vs_oracle(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 4;
    let w: Vec<Tensor> = (0..4).map(|_| random(&[d, d], 0.9, &mut rng)).collect();
    let b = random(&[d], 0.5, &mut rng);
    let q = random(&[5, d], 1.5, &mut rng);
    let kv = random(&[3, d], 1.5, &mut rng);

    let mut tape = Tape::new();
    let vars: Vec<_> = w.iter().map(|t| tape.constant(t.clone())).collect();
    let weights = MhaWeights {
        w_q: vars[0],
        w_k: vars[1],
        w_v: vars[2],
        w_o: vars[3],
        b_o: tape.constant(b.clone()),
    };
    let (qv, kvv) = (tape.constant(q.clone()), tape.constant(kv.clone()));
    let out = mha(&mut tape, &weights, 2, qv, kvv, None).unwrap().output;
    let expected = mha_oracle(&mat(&w[0]), &mat(&w[1]), &mat(&w[2]), &mat(&w[3]), b.data(), 2, &mat(&q), &mat(&kv));
    super::max_abs_diff(tape.value(out).data(), &flatten(&expected))
}

fn gru_oracle_from(set: &ParamSet, w: &GruWeights<ParamId>) -> GruOracle {
    let m = |id: ParamId| mat(set.get(id));
    let v = |id: ParamId| set.get(id).data().to_vec();
    GruOracle {
        w_ir: m(w.w_ir),
        w_iz: m(w.w_iz),
        w_in: m(w.w_in),
        w_hr: m(w.w_hr),
        w_hz: m(w.w_hz),
        w_hn: m(w.w_hn),
        b_ir: v(w.b_ir),
        b_iz: v(w.b_iz),
        b_in: v(w.b_in),
        b_hr: v(w.b_hr),
        b_hz: v(w.b_hz),
        b_hn: v(w.b_hn),
    }
}

/// Bi-directional GRU with random non-zero biases.
pub fn bigru_vs_oracle(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = ParamSet::new();
    let p = GruParams::init(&mut set, "g", 5, 3, &mut rng).unwrap();
    for t in set.tensors_mut() {
        if t.ndim() == 1 {
            *t = random(t.shape(), 0.4, &mut rng);
        }
    }
    let x = random(&[7, 5], 2.0, &mut rng);
    let mut tape = Tape::new();
    let bound = set.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let out = p.forward(&mut tape, &bound, xv).unwrap();
    let expected = bigru_oracle(
        &gru_oracle_from(&set, &p.forward),
        &gru_oracle_from(&set, &p.backward),
        &mat(&x),
    );
    super::max_abs_diff(tape.value(out).data(), &flatten(&expected))
}

/// Time-axis convolution; returns the largest discrepancy, which the
/// caller expects to be exactly zero.
pub fn time_conv_vs_oracle(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&[4, 6], 1.0, &mut rng);
    let b = random(&[4], 1.0, &mut rng);
    let x = random(&[6, 3], 3.0, &mut rng);
    let mut tape = Tape::new();
    let (wv, bv, xv) = (tape.constant(w.clone()), tape.constant(b.clone()), tape.constant(x.clone()));
    let y = time_conv(&mut tape, wv, bv, xv).unwrap();
    let expected = time_conv_oracle(&mat(&w), b.data(), &mat(&x));
    super::max_abs_diff(tape.value(y).data(), &flatten(&expected))
}

fn column_mean_std(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for c in 0..d {
            mean[c] += r[c] / n;
        }
    }
    let std: Vec<f64> = (0..d)
        .map(|c| {
            let var = rows.iter().map(|r| (r[c] - mean[c]).powi(2)).sum::<f64>() / n;
            (var + fusionattn::autodiff::STD_EPS).sqrt()
        })
        .collect();
    mean.into_iter().chain(std).collect()
}

/// A whole cross tri-modal model evaluated straight-line through the
/// oracles: convolution, BiGRU, six cross-attention modules, temporal
/// averages, statistical pooling, two dense layers and softmax.
pub fn cross_model_vs_oracle(seed: u64) -> f64 {
    let dims: ModelDims = fusionattn::gradcheck::tiny_dims();
    let cfg = ModelConfig::new("cross".parse().unwrap(), &Modality::ALL, dims).unwrap();
    let model = FusionModel::build(&cfg, seed).unwrap();
    let set = model.params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut inputs = BTreeMap::new();
    for m in Modality::ALL {
        let e = dims.encoder(m);
        inputs.insert(m, random(&[e.max_len, e.width], 1.5, &mut rng));
    }
    let probs = model
        .predict(&fusionattn::Batch::from_utterances(&[&inputs]).unwrap())
        .unwrap();

    let branch = &model.branches()[0];
    let mut encoded = BTreeMap::new();
    for enc in &branch.encoders {
        let mut x = mat(&inputs[&enc.modality]);
        if let Some(conv) = &enc.conv {
            x = time_conv_oracle(&mat(set.get(conv.weight)), set.get(conv.bias).data(), &x);
        }
        let h = bigru_oracle(
            &gru_oracle_from(set, &enc.gru.forward),
            &gru_oracle_from(set, &enc.gru.backward),
            &x,
        );
        encoded.insert(enc.modality, h);
    }
    let mut averages = Vec::new();
    for module in &branch.attention {
        let w = &module.mha.weights;
        let out = mha_oracle(
            &mat(set.get(w.w_q)),
            &mat(set.get(w.w_k)),
            &mat(set.get(w.w_v)),
            &mat(set.get(w.w_o)),
            set.get(w.b_o).data(),
            module.mha.heads,
            &encoded[&module.target],
            &encoded[&module.source],
        );
        let n = out.len() as f64;
        let avg: Vec<f64> = (0..out[0].len())
            .map(|c| out.iter().map(|r| r[c]).sum::<f64>() / n)
            .collect();
        averages.push(avg);
    }
    let features = column_mean_std(&averages);
    let cls = &model.classifier().weights;
    let dense = |w: ParamId, b: ParamId, x: &[f64]| -> Vec<f64> {
        let wm = mat(set.get(w));
        wm.iter()
            .zip(set.get(b).data())
            .map(|(row, bias)| row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias)
            .collect()
    };
    let hidden = dense(cls.fc1_w, cls.fc1_b, &features);
    let logits = dense(cls.fc2_w, cls.fc2_b, &hidden);
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let expected: Vec<f64> = exps.iter().map(|e| e / total).collect();
    super::max_abs_diff(probs.data(), &expected)
}

pub fn full_config(kind: &str, modalities: &[Modality]) -> ModelConfig {
    ModelConfig::new(kind.parse().unwrap(), modalities, ModelDims::full()).unwrap()
}

/// Every ordered (target, source) attention output of a cross tri-modal
/// model as `(target, source, output rows, target encoded length)`.
pub fn cross_output_lengths(dims: ModelDims) -> Vec<(Modality, Modality, usize, usize)> {
    let cfg = ModelConfig::new("cross".parse().unwrap(), &Modality::ALL, dims).unwrap();
    let model = FusionModel::build(&cfg, 0).unwrap();
    let mut tape = Tape::new();
    let bound = model.params().bind_frozen(&mut tape);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs = Modality::ALL
        .iter()
        .map(|&m| {
            let e = dims.encoder(m);
            (m, tape.constant(random(&[e.max_len, e.width], 1.0, &mut rng)))
        })
        .collect();
    let trace = model.forward_utterance(&mut tape, &bound, &inputs, None).unwrap();
    trace.attended[0]
        .iter()
        .map(|&(t, s, v)| (t, s, tape.shape(v)[0], dims.encoder(t).encoded_len()))
        .collect()
}

/// `(name, shape)` listings of the full model and of the model with
/// `removed` dropped, the former filtered to parameters that do not belong
/// to `removed`.
pub fn ablation_listings(kind: &str, removed: &[Modality]) -> (Vec<(String, Vec<usize>)>, Vec<(String, Vec<usize>)>) {
    let kept: Vec<Modality> = Modality::ALL.into_iter().filter(|m| !removed.contains(m)).collect();
    let full = FusionModel::build(&full_config(kind, &Modality::ALL), 0).unwrap();
    let ablated = FusionModel::build(&full_config(kind, &kept), 0).unwrap();
    let expected = full
        .parameter_shapes()
        .into_iter()
        .filter(|(name, _)| !removed.iter().any(|m| name.contains(m.name())))
        .collect();
    (expected, ablated.parameter_shapes())
}

pub fn parameter_count(kind: &str, modalities: &[Modality]) -> usize {
    FusionModel::build(&full_config(kind, modalities), 0).unwrap().parameter_count()
}
