//! Finite-difference verification of every tape op, every layer and a full
//! tiny tri-modal model.
//!
//! Each check builds a scalar `L = Σ out ⊙ R` with a fixed random `R` (or
//! uses the loss directly when the output is already scalar), then compares
//! the tape gradient of every input against central differences.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{finite_diff_grad, OpKind, Tape, Var};
use crate::error::Result;
use crate::layers::{
    bigru, classifier_head, classify, mha, statistical_pooling, temporal_average, time_conv, ClassifierWeights,
    Dropout, GruWeights, MhaWeights,
};
use crate::params::Bound;
use crate::model::{FusionModel, ModelConfig, ModelDims, ModelKind};
use crate::schema::{DatasetSchema, Modality};
use crate::tensor::Tensor;
use crate::training::cross_entropy;

pub const DEFAULT_TOLERANCE: f64 = 1e-5;
pub const DEFAULT_STEP: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub tolerance: f64,
    pub step: f64,
    /// Flips the sign of this op's backward rule.
    pub fault: Option<OpKind>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            tolerance: DEFAULT_TOLERANCE,
            step: DEFAULT_STEP,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    /// Input with the largest absolute discrepancy.
    pub worst_input: String,
    pub scalars: usize,
    pub passed: bool,
}

type Build = dyn Fn(&mut Tape, &[Var]) -> Result<Var>;

struct Case {
    name: String,
    inputs: Vec<(String, Tensor)>,
    build: Box<Build>,
}

fn case(name: &str, inputs: Vec<(&str, Tensor)>, build: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static) -> Case {
    Case {
        name: name.to_owned(),
        inputs: inputs.into_iter().map(|(n, t)| (n.to_owned(), t)).collect(),
        build: Box::new(build),
    }
}

fn scalar_loss(tape: &mut Tape, out: Var, proj: &Tensor) -> Result<Var> {
    if tape.value(out).len() == 1 {
        return Ok(out);
    }
    let r = tape.constant(proj.clone());
    let prod = tape.hadamard(out, r)?;
    Ok(tape.sum(prod))
}

fn run_case(c: &Case, opts: &GradcheckOptions) -> Result<CheckResult> {
    let mut tape = Tape::new();
    if let Some(k) = opts.fault {
        tape.inject_fault(k);
    }
    let vars: Vec<Var> = c.inputs.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let out = (c.build)(&mut tape, &vars)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let proj = Tensor::uniform(tape.shape(out), -1.0, 1.0, &mut rng);
    let loss = scalar_loss(&mut tape, out, &proj)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();

    let eval = |inputs: &[Tensor]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = inputs.iter().map(|x| t.constant(x.clone())).collect();
        let o = (c.build)(&mut t, &vs).expect("forward succeeded once");
        let l = scalar_loss(&mut t, o, &proj).expect("same shape");
        t.value(l).item().expect("scalar")
    };
    let base: Vec<Tensor> = c.inputs.iter().map(|(_, t)| t.clone()).collect();
    // Norm-wise over the whole gradient vector: max |a − n| / max(|a|, |n|).
    let mut worst = (f64::NEG_INFINITY, String::new());
    let (mut max_diff, mut max_mag) = (0.0f64, 0.0f64);
    let mut scalars = 0;
    for (i, (name, x)) in c.inputs.iter().enumerate() {
        let mut probe = base.clone();
        let numeric = finite_diff_grad(
            |xi| {
                probe[i] = xi.clone();
                eval(&probe)
            },
            x,
            opts.step,
        );
        scalars += x.len();
        let diff = analytic[i]
            .data()
            .iter()
            .zip(numeric.data())
            .fold(0.0f64, |m, (a, n)| if (a - n).is_nan() { f64::NAN } else { m.max((a - n).abs()) });
        max_mag = max_mag.max(analytic[i].max_abs()).max(numeric.max_abs());
        if diff > worst.0 || diff.is_nan() {
            worst = (diff, name.clone());
        }
        max_diff = if diff.is_nan() { f64::NAN } else { max_diff.max(diff) };
    }
    let err = if max_mag < 1e-300 { max_diff } else { max_diff / max_mag };
    let passed = err < opts.tolerance;
    Ok(CheckResult {
        name: c.name.clone(),
        max_rel_error: err,
        worst_input: worst.1,
        scalars,
        passed,
    })
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::uniform(shape, -scale, scale, rng)
}

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let a = rand_t(rng, &[3, 4], 1.0);
    let b = rand_t(rng, &[4, 2], 1.0);
    let c = rand_t(rng, &[3, 4], 1.0);
    let v = rand_t(rng, &[4], 1.0);
    let pos = Tensor::uniform(&[3, 4], 0.2, 2.0, rng);
    vec![
        case("matmul", vec![("a", a.clone()), ("b", b)], |t, v| t.matmul(v[0], v[1])),
        case("transpose", vec![("a", a.clone())], |t, v| t.transpose(v[0])),
        case("add", vec![("a", a.clone()), ("c", c.clone())], |t, v| t.add(v[0], v[1])),
        case("sub", vec![("a", a.clone()), ("c", c.clone())], |t, v| t.sub(v[0], v[1])),
        case("hadamard", vec![("a", a.clone()), ("c", c.clone())], |t, v| t.hadamard(v[0], v[1])),
        case("affine", vec![("a", a.clone())], |t, v| Ok(t.affine(v[0], -1.5, 0.3))),
        case("sigmoid", vec![("a", a.clone())], |t, v| Ok(t.sigmoid(v[0]))),
        case("tanh", vec![("a", a.clone())], |t, v| Ok(t.tanh(v[0]))),
        case("softmax", vec![("a", a.clone())], |t, v| t.softmax(v[0], 1)),
        case("concat", vec![("a", a.clone()), ("c", c.clone())], |t, v| t.concat(&[v[0], v[1]], 1)),
        case("slice", vec![("a", a.clone())], |t, v| t.slice(v[0], 1, 1, 2)),
        case("reshape", vec![("a", a.clone())], |t, v| t.reshape(v[0], &[2, 6])),
        case("add_broadcast", vec![("a", a.clone()), ("v", v)], |t, v| t.add_broadcast(v[0], v[1], 1)),
        case("mean", vec![("a", a.clone())], |t, v| t.mean(v[0], 0)),
        case("std", vec![("a", a.clone())], |t, v| t.std(v[0], 0)),
        case("sum", vec![("a", a.clone())], |t, v| {
            let s = t.sum(v[0]);
            let sq = t.hadamard(s, s)?;
            Ok(sq)
        }),
        case("pick", vec![("a", a)], |t, v| t.pick(v[0], &[3, 0, 2])),
        case("log", vec![("p", pos)], |t, v| Ok(t.log(v[0], 1e-12))),
    ]
}

fn gru_inputs(rng: &mut ChaCha8Rng, prefix: &str, input: usize, hidden: usize) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    for g in ["w_ir", "w_iz", "w_in"] {
        out.push((format!("{prefix}.{g}"), rand_t(rng, &[hidden, input], 0.7)));
    }
    for g in ["w_hr", "w_hz", "w_hn"] {
        out.push((format!("{prefix}.{g}"), rand_t(rng, &[hidden, hidden], 0.7)));
    }
    for g in ["b_ir", "b_iz", "b_in", "b_hr", "b_hz", "b_hn"] {
        out.push((format!("{prefix}.{g}"), rand_t(rng, &[hidden], 0.3)));
    }
    out
}

fn gru_weights(v: &[Var]) -> GruWeights<Var> {
    GruWeights {
        w_ir: v[0],
        w_iz: v[1],
        w_in: v[2],
        w_hr: v[3],
        w_hz: v[4],
        w_hn: v[5],
        b_ir: v[6],
        b_iz: v[7],
        b_in: v[8],
        b_hr: v[9],
        b_hz: v[10],
        b_hn: v[11],
    }
}

fn layer_cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let mut cases = Vec::new();
    cases.push(case(
        "time_conv",
        vec![
            ("weight", rand_t(rng, &[3, 6], 0.5)),
            ("bias", rand_t(rng, &[3], 0.5)),
            ("x", rand_t(rng, &[6, 5], 1.0)),
        ],
        |t, v| time_conv(t, v[0], v[1], v[2]),
    ));

    let mut inputs = vec![("x".to_owned(), rand_t(rng, &[5, 3], 1.0))];
    inputs.extend(gru_inputs(rng, "fwd", 3, 2));
    inputs.extend(gru_inputs(rng, "bwd", 3, 2));
    cases.push(Case {
        name: "bigru".into(),
        inputs,
        build: Box::new(|t, v| bigru(t, &gru_weights(&v[1..13]), &gru_weights(&v[13..25]), v[0])),
    });

    let mha_w = |v: &[Var]| MhaWeights {
        w_q: v[2],
        w_k: v[3],
        w_v: v[4],
        w_o: v[5],
        b_o: v[6],
    };
    cases.push(case(
        "mha",
        vec![
            ("query", rand_t(rng, &[3, 4], 1.0)),
            ("key_value", rand_t(rng, &[5, 4], 1.0)),
            ("w_q", rand_t(rng, &[4, 4], 0.8)),
            ("w_k", rand_t(rng, &[4, 4], 0.8)),
            ("w_v", rand_t(rng, &[4, 4], 0.8)),
            ("w_o", rand_t(rng, &[4, 4], 0.8)),
            ("b_o", rand_t(rng, &[4], 0.3)),
        ],
        move |t, v| Ok(mha(t, &mha_w(v), 2, v[0], v[1], None)?.output),
    ));
    cases.push(case(
        "mha_dropout",
        vec![
            ("query", rand_t(rng, &[3, 4], 1.0)),
            ("key_value", rand_t(rng, &[3, 4], 1.0)),
            ("w_q", rand_t(rng, &[4, 4], 0.8)),
            ("w_k", rand_t(rng, &[4, 4], 0.8)),
            ("w_v", rand_t(rng, &[4, 4], 0.8)),
            ("w_o", rand_t(rng, &[4, 4], 0.8)),
            ("b_o", rand_t(rng, &[4], 0.3)),
        ],
        move |t, v| {
            let mut d = Dropout::new(0.3, 11);
            Ok(mha(t, &mha_w(v), 2, v[0], v[1], Some(&mut d))?.output)
        },
    ));
    cases.push(case(
        "temporal_average",
        vec![("x", rand_t(rng, &[5, 4], 1.0))],
        |t, v| temporal_average(t, v[0]),
    ));
    cases.push(case(
        "mean_std",
        vec![("x", rand_t(rng, &[4, 3], 1.0))],
        |t, v| statistical_pooling(t, v[0]),
    ));
    let cls_w = |v: &[Var]| ClassifierWeights {
        fc1_w: v[1],
        fc1_b: v[2],
        fc2_w: v[3],
        fc2_b: v[4],
    };
    cases.push(case(
        "classifier_head",
        vec![
            ("features", rand_t(rng, &[6], 1.0)),
            ("fc1.weight", rand_t(rng, &[4, 6], 0.6)),
            ("fc1.bias", rand_t(rng, &[4], 0.3)),
            ("fc2.weight", rand_t(rng, &[7, 4], 0.6)),
            ("fc2.bias", rand_t(rng, &[7], 0.3)),
        ],
        move |t, v| classifier_head(t, &cls_w(v), v[0]),
    ));
    cases.push(case(
        "statistical_pooling_classifier",
        vec![
            ("pooled", rand_t(rng, &[3, 3], 1.0)),
            ("fc1.weight", rand_t(rng, &[4, 6], 0.6)),
            ("fc1.bias", rand_t(rng, &[4], 0.3)),
            ("fc2.weight", rand_t(rng, &[7, 4], 0.6)),
            ("fc2.bias", rand_t(rng, &[7], 0.3)),
        ],
        move |t, v| classify(t, &cls_w(v), v[0]),
    ));
    cases.push(case(
        "cross_entropy",
        vec![("logits", rand_t(rng, &[3, 7], 1.5))],
        |t, v| {
            let p = t.softmax(v[0], 1)?;
            cross_entropy(t, p, &[4, 0, 6])
        },
    ));
    cases
}

/// Dimensions of the tiny verification model: audio, vision and text
/// lengths 6, 4 and 5, every width 8, hidden 4, two heads.
pub fn tiny_dims() -> ModelDims {
    let mut schema = DatasetSchema::DESK;
    for (m, len) in [(Modality::Audio, 6), (Modality::Vision, 4), (Modality::Text, 5)] {
        let s = schema.get_mut(m);
        s.max_len = len;
        s.width = 8;
    }
    let mut dims = ModelDims::for_schema(&schema, 4, 2);
    dims.audio.conv_out = Some(3);
    dims.vision.conv_out = Some(3);
    dims.fc_hidden = 4;
    dims
}

fn model_case(kind: &str, seed: u64) -> Result<Case> {
    let kind: ModelKind = kind.parse()?;
    let config = ModelConfig::new(kind, &Modality::ALL, tiny_dims())?;
    let model = FusionModel::build(&config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let n_params = model.params().len();
    let mut inputs: Vec<(String, Tensor)> = model
        .params()
        .iter()
        .map(|(n, t)| {
            // Non-zero biases so every bias path carries gradient signal.
            let t = if n.ends_with("bias") || n.contains(".b_") {
                rand_t(&mut rng, t.shape(), 0.2)
            } else {
                t.clone()
            };
            (n.to_owned(), t)
        })
        .collect();
    let batch = 2;
    for b in 0..batch {
        for &m in &Modality::ALL {
            let e = config.dims.encoder(m);
            inputs.push((format!("input{b}.{m}"), rand_t(&mut rng, &[e.max_len, e.width], 1.0)));
        }
    }
    let labels = [5usize, 2];
    let classes = config.dims.classes;
    let rate = config.dims.dropout;
    let build = move |t: &mut Tape, v: &[Var]| -> Result<Var> {
        // The first `n_params` vars are the parameters, in layout order.
        let bound = Bound::from_vars(v[..n_params].to_vec());
        let mut dropout = Dropout::new(rate, 3);
        let mut rows = Vec::new();
        for b in 0..batch {
            let mut xs = BTreeMap::new();
            for (k, &m) in Modality::ALL.iter().enumerate() {
                xs.insert(m, v[n_params + b * 3 + k]);
            }
            let trace = model.forward_utterance(t, &bound, &xs, Some(&mut dropout))?;
            rows.push(t.reshape(trace.probs, &[1, classes])?);
        }
        let probs = t.concat(&rows, 0)?;
        cross_entropy(t, probs, &labels)
    };
    Ok(Case {
        name: format!("model_{}", config.name()),
        inputs,
        build: Box::new(build),
    })
}

/// All checks, primitive ops first, then layers, then full models.
pub fn run_all(opts: &GradcheckOptions) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut cases = op_cases(&mut rng);
    cases.extend(layer_cases(&mut rng));
    cases.push(model_case("cross+self", 7)?);
    cases.push(model_case("cross-nosp", 8)?);
    cases.iter().map(|c| run_case(c, opts)).collect()
}

pub struct Report {
    pub results: Vec<CheckResult>,
    pub seconds: f64,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.results.iter().filter(|r| !r.passed)
    }

    pub fn render(&self, tolerance: f64) -> String {
        let mut s = String::new();
        for r in &self.results {
            s.push_str(&format!(
                "{} {:<32} max_rel_err {:.3e} ({} scalars, worst input {})\n",
                if r.passed { "PASS" } else { "FAIL" },
                r.name,
                r.max_rel_error,
                r.scalars,
                r.worst_input
            ));
        }
        let failed: Vec<&str> = self.failures().map(|r| r.name.as_str()).collect();
        if failed.is_empty() {
            s.push_str(&format!(
                "all {} checks passed at tolerance {tolerance:e} in {:.2}s\n",
                self.results.len(),
                self.seconds
            ));
        } else {
            s.push_str(&format!(
                "{} of {} checks failed at tolerance {tolerance:e}: {}\n",
                failed.len(),
                self.results.len(),
                failed.join(", ")
            ));
        }
        s
    }
}

pub fn run(opts: &GradcheckOptions) -> Result<Report> {
    let start = Instant::now();
    let results = run_all(opts)?;
    Ok(Report {
        results,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_check_passes() {
        let report = run(&GradcheckOptions::default()).unwrap();
        assert!(report.passed(), "{}", report.render(DEFAULT_TOLERANCE));
    }

    #[test]
    fn injected_fault_names_the_op() {
        let opts = GradcheckOptions {
            fault: Some(OpKind::Tanh),
            ..Default::default()
        };
        let report = run(&opts).unwrap();
        let failed: Vec<&str> = report.failures().map(|r| r.name.as_str()).collect();
        assert!(failed.contains(&"tanh"), "{failed:?}");
        assert!(failed.contains(&"bigru"));
        assert!(!failed.contains(&"softmax"));
    }
}
