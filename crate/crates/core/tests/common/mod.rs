//! Independent reference implementations shared by the integration tests
//! and the acceptance target. Everything here works on plain nested
//! vectors with explicit loops and does not call into the library's math.

#![allow(dead_code)]

pub mod checks;

use std::path::Path;
use std::process::{Command, Output};

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(data: &[f64], rows: usize, cols: usize) -> Mat {
    assert_eq!(data.len(), rows * cols);
    (0..rows).map(|r| data[r * cols..(r + 1) * cols].to_vec()).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn flatten(m: &Mat) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

/// `out[t'][c] = bias[t'] + Σ_k w[t'][k] · x[k][c]`.
pub fn time_conv_oracle(w: &Mat, bias: &[f64], x: &Mat) -> Mat {
    let cols = x[0].len();
    let mut out = vec![vec![0.0; cols]; w.len()];
    for (tp, row) in w.iter().enumerate() {
        for c in 0..cols {
            let mut acc = 0.0;
            for (k, &wk) in row.iter().enumerate() {
                acc += wk * x[k][c];
            }
            out[tp][c] = acc + bias[tp];
        }
    }
    out
}

/// One GRU direction's weights, each `hidden × input` or `hidden × hidden`.
pub struct GruOracle {
    pub w_ir: Mat,
    pub w_iz: Mat,
    pub w_in: Mat,
    pub w_hr: Mat,
    pub w_hz: Mat,
    pub w_hn: Mat,
    pub b_ir: Vec<f64>,
    pub b_iz: Vec<f64>,
    pub b_in: Vec<f64>,
    pub b_hr: Vec<f64>,
    pub b_hz: Vec<f64>,
    pub b_hn: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

impl GruOracle {
    /// Scalar recurrence, one unit at a time:
    /// r = σ(W_ir x + b_ir + W_hr h + b_hr), z likewise,
    /// n = tanh(W_in x + b_in + r·(W_hn h + b_hn)), h' = (1 − z)·n + z·h.
    pub fn run(&self, x: &Mat, reverse: bool) -> Mat {
        let hidden = self.b_ir.len();
        let steps = x.len();
        let mut h = vec![0.0; hidden];
        let mut out = vec![vec![0.0; hidden]; steps];
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        for t in order {
            let mut next = vec![0.0; hidden];
            for j in 0..hidden {
                let r = sigmoid(
                    dot(&self.w_ir[j], &x[t]) + self.b_ir[j] + dot(&self.w_hr[j], &h) + self.b_hr[j],
                );
                let z = sigmoid(
                    dot(&self.w_iz[j], &x[t]) + self.b_iz[j] + dot(&self.w_hz[j], &h) + self.b_hz[j],
                );
                let n = (dot(&self.w_in[j], &x[t])
                    + self.b_in[j]
                    + r * (dot(&self.w_hn[j], &h) + self.b_hn[j]))
                    .tanh();
                next[j] = (1.0 - z) * n + z * h[j];
            }
            h = next;
            out[t] = h.clone();
        }
        out
    }
}

/// Forward states then backward states, row by row.
pub fn bigru_oracle(fwd: &GruOracle, bwd: &GruOracle, x: &Mat) -> Mat {
    let f = fwd.run(x, false);
    let b = bwd.run(x, true);
    f.into_iter()
        .zip(b)
        .map(|(mut row, back)| {
            row.extend(back);
            row
        })
        .collect()
}

/// Multi-head attention with explicit loops. Projections are `x · Wᵀ` and
/// head `h` owns rows `h·d_k .. (h+1)·d_k` of each projection matrix.
#[allow(clippy::too_many_arguments)]
pub fn mha_oracle(
    w_q: &Mat,
    w_k: &Mat,
    w_v: &Mat,
    w_o: &Mat,
    b_o: &[f64],
    heads: usize,
    query: &Mat,
    kv: &Mat,
) -> Mat {
    let d = w_q.len();
    let dk = d / heads;
    let proj = |x: &Mat, w: &Mat| -> Mat {
        x.iter()
            .map(|row| (0..d).map(|o| dot(&w[o], row)).collect())
            .collect()
    };
    let q = proj(query, w_q);
    let k = proj(kv, w_k);
    let v = proj(kv, w_v);
    let mut joined = vec![vec![0.0; d]; query.len()];
    for h in 0..heads {
        let cols = h * dk..(h + 1) * dk;
        for i in 0..query.len() {
            let scores: Vec<f64> = (0..kv.len())
                .map(|j| {
                    let mut s = 0.0;
                    for c in cols.clone() {
                        s += q[i][c] * k[j][c];
                    }
                    s / (dk as f64).sqrt()
                })
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            for c in cols.clone() {
                let mut acc = 0.0;
                for j in 0..kv.len() {
                    acc += exps[j] / total * v[j][c];
                }
                joined[i][c] = acc;
            }
        }
    }
    joined
        .iter()
        .map(|row| (0..d).map(|o| dot(&w_o[o], row) + b_o[o]).collect())
        .collect()
}

/// Student t density with `df` degrees of freedom, written out from the
/// gamma function via `f64` exp of a log-gamma computed by Stirling's
/// series on a shifted argument.
pub fn t_density(x: f64, df: f64) -> f64 {
    let log_c = ln_gamma_stirling((df + 1.0) / 2.0)
        - ln_gamma_stirling(df / 2.0)
        - 0.5 * (df * std::f64::consts::PI).ln();
    (log_c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp()
}

/// ln Γ(x) for x > 0: shift up to x ≥ 15, then Stirling with five
/// correction terms.
pub fn ln_gamma_stirling(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < 15.0 {
        shift -= x.ln();
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv
        * (1.0 / 12.0
            - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 * (1.0 / 1680.0 - inv2 / 1188.0))));
    shift + (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + series
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson integral of `f` over `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Two-tailed p-value `1 − ∫_{−|t|}^{|t|} density`, integrated numerically.
pub fn two_tailed_p_quadrature(t: f64, df: f64) -> f64 {
    let inner = integrate(&|x| t_density(x, df), 0.0, t.abs(), 1e-13);
    (1.0 - 2.0 * inner).clamp(0.0, 1.0)
}

/// Welch statistic and Welch–Satterthwaite degrees of freedom.
pub fn welch_oracle(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / (n - 1.0);
        (n, m, v)
    };
    let (na, ma, va) = stats(a);
    let (nb, mb, vb) = stats(b);
    let (sa, sb) = (va / na, vb / nb);
    let t = (ma - mb) / (sa + sb).sqrt();
    let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    (t, df, two_tailed_p_quadrature(t, df))
}

/// Five fixed sample pairs with a range of effect sizes, sizes and
/// variance ratios.
pub fn welch_pairs() -> Vec<(Vec<f64>, Vec<f64>)> {
    vec![
        (
            vec![0.587, 0.601, 0.562, 0.610, 0.575, 0.592, 0.569],
            vec![0.598, 0.612, 0.607, 0.620, 0.589, 0.615],
        ),
        (vec![1.0, 2.0, 3.0, 4.0, 5.0], vec![2.5, 3.5, 4.5]),
        (
            vec![10.1, 9.8, 10.4, 10.0, 9.9, 10.2, 10.3, 9.7, 10.0, 10.1],
            vec![11.2, 8.1, 12.5, 9.0, 10.8, 13.1, 7.9, 11.6],
        ),
        (vec![0.3, 0.31, 0.29, 0.305], vec![0.1, 0.5, 0.9, 0.2, 0.7]),
        (
            vec![5.0, 5.5, 6.1, 4.9, 5.2, 5.8, 6.0, 5.4],
            vec![5.1, 5.6, 5.9, 5.0, 5.3, 5.7, 6.2, 5.5],
        ),
    ]
}

/// Runs the `fusionattn` binary.
pub fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fusionattn"))
        .args(args)
        .env_remove("FUSIONATTN_SEED")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// A synthetic dataset loaded into memory with its five folds and one
/// audio scaler per fold.
pub struct Prepared {
    pub manifest: fusionattn::data::DatasetManifest,
    pub data: fusionattn::data::LoadedDataset,
    pub folds: Vec<fusionattn::data::FoldSplit>,
    pub scalers: Vec<Option<fusionattn::data::StandardScaler>>,
}

impl Prepared {
    pub fn synth(dir: &Path, n_per_class: usize, separation: f64, seed: u64) -> Self {
        use fusionattn::data::{make_folds, synth_generate, LoadedDataset, SplitRatios, SynthSpec};
        let spec = SynthSpec::new(n_per_class, separation, seed, fusionattn::DatasetSchema::DESK);
        let manifest = synth_generate(&spec, dir).unwrap();
        let data = LoadedDataset::load(&manifest, &fusionattn::Modality::ALL).unwrap();
        let folds = make_folds(&manifest, 5, SplitRatios::DEFAULT, seed).unwrap();
        let scalers = folds
            .iter()
            .map(|f| data.fit_audio_scaler(&f.train, f.fold).unwrap())
            .collect();
        Prepared {
            manifest,
            data,
            folds,
            scalers,
        }
    }

    pub fn fold(&self, i: usize) -> fusionattn::training::FoldData<'_> {
        let f = &self.folds[i];
        fusionattn::training::FoldData {
            fold: i,
            data: &self.data,
            train: &f.train,
            dev: &f.dev,
            test: &f.test,
            scaler: self.scalers[i].as_ref(),
        }
    }
}

/// A DESK-geometry tri-modal model of the given kind.
pub fn desk_model(kind: &str, hidden: usize, heads: usize, seed: u64) -> fusionattn::FusionModel {
    let dims = fusionattn::ModelDims::for_schema(&fusionattn::DatasetSchema::DESK, hidden, heads);
    let cfg = fusionattn::ModelConfig::new(kind.parse().unwrap(), &fusionattn::Modality::ALL, dims).unwrap();
    fusionattn::FusionModel::build(&cfg, seed).unwrap()
}
