use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamSet};
use crate::tensor::Tensor;

/// Multi-head attention weights. The per-head projections are stored fused:
/// rows `h·d_k .. (h+1)·d_k` of `w_q` form head `h`'s query projection, and
/// likewise for `w_k` and `w_v`.
#[derive(Clone, Copy, Debug)]
pub struct MhaWeights<T> {
    pub w_q: T,
    pub w_k: T,
    pub w_v: T,
    pub w_o: T,
    pub b_o: T,
}

impl<T: Copy> MhaWeights<T> {
    pub fn map<U>(&self, mut f: impl FnMut(T) -> U) -> MhaWeights<U> {
        MhaWeights {
            w_q: f(self.w_q),
            w_k: f(self.w_k),
            w_v: f(self.w_v),
            w_o: f(self.w_o),
            b_o: f(self.b_o),
        }
    }
}

/// Inverted dropout on attention weights, with its own seeded stream.
#[derive(Clone, Debug)]
pub struct Dropout {
    pub rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Dropout {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn mask(&mut self, shape: &[usize]) -> Tensor {
        let keep = 1.0 - self.rate;
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
    }
}

pub struct MhaOutput {
    /// `t_q × d`.
    pub output: Var,
    /// Per-head attention weights (`t_q × t_kv`) after softmax and before
    /// dropout.
    pub weights: Vec<Var>,
}

/// Multi-head scaled dot-product attention with queries from `query_seq`
/// and keys/values from `key_value_seq`.
pub fn mha(
    tape: &mut Tape,
    w: &MhaWeights<Var>,
    heads: usize,
    query_seq: Var,
    key_value_seq: Var,
    dropout: Option<&mut Dropout>,
) -> Result<MhaOutput> {
    let qs = tape.shape(query_seq).to_vec();
    let ks = tape.shape(key_value_seq).to_vec();
    let width = tape.shape(w.w_q)[1];
    if qs.len() != 2 || ks.len() != 2 || qs[1] != width || ks[1] != width {
        return Err(Error::shape("mha", &qs, &ks));
    }
    if heads == 0 || width % heads != 0 {
        return Err(Error::invalid(
            "mha",
            format!("{heads} heads do not divide width {width}"),
        ));
    }
    let d_k = width / heads;
    let inv_sqrt = 1.0 / (d_k as f64).sqrt();

    let project = |tape: &mut Tape, seq: Var, weight: Var| -> Result<Var> {
        let wt = tape.transpose(weight)?;
        tape.matmul(seq, wt)
    };
    let q = project(tape, query_seq, w.w_q)?;
    let k = project(tape, key_value_seq, w.w_k)?;
    let v = project(tape, key_value_seq, w.w_v)?;

    let mut dropout = dropout;
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let q_h = tape.slice(q, 1, h * d_k, d_k)?;
        let k_h = tape.slice(k, 1, h * d_k, d_k)?;
        let v_h = tape.slice(v, 1, h * d_k, d_k)?;
        let k_ht = tape.transpose(k_h)?;
        let scores = tape.matmul(q_h, k_ht)?;
        let scores = tape.scale(scores, inv_sqrt);
        let attn = tape.softmax(scores, 1)?;
        weights.push(attn);
        let attn = match dropout.as_deref_mut() {
            Some(d) if d.rate > 0.0 => {
                let mask = d.mask(tape.shape(attn));
                let mask = tape.constant(mask);
                tape.hadamard(attn, mask)?
            }
            _ => attn,
        };
        outs.push(tape.matmul(attn, v_h)?);
    }
    let joined = tape.concat(&outs, 1)?;
    let projected = project(tape, joined, w.w_o)?;
    let output = tape.add_broadcast(projected, w.b_o, 1)?;
    Ok(MhaOutput { output, weights })
}

#[derive(Clone, Debug)]
pub struct MhaParams {
    pub weights: MhaWeights<ParamId>,
    pub heads: usize,
    pub width: usize,
}

impl MhaParams {
    pub fn init<R: Rng + ?Sized>(
        set: &mut ParamSet,
        prefix: &str,
        width: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::Config(format!(
                "{heads} heads do not divide width {width}"
            )));
        }
        let mut w = |name: &str, set: &mut ParamSet| {
            set.insert_weight(format!("{prefix}.{name}"), width, width, rng)
        };
        let weights = MhaWeights {
            w_q: w("w_q", set)?,
            w_k: w("w_k", set)?,
            w_v: w("w_v", set)?,
            w_o: w("w_o", set)?,
            b_o: set.insert_bias(format!("{prefix}.b_o"), width)?,
        };
        Ok(MhaParams {
            weights,
            heads,
            width,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        query_seq: Var,
        key_value_seq: Var,
        dropout: Option<&mut Dropout>,
    ) -> Result<MhaOutput> {
        let w = self.weights.map(|id| bound.var(id));
        mha(tape, &w, self.heads, query_seq, key_value_seq, dropout)
    }
}
