use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamSet};
use crate::tensor::Tensor;

/// Weights of one GRU direction. Input weights are `hidden × input`, hidden
/// weights `hidden × hidden`, biases `hidden`.
#[derive(Clone, Copy, Debug)]
pub struct GruWeights<T> {
    pub w_ir: T,
    pub w_iz: T,
    pub w_in: T,
    pub w_hr: T,
    pub w_hz: T,
    pub w_hn: T,
    pub b_ir: T,
    pub b_iz: T,
    pub b_in: T,
    pub b_hr: T,
    pub b_hz: T,
    pub b_hn: T,
}

impl<T: Copy> GruWeights<T> {
    pub fn map<U>(&self, mut f: impl FnMut(T) -> U) -> GruWeights<U> {
        GruWeights {
            w_ir: f(self.w_ir),
            w_iz: f(self.w_iz),
            w_in: f(self.w_in),
            w_hr: f(self.w_hr),
            w_hz: f(self.w_hz),
            w_hn: f(self.w_hn),
            b_ir: f(self.b_ir),
            b_iz: f(self.b_iz),
            b_in: f(self.b_in),
            b_hr: f(self.b_hr),
            b_hz: f(self.b_hz),
            b_hn: f(self.b_hn),
        }
    }
}

/// Runs one GRU direction over `x` (`t × input`) from a zero initial state,
/// returning the hidden states as `t × hidden`. With `reverse`, steps are
/// consumed from last to first and each output row stays aligned with the
/// input row it was produced from.
pub fn gru_direction(tape: &mut Tape, w: &GruWeights<Var>, x: Var, reverse: bool) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    if xs.len() != 2 {
        return Err(Error::invalid("bigru", format!("expected t×d input, got {xs:?}")));
    }
    let steps = xs[0];
    let hidden = tape.shape(w.w_hr)[0];
    if tape.shape(w.w_ir) != [hidden, xs[1]] {
        return Err(Error::shape("bigru", tape.shape(w.w_ir), &xs));
    }

    // Input projections for all steps at once: t × 3h, gate order r, z, n.
    let w_i = tape.concat(&[w.w_ir, w.w_iz, w.w_in], 0)?;
    let w_i_t = tape.transpose(w_i)?;
    let b_i = tape.concat(&[w.b_ir, w.b_iz, w.b_in], 0)?;
    let gx = tape.matmul(x, w_i_t)?;
    let gx = tape.add_broadcast(gx, b_i, 1)?;

    let w_h = tape.concat(&[w.w_hr, w.w_hz, w.w_hn], 0)?;
    let w_h_t = tape.transpose(w_h)?;
    let b_h = tape.concat(&[w.b_hr, w.b_hz, w.b_hn], 0)?;

    let mut h = tape.constant(Tensor::zeros(&[1, hidden]));
    let mut states = Vec::with_capacity(steps);
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..steps).rev())
    } else {
        Box::new(0..steps)
    };
    for t in order {
        let gx_t = tape.slice(gx, 0, t, 1)?;
        let gh = tape.matmul(h, w_h_t)?;
        let gh = tape.add_broadcast(gh, b_h, 1)?;

        let x_r = tape.slice(gx_t, 1, 0, hidden)?;
        let x_z = tape.slice(gx_t, 1, hidden, hidden)?;
        let x_n = tape.slice(gx_t, 1, 2 * hidden, hidden)?;
        let h_r = tape.slice(gh, 1, 0, hidden)?;
        let h_z = tape.slice(gh, 1, hidden, hidden)?;
        let h_n = tape.slice(gh, 1, 2 * hidden, hidden)?;

        let r = tape.add(x_r, h_r)?;
        let r = tape.sigmoid(r);
        let z = tape.add(x_z, h_z)?;
        let z = tape.sigmoid(z);
        let gated = tape.hadamard(r, h_n)?;
        let n = tape.add(x_n, gated)?;
        let n = tape.tanh(n);

        let keep = tape.affine(z, -1.0, 1.0);
        let fresh = tape.hadamard(keep, n)?;
        let carried = tape.hadamard(z, h)?;
        h = tape.add(fresh, carried)?;
        states.push(h);
    }
    if reverse {
        states.reverse();
    }
    tape.concat(&states, 0)
}

/// Bi-directional GRU: `t × input` to `t × 2·hidden`, forward states first.
pub fn bigru(
    tape: &mut Tape,
    forward: &GruWeights<Var>,
    backward: &GruWeights<Var>,
    x: Var,
) -> Result<Var> {
    if tape.shape(x).first().copied().unwrap_or(0) == 0 {
        return Err(Error::EmptyInput("bigru"));
    }
    let f = gru_direction(tape, forward, x, false)?;
    let b = gru_direction(tape, backward, x, true)?;
    tape.concat(&[f, b], 1)
}

#[derive(Clone, Debug)]
pub struct GruParams {
    pub forward: GruWeights<ParamId>,
    pub backward: GruWeights<ParamId>,
    pub input: usize,
    pub hidden: usize,
}

fn init_direction<R: Rng + ?Sized>(
    set: &mut ParamSet,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut R,
) -> Result<GruWeights<ParamId>> {
    let mut w = |name: &str, cols: usize, set: &mut ParamSet| {
        set.insert_weight(format!("{prefix}.{name}"), hidden, cols, rng)
    };
    let w_ir = w("w_ir", input, set)?;
    let w_iz = w("w_iz", input, set)?;
    let w_in = w("w_in", input, set)?;
    let w_hr = w("w_hr", hidden, set)?;
    let w_hz = w("w_hz", hidden, set)?;
    let w_hn = w("w_hn", hidden, set)?;
    let mut b = |name: &str| set.insert_bias(format!("{prefix}.{name}"), hidden);
    Ok(GruWeights {
        w_ir,
        w_iz,
        w_in,
        w_hr,
        w_hz,
        w_hn,
        b_ir: b("b_ir")?,
        b_iz: b("b_iz")?,
        b_in: b("b_in")?,
        b_hr: b("b_hr")?,
        b_hz: b("b_hz")?,
        b_hn: b("b_hn")?,
    })
}

impl GruParams {
    pub fn init<R: Rng + ?Sized>(
        set: &mut ParamSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(GruParams {
            forward: init_direction(set, &format!("{prefix}.fwd"), input, hidden, rng)?,
            backward: init_direction(set, &format!("{prefix}.bwd"), input, hidden, rng)?,
            input,
            hidden,
        })
    }

    pub fn output_width(&self) -> usize {
        2 * self.hidden
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let f = self.forward.map(|id| bound.var(id));
        let b = self.backward.map(|id| bound.var(id));
        bigru(tape, &f, &b, x)
    }
}
