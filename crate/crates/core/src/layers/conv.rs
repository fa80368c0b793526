use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamSet};

/// Kernel-size-1 convolution whose channels are the time steps: a learned
/// `t_out × t_in` mixing of time steps with the feature width preserved.
///
/// `out[t', :] = bias[t'] + Σ_k weight[t', k] · x[k, :]`
pub fn time_conv(tape: &mut Tape, weight: Var, bias: Var, x: Var) -> Result<Var> {
    let (ws, xs) = (tape.shape(weight), tape.shape(x));
    if ws.len() != 2 || xs.len() != 2 || ws[1] != xs[0] {
        return Err(Error::shape("time_conv", ws, xs));
    }
    let mixed = tape.matmul(weight, x)?;
    tape.add_broadcast(mixed, bias, 0)
}

#[derive(Clone, Debug)]
pub struct TimeConvParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub t_in: usize,
    pub t_out: usize,
}

impl TimeConvParams {
    pub fn init<R: Rng + ?Sized>(
        set: &mut ParamSet,
        prefix: &str,
        t_in: usize,
        t_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(TimeConvParams {
            weight: set.insert_weight(format!("{prefix}.weight"), t_out, t_in, rng)?,
            bias: set.insert_bias(format!("{prefix}.bias"), t_out)?,
            t_in,
            t_out,
        })
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        if tape.shape(x).first() != Some(&self.t_in) {
            return Err(Error::shape("time_conv", &[self.t_in], tape.shape(x)));
        }
        time_conv(tape, bound.var(self.weight), bound.var(self.bias), x)
    }
}
