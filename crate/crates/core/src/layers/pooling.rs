use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamSet};

/// Mean over the time axis: `t × d` to `d`.
pub fn temporal_average(tape: &mut Tape, x: Var) -> Result<Var> {
    if tape.shape(x).len() != 2 {
        return Err(Error::invalid(
            "temporal_average",
            format!("expected t×d, got {:?}", tape.shape(x)),
        ));
    }
    tape.mean(x, 0)
}

#[derive(Clone, Copy, Debug)]
pub struct ClassifierWeights<T> {
    pub fc1_w: T,
    pub fc1_b: T,
    pub fc2_w: T,
    pub fc2_b: T,
}

impl<T: Copy> ClassifierWeights<T> {
    pub fn map<U>(&self, mut f: impl FnMut(T) -> U) -> ClassifierWeights<U> {
        ClassifierWeights {
            fc1_w: f(self.fc1_w),
            fc1_b: f(self.fc1_b),
            fc2_w: f(self.fc2_w),
            fc2_b: f(self.fc2_b),
        }
    }
}

/// Two fully connected layers followed by softmax: a feature vector of width
/// `input` to class probabilities.
pub fn classifier_head(tape: &mut Tape, w: &ClassifierWeights<Var>, features: Var) -> Result<Var> {
    let fs = tape.shape(features).to_vec();
    let input = tape.shape(w.fc1_w)[1];
    if fs != [input] {
        return Err(Error::shape("classify", &fs, &[input]));
    }
    let row = tape.reshape(features, &[1, input])?;
    let w1 = tape.transpose(w.fc1_w)?;
    let h = tape.matmul(row, w1)?;
    let h = tape.add_broadcast(h, w.fc1_b, 1)?;
    let w2 = tape.transpose(w.fc2_w)?;
    let o = tape.matmul(h, w2)?;
    let o = tape.add_broadcast(o, w.fc2_b, 1)?;
    let classes = tape.shape(o)[1];
    let o = tape.reshape(o, &[classes])?;
    tape.softmax(o, 0)
}

/// Statistical pooling over the `N × d` stack of pooled vectors, then the
/// classifier head on `mean ∥ std`.
pub fn classify(tape: &mut Tape, w: &ClassifierWeights<Var>, pooled: Var) -> Result<Var> {
    let stats = statistical_pooling(tape, pooled)?;
    classifier_head(tape, w, stats)
}

/// `mean ∥ std` over the rows of an `N × d` stack.
pub fn statistical_pooling(tape: &mut Tape, pooled: Var) -> Result<Var> {
    let (mu, sigma) = tape.mean_std(pooled)?;
    tape.concat(&[mu, sigma], 0)
}

#[derive(Clone, Debug)]
pub struct ClassifierParams {
    pub weights: ClassifierWeights<ParamId>,
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl ClassifierParams {
    pub fn init<R: Rng + ?Sized>(
        set: &mut ParamSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fc1_w = set.insert_weight(format!("{prefix}.fc1.weight"), hidden, input, rng)?;
        let fc1_b = set.insert_bias(format!("{prefix}.fc1.bias"), hidden)?;
        let fc2_w = set.insert_weight(format!("{prefix}.fc2.weight"), classes, hidden, rng)?;
        let fc2_b = set.insert_bias(format!("{prefix}.fc2.bias"), classes)?;
        Ok(ClassifierParams {
            weights: ClassifierWeights {
                fc1_w,
                fc1_b,
                fc2_w,
                fc2_b,
            },
            input,
            hidden,
            classes,
        })
    }

    pub fn head(&self, tape: &mut Tape, bound: &Bound, features: Var) -> Result<Var> {
        classifier_head(tape, &self.weights.map(|id| bound.var(id)), features)
    }
}
