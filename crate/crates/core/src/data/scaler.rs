use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const STD_FLOOR: f64 = 1e-8;

/// Which split a scaler was fitted on. Only training splits are accepted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// Per-feature standardization, `(x - mean) / std`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StandardScaler {
    mean: Vec<f64>,
    std: Vec<f64>,
    fitted_on: Option<(Split, usize)>,
}

impl StandardScaler {
    /// Fits on every row of `frames` (each `t × d`, real frames only).
    /// `fold` is recorded alongside the split marker.
    pub fn fit<'a>(
        frames: impl IntoIterator<Item = &'a [f32]>,
        width: usize,
        split: Split,
        fold: usize,
    ) -> Result<Self> {
        if split != Split::Train {
            return Err(Error::invalid(
                "fit_scaler",
                format!("refusing to fit on the {split:?} split"),
            ));
        }
        let mut n = 0usize;
        let mut sum = vec![0.0; width];
        let mut sum_sq = vec![0.0; width];
        let mut rows = Vec::new();
        for seq in frames {
            if seq.len() % width != 0 {
                return Err(Error::shape("fit_scaler", &[width], &[seq.len()]));
            }
            rows.push(seq);
            for row in seq.chunks_exact(width) {
                n += 1;
                for (s, &v) in sum.iter_mut().zip(row) {
                    *s += v as f64;
                }
            }
        }
        if n == 0 {
            return Err(Error::EmptyInput("fit_scaler"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        for seq in rows {
            for row in seq.chunks_exact(width) {
                for ((acc, &v), &m) in sum_sq.iter_mut().zip(row).zip(&mean) {
                    let d = v as f64 - m;
                    *acc += d * d;
                }
            }
        }
        let std = sum_sq
            .iter()
            .map(|s| (s / n as f64).sqrt().max(STD_FLOOR))
            .collect();
        Ok(StandardScaler {
            mean,
            std,
            fitted_on: Some((split, fold)),
        })
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted_on.is_some()
    }

    pub fn fitted_on(&self) -> Option<(Split, usize)> {
        self.fitted_on
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    /// Standardizes the first `rows` rows of a `t × d` tensor in place,
    /// leaving padding rows untouched.
    pub fn apply_rows(&self, x: &mut Tensor, rows: usize) -> Result<()> {
        if !self.is_fitted() {
            return Err(Error::invalid("apply_scaler", "scaler has not been fitted"));
        }
        let width = self.mean.len();
        if x.ndim() != 2 || x.cols() != width {
            return Err(Error::shape("apply_scaler", &[width], x.shape()));
        }
        let rows = rows.min(x.rows());
        for row in x.data_mut()[..rows * width].chunks_exact_mut(width) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(())
    }

    pub fn apply(&self, x: &mut Tensor) -> Result<()> {
        let rows = x.shape().first().copied().unwrap_or(0);
        self.apply_rows(x, rows)
    }
}
