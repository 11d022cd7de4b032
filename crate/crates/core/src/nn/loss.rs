//! Relative error losses on parameter vectors stored as matrix columns.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Mean over components of `|pred - target| / |target|`.
pub fn sample_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: target.len(),
            got: pred.len(),
        });
    }
    if target.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut sum = 0.0;
    for (l, (p, t)) in pred.iter().zip(target).enumerate() {
        if *t == 0.0 {
            return Err(Error::ZeroTarget { index: l });
        }
        sum += (p - t).abs() / t.abs();
    }
    Ok(sum / target.len() as f64)
}

/// `|pred - target|_2 / |target|_2`.
pub fn vector_relative_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: target.len(),
            got: pred.len(),
        });
    }
    let den = target.iter().map(|t| t * t).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::ZeroTarget { index: 0 });
    }
    let num = pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>().sqrt();
    Ok(num / den)
}

fn check_shapes(preds: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<()> {
    if preds.shape() != targets.shape() {
        return Err(Error::DimensionMismatch {
            expected: targets.len(),
            got: preds.len(),
        });
    }
    if targets.ncols() == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok(())
}

/// Per-component mean relative error over the columns of a batch.
pub fn per_param_errors(preds: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_shapes(preds, targets)?;
    let mut errs = vec![0.0; targets.nrows()];
    for (p, t) in preds.column_iter().zip(targets.column_iter()) {
        for (l, e) in errs.iter_mut().enumerate() {
            if t[l] == 0.0 {
                return Err(Error::ZeroTarget { index: l });
            }
            *e += (p[l] - t[l]).abs() / t[l].abs();
        }
    }
    let b = targets.ncols() as f64;
    Ok(errs.into_iter().map(|e| e / b).collect())
}

/// Batch mean of [`sample_loss`].
pub fn batch_loss(preds: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<f64> {
    let errs = per_param_errors(preds, targets)?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Quantity minimized during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Objective {
    /// [`batch_loss`], the quantity reported as test loss.
    #[default]
    Componentwise,
    /// Batch mean of [`vector_relative_loss`].
    Vector,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Vector => "vector",
            Objective::Componentwise => "componentwise",
        }
    }

    pub fn batch_value(self, preds: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<f64> {
        Ok(self.loss_and_output_grad(preds, targets)?.0)
    }

    /// Loss and its gradient w.r.t. `preds`.
    pub(crate) fn loss_and_output_grad(
        self,
        preds: &DMatrix<f64>,
        targets: &DMatrix<f64>,
    ) -> Result<(f64, DMatrix<f64>)> {
        check_shapes(preds, targets)?;
        let (m, b) = targets.shape();
        let mut grad = DMatrix::zeros(m, b);
        let mut total = 0.0;
        match self {
            Objective::Componentwise => {
                let w = 1.0 / (m * b) as f64;
                for j in 0..b {
                    for l in 0..m {
                        let t = targets[(l, j)];
                        if t == 0.0 {
                            return Err(Error::ZeroTarget { index: l });
                        }
                        let r = preds[(l, j)] - t;
                        total += r.abs() / t.abs();
                        // sign(0) = 0
                        grad[(l, j)] = if r == 0.0 { 0.0 } else { r.signum() * w / t.abs() };
                    }
                }
                total *= w;
            }
            Objective::Vector => {
                for j in 0..b {
                    let den = targets.column(j).norm();
                    if den == 0.0 {
                        return Err(Error::ZeroTarget { index: 0 });
                    }
                    let r = preds.column(j) - targets.column(j);
                    let num = r.norm();
                    total += num / den;
                    if num > 0.0 {
                        grad.set_column(j, &(r / (num * den * b as f64)));
                    }
                }
                total /= b as f64;
            }
        }
        Ok((total, grad))
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vector" => Ok(Objective::Vector),
            "componentwise" => Ok(Objective::Componentwise),
            _ => Err(Error::Config(format!(
                "unknown objective `{s}` (componentwise, vector)"
            ))),
        }
    }
}
