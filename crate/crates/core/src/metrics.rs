//! Accuracy summaries of predictions against held-out truth.

use crate::{Error, Result, Scalar};

/// Truth, predicted means and predicted variances over a test set.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSet<T: Scalar> {
    pub truth: Vec<T>,
    pub pred_mean: Vec<T>,
    pub pred_var: Vec<T>,
}

impl<T: Scalar> EvalSet<T> {
    pub fn new(truth: Vec<T>, pred_mean: Vec<T>, pred_var: Vec<T>) -> Result<Self> {
        if truth.len() != pred_mean.len() || truth.len() != pred_var.len() {
            return Err(Error::Shape(format!(
                "{} truths, {} means and {} variances",
                truth.len(),
                pred_mean.len(),
                pred_var.len()
            )));
        }
        if pred_var.iter().any(|v| !(*v >= T::zero())) {
            return Err(Error::Shape("predicted variances must be nonnegative".into()));
        }
        Ok(EvalSet { truth, pred_mean, pred_var })
    }

    /// Without variances (all zero).
    pub fn means_only(truth: Vec<T>, pred_mean: Vec<T>) -> Result<Self> {
        let n = pred_mean.len();
        Self::new(truth, pred_mean, vec![T::zero(); n])
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    fn nonempty(&self, what: &str) -> Result<()> {
        if self.is_empty() {
            Err(Error::Undefined(format!("{what} of an empty set")))
        } else {
            Ok(())
        }
    }

    fn sse(&self) -> T {
        self.pred_mean.iter().zip(&self.truth).fold(T::zero(), |s, (p, t)| s + (*p - *t) * (*p - *t))
    }
}

pub fn rmse<T: Scalar>(e: &EvalSet<T>) -> Result<T> {
    e.nonempty("RMSE")?;
    Ok((e.sse() / T::from_usize_lossy(e.len())).sqrt())
}

pub fn maxae<T: Scalar>(e: &EvalSet<T>) -> Result<T> {
    e.nonempty("MaxAE")?;
    Ok(e.pred_mean.iter().zip(&e.truth).fold(T::zero(), |m, (p, t)| m.max((*p - *t).abs())))
}

/// `1 − SSE/SST`, with `SST` taken about the mean of the truth.
pub fn q2<T: Scalar>(e: &EvalSet<T>) -> Result<T> {
    e.nonempty("Q2")?;
    let n = T::from_usize_lossy(e.len());
    let mean = e.truth.iter().fold(T::zero(), |s, v| s + *v) / n;
    let sst = e.truth.iter().fold(T::zero(), |s, v| s + (*v - mean) * (*v - mean));
    if !(sst > T::zero()) {
        return Err(Error::Undefined("Q2 is undefined for a constant truth".into()));
    }
    Ok(T::one() - e.sse() / sst)
}

/// Root of the mean predicted variance.
pub fn rimse<T: Scalar>(e: &EvalSet<T>) -> Result<T> {
    e.nonempty("RIMSE")?;
    Ok((e.pred_var.iter().fold(T::zero(), |s, v| s + *v) / T::from_usize_lossy(e.len())).sqrt())
}
