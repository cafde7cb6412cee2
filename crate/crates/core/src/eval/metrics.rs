use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// `100 * RMSE / (max - min)` over observed entries, the range taken over the
/// observed truth values.
pub fn nrmse(pred: &DMatrix<f64>, truth: &DMatrix<f64>, mask: &DMatrix<bool>) -> Result<f64> {
    nrmse_from(pred, truth, mask, 0)
}

/// [`nrmse`] restricted to rows `start..`.
pub fn nrmse_from(pred: &DMatrix<f64>, truth: &DMatrix<f64>, mask: &DMatrix<bool>, start: usize) -> Result<f64> {
    if pred.shape() != truth.shape() || mask.shape() != truth.shape() {
        return Err(Error::Shape(format!(
            "nrmse: prediction {:?}, truth {:?}, mask {:?}",
            pred.shape(),
            truth.shape(),
            mask.shape()
        )));
    }
    let mut sq = 0.0;
    let mut n = 0usize;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in start..truth.nrows() {
        for c in 0..truth.ncols() {
            if mask[(r, c)] {
                let y = truth[(r, c)];
                let e = pred[(r, c)] - y;
                sq += e * e;
                n += 1;
                lo = lo.min(y);
                hi = hi.max(y);
            }
        }
    }
    if n == 0 {
        return Err(Error::InvalidArgument("nrmse: no observed entries".into()));
    }
    let range = hi - lo;
    if range.is_nan() || range <= 0.0 {
        return Err(Error::InvalidArgument("nrmse: observed truth is constant".into()));
    }
    Ok(100.0 * (sq / n as f64).sqrt() / range)
}
