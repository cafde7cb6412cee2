//! Trajectories: the pendulum simulator, CSV I/O, rotation, masking,
//! splitting and scale normalization.

mod csv;
mod pendulum;
mod transform;

use nalgebra::DMatrix;

pub use self::csv::{load_csv, read_csv, save_csv, write_csv};
pub use pendulum::{pendulum_energy, simulate_pendulum, PendulumSpec, Plane};
pub use transform::{
    make_rotated_testset, mask_random, rotate_sequence, rotate_sequence_with, split_half, Normalizer,
};

use crate::error::{Error, Result};

/// A `T x (3 D)` trajectory of `D` joints; columns are `j0_x, j0_y, j0_z, j1_x, ...`.
///
/// Missing entries hold `NaN` in `values` and `false` in `mask`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub dt: f64,
    pub values: DMatrix<f64>,
    pub mask: DMatrix<bool>,
}

impl Sequence {
    /// Fully observed sequence. Non-finite values are treated as missing.
    pub fn new(name: impl Into<String>, dt: f64, values: DMatrix<f64>) -> Result<Self> {
        let mask = values.map(f64::is_finite);
        Self::with_mask(name, dt, values, mask)
    }

    pub fn with_mask(name: impl Into<String>, dt: f64, mut values: DMatrix<f64>, mask: DMatrix<bool>) -> Result<Self> {
        if values.ncols() == 0 || !values.ncols().is_multiple_of(3) {
            return Err(Error::Shape(format!(
                "a sequence needs 3 columns per joint, got {}",
                values.ncols()
            )));
        }
        if mask.shape() != values.shape() {
            return Err(Error::Shape(format!(
                "mask shape {:?} differs from values {:?}",
                mask.shape(),
                values.shape()
            )));
        }
        for (v, m) in values.iter_mut().zip(mask.iter()) {
            if !*m {
                *v = f64::NAN;
            } else if !v.is_finite() {
                return Err(Error::NonFinite("observed entry is not finite".into()));
            }
        }
        Ok(Self {
            name: name.into(),
            dt,
            values,
            mask,
        })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn joints(&self) -> usize {
        self.values.ncols() / 3
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Rows `start..start + len` as a new sequence.
    pub fn slice(&self, start: usize, len: usize, name: impl Into<String>) -> Sequence {
        Sequence {
            name: name.into(),
            dt: self.dt,
            values: self.values.rows(start, len).into_owned(),
            mask: self.mask.rows(start, len).into_owned(),
        }
    }

    /// Observations as `(3 D) x T` columns with missing entries zero-filled,
    /// plus matching 0/1 weights.
    pub fn columns(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let x = self.values.transpose().map(|v| if v.is_finite() { v } else { 0.0 });
        let w = self.mask.transpose().map(|m| if m { 1.0 } else { 0.0 });
        (x, w)
    }
}
