use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde_json::json;

use super::metrics::nrmse_from;
use crate::data::{Normalizer, Sequence};
use crate::error::Result;
use crate::ssm::{rolling_predict, Model, Prediction};

/// Predictions and error on one test sequence, in data units.
#[derive(Debug, Clone)]
pub struct SetResult {
    /// `None` for the unrotated test sequence.
    pub angle: Option<f64>,
    pub truth: Sequence,
    pub prediction: Prediction,
    pub nrmse: f64,
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub dataset: String,
    pub variant: String,
    /// `none`, an angle in radians, or `mean` over the rotated copies.
    pub rotation: String,
    pub nrmse_pct: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub dataset: String,
    pub variant: String,
    pub regular: SetResult,
    pub rotated: Vec<SetResult>,
}

/// Rolling prediction on a sequence in data units: normalize, predict,
/// map predictions and standard deviations back.
pub fn predict(model: &Model, norm: &Normalizer, seq: &Sequence) -> Result<Prediction> {
    let mut prediction = rolling_predict(model, &norm.apply(seq))?;
    prediction.predicted = norm.invert_values(&prediction.predicted);
    prediction.std = norm.invert_values(&prediction.std);
    Ok(prediction)
}

fn predict_one(model: &Model, norm: &Normalizer, angle: Option<f64>, seq: &Sequence) -> Result<SetResult> {
    let prediction = predict(model, norm, seq)?;
    let nrmse = nrmse_from(&prediction.predicted, &seq.values, &seq.mask, prediction.warmup)?;
    Ok(SetResult {
        angle,
        truth: seq.clone(),
        prediction,
        nrmse,
    })
}

/// Rolling prediction on `test` and on every rotated copy, in parallel.
pub fn evaluate(
    model: &Model,
    norm: &Normalizer,
    dataset: &str,
    test: &Sequence,
    rotated: &[(f64, Sequence)],
) -> Result<EvalReport> {
    let jobs: Vec<(Option<f64>, &Sequence)> = std::iter::once((None, test))
        .chain(rotated.iter().map(|(a, s)| (Some(*a), s)))
        .collect();
    let mut results = jobs
        .par_iter()
        .map(|(a, s)| predict_one(model, norm, *a, s))
        .collect::<Result<Vec<_>>>()?;
    let regular = results.remove(0);
    Ok(EvalReport {
        dataset: dataset.into(),
        variant: model.config().variant.to_string(),
        regular,
        rotated: results,
    })
}

impl EvalReport {
    /// Mean NRMSE over the rotated copies, if any.
    pub fn mean_rotated(&self) -> Option<f64> {
        if self.rotated.is_empty() {
            None
        } else {
            Some(self.rotated.iter().map(|r| r.nrmse).sum::<f64>() / self.rotated.len() as f64)
        }
    }

    pub fn rows(&self) -> Vec<EvalRow> {
        let row = |rotation: String, v: f64| EvalRow {
            dataset: self.dataset.clone(),
            variant: self.variant.clone(),
            rotation,
            nrmse_pct: v,
        };
        let mut out = vec![row("none".into(), self.regular.nrmse)];
        for r in &self.rotated {
            out.push(row(format!("{}", r.angle.unwrap_or(0.0)), r.nrmse));
        }
        if let Some(m) = self.mean_rotated() {
            out.push(row("mean".into(), m));
        }
        out
    }

    /// Fraction of scored timesteps where the rotated copy `i` has the same
    /// state argmax as the regular run.
    pub fn state_agreement(&self, i: usize) -> f64 {
        let a = &self.regular.prediction;
        let b = &self.rotated[i].prediction;
        let n = a.states.len() - a.warmup;
        let same = (a.warmup..a.states.len()).filter(|&t| a.states[t] == b.states[t]).count();
        same as f64 / n as f64
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "dataset": self.dataset,
            "variant": self.variant,
            "regular_nrmse_pct": self.regular.nrmse,
            "rotated": self.rotated.iter().map(|r| json!({
                "angle": r.angle,
                "nrmse_pct": r.nrmse,
            })).collect::<Vec<_>>(),
            "rotated_mean_nrmse_pct": self.mean_rotated(),
        })
    }
}

/// Writes the `dataset,variant,rotation_angle,nrmse_pct` CSV.
pub fn write_results_csv<W: Write>(mut w: W, rows: &[EvalRow]) -> Result<()> {
    writeln!(w, "dataset,variant,rotation_angle,nrmse_pct")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.dataset, r.variant, r.rotation, r.nrmse_pct)?;
    }
    Ok(())
}

/// Aligned plain-text table of `rows`.
pub struct Table<'a>(pub &'a [EvalRow]);

impl fmt::Display for Table<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:<12} {:>10} {:>10}", "dataset", "variant", "rotation", "NRMSE %")?;
        for r in self.0 {
            let rotation = match r.rotation.parse::<f64>() {
                Ok(a) => format!("{a:.4}"),
                Err(_) => r.rotation.clone(),
            };
            writeln!(f, "{:<12} {:<12} {:>10} {:>10.3}", r.dataset, r.variant, rotation, r.nrmse_pct)?;
        }
        Ok(())
    }
}
