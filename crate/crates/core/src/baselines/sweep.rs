//! Threshold sweeps: F-measure of the difference classifier as a function of θ.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::threshold::threshold_classify;
use crate::data::eval::{csv_error, Counts};
use crate::error::{Error, Result};
use crate::segmentation::LabelMap;
use crate::tensor::Tensor;

pub const GRID_MAX: f64 = 0.5;

/// 51 points from 0 to 0.5 in steps of 0.01, endpoints included.
pub fn default_grid() -> Vec<f64> {
    (0..=50).map(|i| i as f64 / 100.0).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub theta: f64,
    pub f_measure: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub method: String,
    pub points: Vec<SweepPoint>,
    pub best: SweepPoint,
}

/// One scored frame: image, the method's background estimate and the labels,
/// all at the same resolution.
pub struct SweepItem<'a> {
    pub frame: &'a Tensor,
    pub background: &'a Tensor,
    pub labels: &'a LabelMap,
}

/// F-measure (counts aggregated over all items) for every θ in `grid`. The best
/// point is the first maximum.
pub fn threshold_sweep(method: &str, items: &[SweepItem<'_>], grid: &[f64]) -> Result<SweepResult> {
    if items.is_empty() {
        return Err(Error::Data("nothing to sweep over".into()));
    }
    if grid.is_empty() {
        return Err(Error::invalid("threshold grid is empty"));
    }
    if let Some(t) = grid.iter().find(|t| !(0.0..=GRID_MAX).contains(*t)) {
        return Err(Error::invalid(format!("threshold {t} lies outside [0, {GRID_MAX}]")));
    }
    let mut points = Vec::with_capacity(grid.len());
    for &theta in grid {
        let mut counts = Counts::default();
        for it in items {
            let mask = threshold_classify(it.frame, it.background, theta)?;
            counts.merge(Counts::from_frame(&mask, it.labels)?);
        }
        if counts.scored == 0 {
            return Err(Error::NoScorablePixels);
        }
        points.push(SweepPoint {
            theta,
            f_measure: counts.f_measure(),
        });
    }
    let best = points
        .iter()
        .copied()
        .fold(points[0], |b, p| if p.f_measure > b.f_measure { p } else { b });
    Ok(SweepResult {
        method: method.to_string(),
        points,
        best,
    })
}

/// CSV with columns `method,theta,f_measure`.
pub fn write_sweep_csv<W: Write>(out: W, results: &[SweepResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "theta", "f_measure"]).map_err(csv_error)?;
    for r in results {
        for p in &r.points {
            w.write_record([r.method.clone(), format!("{:.2}", p.theta), format!("{:.6}", p.f_measure)])
                .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}
