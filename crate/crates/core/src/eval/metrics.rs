use crate::error::{Error, Result};
use crate::types::FlowField;

/// (absolute meters, relative fraction)
pub const ACC_STRICT: (f64, f64) = (0.05, 0.05);
pub const ACC_RELAXED: (f64, f64) = (0.1, 0.1);
const OUTLIER_ABS: f64 = 0.3;
const OUTLIER_REL: f64 = 0.05;
const REL_FLOOR: f64 = 1e-10;

/// Per-point `(end-point error, ground-truth magnitude)` over selected points.
fn point_errors(pred: &FlowField, gt: &FlowField, mask: Option<&[bool]>) -> Result<Vec<(f64, f64)>> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch(pred.len(), gt.len()));
    }
    if let Some(m) = mask {
        if m.len() != gt.len() {
            return Err(Error::LengthMismatch(m.len(), gt.len()));
        }
    }
    let errs: Vec<(f64, f64)> = pred
        .vectors
        .iter()
        .zip(&gt.vectors)
        .enumerate()
        .filter(|(i, _)| mask.is_none_or(|m| m[*i]))
        .map(|(_, (p, g))| ((p - g).norm(), g.norm()))
        .collect();
    if errs.is_empty() {
        return Err(Error::AllMasked);
    }
    Ok(errs)
}

/// Mean end-point error over points whose mask entry is true.
pub fn epe(pred: &FlowField, gt: &FlowField, mask: Option<&[bool]>) -> Result<f64> {
    let e = point_errors(pred, gt, mask)?;
    Ok(e.iter().map(|(d, _)| d).sum::<f64>() / e.len() as f64)
}

/// Fraction of points with error below `abs_thresh` or relative error below
/// `rel_thresh`.
pub fn acc(pred: &FlowField, gt: &FlowField, mask: Option<&[bool]>, abs_thresh: f64, rel_thresh: f64) -> Result<f64> {
    let e = point_errors(pred, gt, mask)?;
    let good = e
        .iter()
        .filter(|(d, g)| *d < abs_thresh || d / g.max(REL_FLOOR) < rel_thresh)
        .count();
    Ok(good as f64 / e.len() as f64)
}

/// Fraction of points exceeding both 0.3 m and 5 % relative error.
pub fn outlier_ratio(pred: &FlowField, gt: &FlowField, mask: Option<&[bool]>) -> Result<f64> {
    let e = point_errors(pred, gt, mask)?;
    let bad = e
        .iter()
        .filter(|(d, g)| *d > OUTLIER_ABS && d / g.max(REL_FLOOR) > OUTLIER_REL)
        .count();
    Ok(bad as f64 / e.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub epe: f64,
    pub acc_strict: f64,
    pub acc_relaxed: f64,
    pub outlier_ratio: f64,
    pub points: usize,
}

impl MetricReport {
    pub fn compute(pred: &FlowField, gt: &FlowField, mask: Option<&[bool]>) -> Result<Self> {
        let points = point_errors(pred, gt, mask)?.len();
        Ok(MetricReport {
            epe: epe(pred, gt, mask)?,
            acc_strict: acc(pred, gt, mask, ACC_STRICT.0, ACC_STRICT.1)?,
            acc_relaxed: acc(pred, gt, mask, ACC_RELAXED.0, ACC_RELAXED.1)?,
            outlier_ratio: outlier_ratio(pred, gt, mask)?,
            points,
        })
    }

    /// One `key=value` line per field.
    pub fn to_lines(&self) -> String {
        format!(
            "epe={}\nacc_strict={}\nacc_relaxed={}\noutlier_ratio={}\npoints={}\n",
            self.epe, self.acc_strict, self.acc_relaxed, self.outlier_ratio, self.points
        )
    }
}
