//! Binary segmentation metrics and bound-gap statistics.

use crate::error::Result;
use crate::grid::BinaryMask;
use crate::transfer::BoundPair;

/// Per-run metric summary. `per_view` rows are (view index, iou, accuracy).
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub mean_iou: f64,
    pub pixel_accuracy: f64,
    pub per_view: Vec<(usize, f64, f64)>,
    pub bound_gap_mean: f64,
}

impl MetricReport {
    pub fn from_views(per_view: Vec<(usize, f64, f64)>, bound_gap_mean: f64) -> Self {
        let n = per_view.len().max(1) as f64;
        let mean_iou = per_view.iter().map(|r| r.1).sum::<f64>() / n;
        let pixel_accuracy = per_view.iter().map(|r| r.2).sum::<f64>() / n;
        MetricReport {
            mean_iou,
            pixel_accuracy,
            per_view,
            bound_gap_mean,
        }
    }
}

/// Intersection over union; both masks empty counts as perfect agreement.
pub fn iou(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    pred.same_size(truth)?;
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&a, &b) in pred.as_slice().iter().zip(truth.as_slice()) {
        inter += usize::from(a == 1 && b == 1);
        union += usize::from(a == 1 || b == 1);
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Fraction of pixels where the masks agree.
pub fn pixel_accuracy(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    pred.same_size(truth)?;
    let agree = pred
        .as_slice()
        .iter()
        .zip(truth.as_slice())
        .filter(|(a, b)| a == b)
        .count();
    Ok(agree as f64 / (pred.width() * pred.height()) as f64)
}

/// Mean and max of (upper - lower) over all pixels.
pub fn bound_gap_stats(bounds: &BoundPair) -> (f64, f64) {
    let mut sum = 0.0;
    let mut max = 0.0f64;
    let upper = bounds.upper().as_slice();
    let lower = bounds.lower().as_slice();
    for (&u, &l) in upper.iter().zip(lower) {
        let gap = u - l;
        sum += gap;
        max = max.max(gap);
    }
    (sum / upper.len() as f64, max)
}
