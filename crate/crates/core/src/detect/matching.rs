//! Assignment of priors to groundtruth boxes.

use super::boxes::{encode_box, iou, BBox, Variances};
use crate::error::Result;

/// Per-prior assignment: `Some(gt index)` or background.
///
/// Groundtruths are visited in order and each takes its best-IoU prior among
/// those not already taken by an earlier groundtruth (ties to the lowest prior
/// index). Every other prior is matched to the groundtruth of highest IoU
/// (ties to the lowest index) if that IoU reaches `threshold`.
pub fn match_priors(priors: &[BBox], gts: &[BBox], threshold: f64) -> Vec<Option<usize>> {
    let mut assigned: Vec<Option<usize>> = vec![None; priors.len()];
    let mut forced = vec![false; priors.len()];
    for (g, gt) in gts.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (p, prior) in priors.iter().enumerate() {
            if forced[p] {
                continue;
            }
            let v = iou(prior, gt);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((p, v));
            }
        }
        if let Some((p, _)) = best {
            forced[p] = true;
            assigned[p] = Some(g);
        }
    }
    for (p, prior) in priors.iter().enumerate() {
        if forced[p] {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            let v = iou(prior, gt);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, v)) = best {
            if v >= threshold {
                assigned[p] = Some(g);
            }
        }
    }
    assigned
}

/// Training target of one prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorTarget {
    /// 0 is background; object classes start at 1.
    pub class: usize,
    /// Encoded offsets (zero for background).
    pub offsets: [f64; 4],
}

/// Matches priors and encodes targets. `labels[g]` is the 1-based class of `gts[g]`.
pub fn build_targets(
    priors: &[BBox],
    gts: &[BBox],
    labels: &[usize],
    threshold: f64,
    variances: Variances,
) -> Result<Vec<PriorTarget>> {
    match_priors(priors, gts, threshold)
        .into_iter()
        .zip(priors)
        .map(|(m, prior)| match m {
            Some(g) => Ok(PriorTarget {
                class: labels[g],
                offsets: encode_box(&gts[g], prior, variances)?,
            }),
            None => Ok(PriorTarget {
                class: 0,
                offsets: [0.0; 4],
            }),
        })
        .collect()
}
