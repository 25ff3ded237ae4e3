//! Greedy non-maximum suppression.

use super::boxes::{iou, BBox};

pub const DEFAULT_NMS_THRESHOLD: f64 = 0.45;

/// Indices of kept boxes in selection order. Candidates are visited by score
/// (descending, ties in input order); a box is dropped if its IoU with any
/// kept box exceeds `threshold`.
pub fn nms(boxes: &[BBox], scores: &[f64], threshold: f64) -> Vec<usize> {
    assert_eq!(boxes.len(), scores.len(), "one score per box");
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut suppressed = vec![false; boxes.len()];
    let mut kept = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        kept.push(i);
        for &j in &order[pos + 1..] {
            if !suppressed[j] && iou(&boxes[i], &boxes[j]) > threshold {
                suppressed[j] = true;
            }
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let boxes = [
            BBox::new(0.0, 0.0, 10.0, 10.0),
            BBox::new(1.0, 1.0, 11.0, 11.0),
            BBox::new(20.0, 20.0, 30.0, 30.0),
        ];
        assert!((iou(&boxes[0], &boxes[1]) - 81.0 / 119.0).abs() < 1e-12);
        assert_eq!(nms(&boxes, &[0.9, 0.8, 0.7], 0.5), vec![0, 2]);
    }

    #[test]
    fn degenerate_inputs() {
        let b = BBox::new(0.0, 0.0, 1.0, 1.0);
        assert_eq!(nms(&[b], &[0.3], 0.45), vec![0]);
        assert_eq!(nms(&[b, b, b], &[0.2, 0.9, 0.5], 0.45), vec![1]);
        assert_eq!(nms(&[b, b], &[0.5, 0.5], 0.45), vec![0]);
        assert!(nms(&[], &[], 0.45).is_empty());
    }
}
