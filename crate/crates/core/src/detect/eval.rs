//! Per-class average precision and recall with mAP/mAR aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::boxes::{iou, BBox};
use crate::data::kitti::{kitti_difficulty, DifficultyFilter, KittiObject};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApMode {
    /// Mean of the interpolated precision at recall 0, 0.1, …, 1.
    ElevenPoint,
    /// Area under the monotone precision envelope.
    AllPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub ap_mode: ApMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            ap_mode: ApMode::ElevenPoint,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtBox {
    pub bbox: BBox,
    /// False for objects outside the difficulty filter: they neither count as
    /// misses nor turn overlapping detections into false positives.
    pub eligible: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageGroundTruth {
    pub boxes: Vec<GtBox>,
    /// Regions whose detections are ignored.
    pub dont_care: Vec<BBox>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredDetection {
    /// Index into the groundtruth image list.
    pub image: usize,
    pub score: f64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassResult {
    pub ap: f64,
    pub ar: f64,
    pub num_gt: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub ignored: usize,
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `Σ fracs / divisor` with a single final rounding, or `None` on overflow.
fn exact_ratio(fracs: &[(u128, u128)], divisor: u128) -> Option<f64> {
    let (mut num, mut den) = (0u128, 1u128);
    for &(n, d) in fracs {
        let g = gcd(den, d);
        let l = (den / g).checked_mul(d)?;
        num = num.checked_mul(l / den)?.checked_add(n.checked_mul(l / d)?)?;
        den = l;
        let r = gcd(num, den).max(1);
        num /= r;
        den /= r;
    }
    let den = den.checked_mul(divisor)?;
    let r = gcd(num, den).max(1);
    let (num, den) = (num / r, den / r);
    // Exact conversion needs both parts within the f64 integer range.
    (num < 1 << 53 && den < 1 << 53).then(|| num as f64 / den as f64)
}

/// AP of a ranked TP/FP sequence against `num_gt` positives.
pub fn average_precision(is_tp: &[bool], num_gt: usize, mode: ApMode) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    // (true positives, detections so far) after each detection.
    let mut points: Vec<(u128, u128)> = Vec::with_capacity(is_tp.len());
    let mut tp = 0u128;
    for (i, &t) in is_tp.iter().enumerate() {
        tp += u128::from(t);
        points.push((tp, i as u128 + 1));
    }
    let num_gt = num_gt as u128;
    match mode {
        ApMode::ElevenPoint => {
            // Interpolated precision at each recall level as an exact fraction (tp, k).
            let levels: Vec<(u128, u128)> = (0..=10u128)
                .map(|r| {
                    // recall ≥ r/10  ⇔  10·tp ≥ r·num_gt, compared exactly in integers.
                    points
                        .iter()
                        .copied()
                        .filter(|&(tp, _)| 10 * tp >= r * num_gt)
                        .fold(
                            (0, 1),
                            |best, cand| if cand.0 * best.1 > best.0 * cand.1 { cand } else { best },
                        )
                })
                .collect();
            exact_ratio(&levels, 11)
                .unwrap_or_else(|| levels.iter().map(|&(n, d)| n as f64 / d as f64).sum::<f64>() / 11.0)
        }
        ApMode::AllPoint => {
            let mut envelope = points.clone();
            for i in (0..envelope.len().saturating_sub(1)).rev() {
                let (next, cur) = (envelope[i + 1], envelope[i]);
                if next.0 * cur.1 > cur.0 * next.1 {
                    envelope[i] = next;
                }
            }
            // Each recall step of Δtp/num_gt contributes Δtp·precision.
            let mut steps = Vec::new();
            let mut prev_tp = 0u128;
            for (i, &(tp, _)) in points.iter().enumerate() {
                if tp > prev_tp {
                    steps.push(((tp - prev_tp) * envelope[i].0, envelope[i].1));
                    prev_tp = tp;
                }
            }
            exact_ratio(&steps, num_gt)
                .unwrap_or_else(|| steps.iter().map(|&(n, d)| n as f64 / d as f64).sum::<f64>() / num_gt as f64)
        }
    }
}

/// Scores one class. Returns `None` when no eligible groundtruth exists.
pub fn evaluate_class(
    detections: &[ScoredDetection],
    images: &[ImageGroundTruth],
    config: &EvalConfig,
) -> Result<Option<ClassResult>> {
    if let Some(d) = detections.iter().find(|d| d.image >= images.len()) {
        return Err(Error::Input(format!(
            "detection refers to unknown image index {}",
            d.image
        )));
    }
    if let Some(d) = detections.iter().find(|d| !d.score.is_finite()) {
        return Err(Error::Input(format!("non-finite detection score {}", d.score)));
    }
    let num_gt: usize = images
        .iter()
        .map(|im| im.boxes.iter().filter(|g| g.eligible).count())
        .sum();
    if num_gt == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score).then(a.cmp(&b)));
    let mut used: Vec<Vec<bool>> = images.iter().map(|im| vec![false; im.boxes.len()]).collect();
    let mut ranked = Vec::with_capacity(order.len());
    let mut ignored = 0usize;
    let thr = config.iou_threshold;
    for i in order {
        let d = &detections[i];
        let im = &images[d.image];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in im.boxes.iter().enumerate() {
            if !gt.eligible || used[d.image][g] {
                continue;
            }
            let v = iou(&d.bbox, &gt.bbox);
            if v >= thr && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            used[d.image][g] = true;
            ranked.push(true);
            continue;
        }
        let excused = im.boxes.iter().any(|gt| !gt.eligible && iou(&d.bbox, &gt.bbox) >= thr)
            || im.dont_care.iter().any(|r| iou(&d.bbox, r) >= thr);
        if excused {
            ignored += 1;
        } else {
            ranked.push(false);
        }
    }
    let tp = ranked.iter().filter(|&&t| t).count();
    Ok(Some(ClassResult {
        ap: average_precision(&ranked, num_gt, config.ap_mode),
        ar: tp as f64 / num_gt as f64,
        num_gt,
        true_positives: tp,
        false_positives: ranked.len() - tp,
        ignored,
    }))
}

pub const DEFAULT_CLASSES: [&str; 3] = ["Car", "Pedestrian", "Cyclist"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassRow {
    pub class: String,
    pub difficulty: String,
    /// Absent when the class has no eligible groundtruth at this difficulty.
    pub ap: Option<f64>,
    pub ar: Option<f64>,
    pub num_gt: usize,
    pub num_det: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub difficulty: String,
    pub map: f64,
    pub mar: f64,
    /// Classes with groundtruth that enter the means.
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub iou_threshold: f64,
    pub ap_mode: ApMode,
    pub rows: Vec<ClassRow>,
    pub summary: Vec<SummaryRow>,
}

fn to_box(o: &KittiObject) -> BBox {
    BBox::from_array(o.bbox)
}

/// Evaluates KITTI-format detections against groundtruth, both keyed by image id.
/// Every detection image id must exist in the groundtruth.
pub fn evaluate_kitti(
    groundtruth: &BTreeMap<String, Vec<KittiObject>>,
    detections: &BTreeMap<String, Vec<KittiObject>>,
    classes: &[&str],
    filters: &[DifficultyFilter],
    config: &EvalConfig,
) -> Result<DetectionReport> {
    let ids: Vec<&String> = groundtruth.keys().collect();
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    if let Some(unknown) = detections.keys().find(|k| !index.contains_key(k.as_str())) {
        return Err(Error::Input(format!("detections for unknown image id `{unknown}`")));
    }
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &filter in filters {
        let (mut ap_sum, mut ar_sum, mut counted) = (0.0, 0.0, 0usize);
        for &class in classes {
            let images: Vec<ImageGroundTruth> = ids
                .iter()
                .map(|id| {
                    let objs = &groundtruth[*id];
                    ImageGroundTruth {
                        boxes: objs
                            .iter()
                            .filter(|o| o.kind == class)
                            .map(|o| GtBox {
                                bbox: to_box(o),
                                eligible: filter.admits(kitti_difficulty(o)),
                            })
                            .collect(),
                        dont_care: objs.iter().filter(|o| o.is_dont_care()).map(to_box).collect(),
                    }
                })
                .collect();
            let dets: Vec<ScoredDetection> = detections
                .iter()
                .flat_map(|(id, objs)| {
                    let image = index[id.as_str()];
                    objs.iter().filter(|o| o.kind == class).map(move |o| ScoredDetection {
                        image,
                        score: o.score.unwrap_or(1.0),
                        bbox: to_box(o),
                    })
                })
                .collect();
            let result = evaluate_class(&dets, &images, config)?;
            if let Some(r) = &result {
                ap_sum += r.ap;
                ar_sum += r.ar;
                counted += 1;
            }
            rows.push(ClassRow {
                class: class.to_string(),
                difficulty: filter.name().to_string(),
                ap: result.map(|r| r.ap),
                ar: result.map(|r| r.ar),
                num_gt: result.map_or(0, |r| r.num_gt),
                num_det: dets.len(),
            });
        }
        let denom = counted.max(1) as f64;
        summary.push(SummaryRow {
            difficulty: filter.name().to_string(),
            map: ap_sum / denom,
            mar: ar_sum / denom,
            classes: counted,
        });
    }
    Ok(DetectionReport {
        iou_threshold: config.iou_threshold,
        ap_mode: config.ap_mode,
        rows,
        summary,
    })
}

impl DetectionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Class × difficulty table of AP and AR in percent, then mAP/mAR.
    pub fn to_text(&self) -> String {
        let difficulties: Vec<&str> = self.summary.iter().map(|s| s.difficulty.as_str()).collect();
        let mut classes: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !classes.contains(&r.class.as_str()) {
                classes.push(&r.class);
            }
        }
        let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", v * 100.0));
        let mut s = format!(
            "AVERAGE PRECISION(%) & AVERAGE RECALL(%)  IoU >= {}\n",
            self.iou_threshold
        );
        let _ = write!(s, "{:<12}", "class");
        for d in &difficulties {
            let _ = write!(s, "  {:>9} {:>9}", format!("AP-{d}"), format!("AR-{d}"));
        }
        s.push('\n');
        for c in &classes {
            let _ = write!(s, "{c:<12}");
            for d in &difficulties {
                let row = self.rows.iter().find(|r| r.class == *c && r.difficulty == *d);
                let _ = write!(
                    s,
                    "  {:>9} {:>9}",
                    pct(row.and_then(|r| r.ap)),
                    pct(row.and_then(|r| r.ar))
                );
            }
            s.push('\n');
        }
        let _ = write!(s, "{:<12}", "mean");
        for sum in &self.summary {
            let _ = write!(s, "  {:>9} {:>9}", pct(Some(sum.map)), pct(Some(sum.mar)));
        }
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::kitti::Difficulty;

    fn gt(b: [f64; 4]) -> GtBox {
        GtBox {
            bbox: BBox::from_array(b),
            eligible: true,
        }
    }

    fn det(image: usize, score: f64, b: [f64; 4]) -> ScoredDetection {
        ScoredDetection {
            image,
            score,
            bbox: BBox::from_array(b),
        }
    }

    fn two_image_fixture() -> Vec<ImageGroundTruth> {
        vec![
            ImageGroundTruth {
                boxes: vec![gt([0.0, 0.0, 10.0, 10.0])],
                dont_care: vec![],
            },
            ImageGroundTruth {
                boxes: vec![gt([20.0, 20.0, 30.0, 30.0])],
                dont_care: vec![],
            },
        ]
    }

    #[test]
    fn eleven_point_fixture() {
        let dets = [
            det(0, 0.9, [0.0, 0.0, 10.0, 10.0]),
            det(0, 0.8, [50.0, 50.0, 60.0, 60.0]),
            det(1, 0.7, [20.0, 20.0, 30.0, 30.0]),
        ];
        let r = evaluate_class(&dets, &two_image_fixture(), &EvalConfig::default())
            .unwrap()
            .unwrap();
        assert_eq!(r.ap, 28.0 / 33.0);
        assert_eq!(r.ar, 1.0);
        assert_eq!((r.true_positives, r.false_positives), (2, 1));
    }

    #[test]
    fn all_point_fixture() {
        // Envelope: precision 1 up to recall 0.5, then 2/3 up to recall 1.
        assert!((average_precision(&[true, false, true], 2, ApMode::AllPoint) - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_empty() {
        let dets = [
            det(0, 1.0, [0.0, 0.0, 10.0, 10.0]),
            det(1, 1.0, [20.0, 20.0, 30.0, 30.0]),
        ];
        let r = evaluate_class(&dets, &two_image_fixture(), &EvalConfig::default())
            .unwrap()
            .unwrap();
        assert_eq!((r.ap, r.ar), (1.0, 1.0));
        let r = evaluate_class(&[], &two_image_fixture(), &EvalConfig::default())
            .unwrap()
            .unwrap();
        assert_eq!((r.ap, r.ar), (0.0, 0.0));
        assert!(
            evaluate_class(&dets, &vec![ImageGroundTruth::default(); 2], &EvalConfig::default())
                .unwrap()
                .is_none()
        );
    }

    #[test]
    fn duplicates_are_false_positives_and_dont_care_is_ignored() {
        let mut images = two_image_fixture();
        images[1].dont_care.push(BBox::new(100.0, 100.0, 120.0, 120.0));
        images[1].boxes.push(GtBox {
            bbox: BBox::new(200.0, 0.0, 210.0, 10.0),
            eligible: false,
        });
        let dets = [
            det(0, 0.9, [0.0, 0.0, 10.0, 10.0]),
            det(0, 0.8, [0.0, 0.0, 10.0, 10.0]),
            det(1, 0.7, [100.0, 100.0, 120.0, 120.0]),
            det(1, 0.6, [200.0, 0.0, 210.0, 10.0]),
        ];
        let r = evaluate_class(&dets, &images, &EvalConfig::default()).unwrap().unwrap();
        assert_eq!((r.true_positives, r.false_positives, r.ignored), (1, 1, 2));
        assert_eq!(r.num_gt, 2);
    }

    #[test]
    fn unknown_image_is_rejected() {
        assert!(evaluate_class(&[det(5, 1.0, [0.0; 4])], &two_image_fixture(), &EvalConfig::default()).is_err());
    }

    #[test]
    fn kitti_report_layout() {
        let car = |b: [f64; 4], score: Option<f64>| KittiObject {
            truncated: 0.0,
            occluded: 0,
            score,
            ..KittiObject::detection("Car", b, 1.0)
        };
        let gt = BTreeMap::from([
            ("000000".to_string(), vec![car([0.0, 0.0, 50.0, 50.0], None)]),
            ("000001".to_string(), vec![car([100.0, 100.0, 160.0, 160.0], None)]),
        ]);
        let det = BTreeMap::from([
            (
                "000000".to_string(),
                vec![
                    car([0.0, 0.0, 50.0, 50.0], Some(0.9)),
                    car([300.0, 0.0, 350.0, 50.0], Some(0.8)),
                ],
            ),
            ("000001".to_string(), vec![car([100.0, 100.0, 160.0, 160.0], Some(0.7))]),
        ]);
        let filters = Difficulty::LEVELS.map(DifficultyFilter::UpTo);
        let r = evaluate_kitti(&gt, &det, &DEFAULT_CLASSES, &filters, &EvalConfig::default()).unwrap();
        assert_eq!(r.rows.len(), 9);
        for s in &r.summary {
            assert_eq!(s.classes, 1);
            assert_eq!(s.map, 28.0 / 33.0);
            assert_eq!(s.mar, 1.0);
        }
        let text = r.to_text();
        assert!(text.contains("84.85"), "{text}");
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(json["summary"][0]["classes"], 1);
        let bad = BTreeMap::from([("nope".to_string(), vec![])]);
        assert!(evaluate_kitti(&gt, &bad, &DEFAULT_CLASSES, &filters, &EvalConfig::default()).is_err());
    }
}
