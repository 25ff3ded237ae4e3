//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use rand::Rng;
use wrin_core::detect::BBox;
use wrin_core::graph::{Mode, NetworkGraph, Op, ParamRole};
use wrin_core::Tensor;

/// Area-based IoU written from scratch (no shared helpers with the library).
pub fn oracle_iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
    let iy = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
    let inter = ix * iy;
    let area = |r: &BBox| (r.xmax - r.xmin) * (r.ymax - r.ymin);
    let union = area(a) + area(b) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Reference NMS: walk candidates by (score desc, index asc) and keep one iff
/// its IoU with every already-kept box is at most the threshold.
pub fn brute_force_nms(boxes: &[BBox], scores: &[f64], threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| oracle_iou(&boxes[i], &boxes[k]) <= threshold) {
            kept.push(i);
        }
    }
    kept
}

/// Reference matcher over the full IoU matrix.
pub fn exhaustive_match(priors: &[BBox], gts: &[BBox], threshold: f64) -> Vec<Option<usize>> {
    let m: Vec<Vec<f64>> = priors
        .iter()
        .map(|p| gts.iter().map(|g| oracle_iou(p, g)).collect())
        .collect();
    let mut out = vec![None; priors.len()];
    let mut taken = vec![false; priors.len()];
    for g in 0..gts.len() {
        // Highest IoU, then lowest prior index, among untaken priors.
        let best = (0..priors.len())
            .filter(|&p| !taken[p])
            .max_by(|&a, &b| m[a][g].partial_cmp(&m[b][g]).unwrap().then(b.cmp(&a)));
        if let Some(p) = best {
            taken[p] = true;
            out[p] = Some(g);
        }
    }
    for p in 0..priors.len() {
        if taken[p] {
            continue;
        }
        let best = (0..gts.len())
            .filter(|&g| m[p][g] >= threshold)
            .max_by(|&a, &b| m[p][a].partial_cmp(&m[p][b]).unwrap().then(b.cmp(&a)));
        out[p] = best;
    }
    out
}

pub fn random_box<R: Rng>(rng: &mut R, max_side: f64) -> BBox {
    let w = rng.random_range(0.02..max_side);
    let h = rng.random_range(0.02..max_side);
    let x = rng.random_range(0.0..1.0 - w);
    let y = rng.random_range(0.0..1.0 - h);
    BBox::new(x, y, x + w, y + h)
}

/// Horizontal pixel-influence extent of every node at its centre position.
///
/// All weights are set to one and biases, BN shifts and running means to
/// zero, so every path contributes a nonnegative amount. Each input column is
/// raised to one in turn; a node's extent is the span of columns that change
/// its value at the centre output position. `None` marks nodes whose extent
/// reaches both image borders (the oracle cannot see further).
pub fn pixel_influence_extents(graph: &mut NetworkGraph<f64>) -> Vec<Option<usize>> {
    for p in graph.params_mut() {
        let v = match p.role {
            ParamRole::ConvWeight | ParamRole::FcWeight | ParamRole::BnGamma => 1.0,
            ParamRole::ConvBias | ParamRole::FcBias | ParamRole::BnBeta => 0.0,
        };
        p.data.iter_mut().for_each(|x| *x = v);
    }
    for s in graph.running_stats_mut() {
        s.mean.iter_mut().for_each(|x| *x = 0.0);
        s.var.iter_mut().for_each(|x| *x = 1.0);
    }
    let [c, h, w] = graph.input_shape();
    let nodes = graph.nodes().len();
    let mut lo = vec![usize::MAX; nodes];
    let mut hi = vec![0usize; nodes];
    for col in 0..w {
        let x = Tensor::<f64>::from_fn([1, c, h, w], |[_, _, _, j]| if j == col { 1.0 } else { 0.0 });
        let tape = graph.forward(&x, Mode::Infer).unwrap();
        for id in 0..nodes {
            let v = tape.value(id);
            let (oh, ow) = (v.height(), v.width());
            let hit = (0..v.channels()).any(|ch| v.at([0, ch, oh / 2, ow / 2]) > 0.0);
            if hit {
                lo[id] = lo[id].min(col);
                hi[id] = hi[id].max(col);
            }
        }
    }
    (0..nodes)
        .map(|id| {
            if lo[id] == usize::MAX {
                Some(0)
            } else if lo[id] == 0 && hi[id] == w - 1 {
                None
            } else {
                Some(hi[id] - lo[id] + 1)
            }
        })
        .collect()
}

/// Ops whose receptive field spans the whole input plane.
pub fn is_global(op: &Op) -> bool {
    matches!(op, Op::GlobalAvgPool | Op::Linear { .. })
}
