//! Browser bindings: a network cost explorer, an NMS playground and a prior
//! box viewer. Every export takes and returns plain values or JSON strings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use wrin_core::cost::{analyze, effective_receptive_paths, inception_branch_macs, unit_macs_per_position};
use wrin_core::detect::{generate_priors, nms, BBox, PriorLayout};
use wrin_core::graph::{GraphBuilder, Init};
use wrin_core::{builtin_config, config::build_with_init, UnitSpec, BUILTIN_NETWORKS};

#[derive(Debug, Serialize)]
pub struct UnitCost {
    pub channels: usize,
    pub basic_macs: u64,
    pub inception_macs: u64,
    pub branch_macs: u64,
    pub ratio: f64,
    pub basic_paths: Vec<usize>,
    pub inception_paths: Vec<usize>,
}

/// Per-position cost of a basic unit against an inception unit of equal width
/// (branch widths `[w, w/2, w/2, w]`).
pub fn unit_cost(channels: usize) -> Result<UnitCost, String> {
    if channels < 2 || !channels.is_multiple_of(2) || channels > 4096 {
        return Err(format!(
            "channel count must be an even number in 2..=4096, got {channels}"
        ));
    }
    let basic = UnitSpec::basic(channels, channels, 1);
    let inc = UnitSpec::inception(channels, [channels, channels / 2, channels / 2, channels], channels, 1);
    let basic_macs = unit_macs_per_position(&basic).map_err(|e| e.to_string())?;
    let inception_macs = unit_macs_per_position(&inc).map_err(|e| e.to_string())?;
    Ok(UnitCost {
        channels,
        basic_macs,
        inception_macs,
        branch_macs: inception_branch_macs(&inc).map_err(|e| e.to_string())?,
        ratio: inception_macs as f64 / basic_macs as f64,
        basic_paths: effective_receptive_paths(&basic)
            .map_err(|e| e.to_string())?
            .into_iter()
            .collect(),
        inception_paths: effective_receptive_paths(&inc)
            .map_err(|e| e.to_string())?
            .into_iter()
            .collect(),
    })
}

#[derive(Debug, Serialize)]
pub struct NetworkSummary {
    pub name: String,
    pub params: u64,
    pub macs: u64,
    pub nodes: usize,
    pub stages: Vec<StageSummary>,
}

#[derive(Debug, Serialize)]
pub struct StageSummary {
    pub units: usize,
    pub variant: String,
    pub out_channels: usize,
}

/// Parameter and MAC totals of a built-in network at `side`×`side` input.
pub fn network_summary(name: &str, side: usize) -> Result<NetworkSummary, String> {
    if !(8..=256).contains(&side) {
        return Err(format!("input side must be in 8..=256, got {side}"));
    }
    let cfg = builtin_config(name).map_err(|e| e.to_string())?;
    let shape = [cfg.input_shape[0], side, side];
    let graph = build_with_init::<f32>(&cfg.clone().with_input(shape), Init::Zeros).map_err(|e| e.to_string())?;
    let report = analyze(&graph, shape).map_err(|e| e.to_string())?;
    Ok(NetworkSummary {
        name: name.to_string(),
        params: report.totals.params,
        macs: report.totals.macs,
        nodes: report.per_node.len(),
        stages: cfg
            .stages
            .iter()
            .map(|s| StageSummary {
                units: s.units.len(),
                variant: format!("{:?}", s.units[0].variant).to_lowercase(),
                out_channels: s.units.last().map_or(0, |u| u.out_channels),
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
    pub score: f64,
}

/// `n` overlapping boxes in the unit square, clustered around a few objects.
pub fn random_boxes(seed: u64, n: usize) -> Vec<ScoredBox> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let objects: Vec<(f64, f64, f64, f64)> = (0..rng.random_range(2..=5))
        .map(|_| {
            (
                rng.random_range(0.2..0.8),
                rng.random_range(0.2..0.8),
                rng.random_range(0.1..0.3),
                rng.random_range(0.1..0.3),
            )
        })
        .collect();
    (0..n)
        .map(|_| {
            let (cx, cy, w, h) = objects[rng.random_range(0..objects.len())];
            let b = BBox::from_center(
                cx + rng.random_range(-0.04..0.04),
                cy + rng.random_range(-0.04..0.04),
                w * rng.random_range(0.8..1.2),
                h * rng.random_range(0.8..1.2),
            )
            .clipped();
            ScoredBox {
                xmin: b.xmin,
                ymin: b.ymin,
                xmax: b.xmax,
                ymax: b.ymax,
                score: (rng.random::<f64>() * 100.0).round() / 100.0,
            }
        })
        .collect()
}

/// Indices kept by greedy NMS, in selection order.
pub fn nms_keep(boxes: &[ScoredBox], threshold: f64) -> Result<Vec<usize>, String> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(format!("threshold must be in [0, 1], got {threshold}"));
    }
    let bbs: Vec<BBox> = boxes
        .iter()
        .map(|b| BBox::new(b.xmin, b.ymin, b.xmax, b.ymax))
        .collect();
    let scores: Vec<f64> = boxes.iter().map(|b| b.score).collect();
    if scores.iter().any(|s| !s.is_finite()) {
        return Err("scores must be finite".into());
    }
    Ok(nms(&bbs, &scores, threshold))
}

/// Prior boxes of one square feature map, as `[xmin, ymin, xmax, ymax]` rows.
pub fn prior_boxes(grid: usize, scale: f64, next_scale: f64, ratios: &[f64]) -> Result<Vec<[f64; 4]>, String> {
    if !(1..=64).contains(&grid) {
        return Err(format!("grid must be in 1..=64, got {grid}"));
    }
    if !(scale > 0.0 && scale < next_scale && next_scale <= 1.0) {
        return Err("scales must satisfy 0 < scale < next_scale <= 1".into());
    }
    let layout = PriorLayout::linear(&[(grid, grid), (1, 1)], scale, next_scale, ratios);
    let per_map = layout.per_cell(0) * grid * grid;
    let priors = generate_priors(&layout).map_err(|e| e.to_string())?;
    Ok(priors[..per_map].iter().map(BBox::to_array).collect())
}

/// Node names and op kinds of a single unit graph, in build order.
pub fn unit_node_names(variant: &str, channels: usize) -> Result<Vec<String>, String> {
    let spec = match variant {
        "basic" => UnitSpec::basic(channels, channels, 1),
        "bottleneck" => UnitSpec::bottleneck(channels, (channels / 4).max(1), channels, 1),
        "inception" => UnitSpec::inception(channels, [channels, channels / 2, channels / 2, channels], channels, 1),
        other => return Err(format!("unknown unit variant `{other}`")),
    };
    let (mut b, x) = GraphBuilder::<f32>::new("unit", [channels, 1, 1], Init::Zeros);
    let out = wrin_core::blocks::add_unit(&mut b, "u", x, &spec).map_err(|e| e.to_string())?;
    b.mark_output(out);
    Ok(b.finish()
        .nodes()
        .iter()
        .skip(1)
        .map(|n| format!("{} ({})", n.name, n.op.kind()))
        .collect())
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = builtinNetworks)]
pub fn builtin_networks() -> String {
    serde_json::to_string(&BUILTIN_NETWORKS).expect("static names serialize")
}

#[wasm_bindgen(js_name = unitCost)]
pub fn unit_cost_js(channels: usize) -> Result<String, JsValue> {
    to_js(unit_cost(channels))
}

#[wasm_bindgen(js_name = networkSummary)]
pub fn network_summary_js(name: &str, side: usize) -> Result<String, JsValue> {
    to_js(network_summary(name, side))
}

#[wasm_bindgen(js_name = unitNodes)]
pub fn unit_nodes_js(variant: &str, channels: usize) -> Result<String, JsValue> {
    to_js(unit_node_names(variant, channels))
}

#[wasm_bindgen(js_name = randomBoxes)]
pub fn random_boxes_js(seed: u32, n: usize) -> String {
    serde_json::to_string(&random_boxes(seed as u64, n.min(200))).expect("boxes serialize")
}

#[wasm_bindgen(js_name = nmsKeep)]
pub fn nms_keep_js(boxes_json: &str, threshold: f64) -> Result<String, JsValue> {
    let boxes: Vec<ScoredBox> = serde_json::from_str(boxes_json).map_err(|e| JsValue::from_str(&e.to_string()))?;
    to_js(nms_keep(&boxes, threshold))
}

#[wasm_bindgen(js_name = priorBoxes)]
pub fn prior_boxes_js(grid: usize, scale: f64, next_scale: f64, ratios: &[f64]) -> Result<String, JsValue> {
    to_js(prior_boxes(grid, scale, next_scale, ratios))
}
