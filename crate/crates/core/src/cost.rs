//! Static cost analysis: exact parameter and multiply-accumulate counts,
//! receptive fields, and per-position unit cost comparisons.
//!
//! MACs are the unit throughout (one FLOP pair). Only convolutions and fully
//! connected layers contribute MACs; batch norm, ReLU, additions and pooling
//! are tallied separately as elementwise operations.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::Serialize;

use crate::blocks::{add_unit, UnitSpec, UnitVariant};
use crate::error::{Error, Result};
use crate::graph::{GraphBuilder, Init, NetworkGraph, NodeId, Op};
use crate::tensor::Element;

/// Receptive field of a node relative to some origin node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReceptiveField {
    pub rf: usize,
    /// Product of strides from the origin (the node's grid spacing in origin pixels).
    pub stride: usize,
    /// At add/concat joins, the extent of each incoming path.
    pub branches: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeCost {
    pub name: String,
    pub op: String,
    pub params: u64,
    pub macs: u64,
    pub elementwise: u64,
    pub output_shape: [usize; 3],
    pub receptive_field: usize,
    pub stride_product: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub branch_fields: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CostTotals {
    pub params: u64,
    pub macs: u64,
    pub elementwise: u64,
}

/// An inception unit measured against a basic unit of the same input width.
#[derive(Debug, Clone, Serialize)]
pub struct UnitComparison {
    pub unit: String,
    pub macs_per_position: u64,
    pub basic_macs_per_position: u64,
    pub branch_macs_per_position: u64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CostReport {
    pub network: String,
    pub input_shape: [usize; 3],
    pub per_node: Vec<NodeCost>,
    pub totals: CostTotals,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub comparisons: Vec<UnitComparison>,
}

/// Receptive fields of every node reachable from `origin`, by the recurrence
/// `rf' = rf + (k − 1)·stride`, `stride' = stride·s`.
pub fn receptive_fields_from<T: Element>(graph: &NetworkGraph<T>, origin: NodeId) -> Vec<Option<ReceptiveField>> {
    let mut out: Vec<Option<ReceptiveField>> = vec![None; graph.nodes().len()];
    out[origin] = Some(ReceptiveField {
        rf: 1,
        stride: 1,
        branches: Vec::new(),
    });
    let shapes: Vec<[usize; 3]> = graph.nodes().iter().map(|n| n.shape).collect();
    for (id, node) in graph.nodes().iter().enumerate().skip(origin + 1) {
        let ins: Vec<&ReceptiveField> = node.inputs.iter().filter_map(|&i| out[i].as_ref()).collect();
        if ins.is_empty() {
            continue;
        }
        let field = match &node.op {
            Op::Conv { geometry, .. } => {
                let r = ins[0];
                ReceptiveField {
                    rf: r.rf + (geometry.kernel - 1) * r.stride,
                    stride: r.stride * geometry.stride,
                    branches: Vec::new(),
                }
            }
            Op::Add | Op::Concat => {
                let branches: Vec<usize> = node
                    .inputs
                    .iter()
                    .filter_map(|&i| out[i].as_ref().map(|r| r.rf))
                    .collect();
                ReceptiveField {
                    rf: branches.iter().copied().max().unwrap_or(1),
                    stride: ins.iter().map(|r| r.stride).max().unwrap_or(1),
                    branches,
                }
            }
            Op::GlobalAvgPool | Op::Linear { .. } => {
                // Whole input plane.
                let r = ins[0];
                let [_, h, w] = shapes[node.inputs[0]];
                ReceptiveField {
                    rf: r.rf + (h.max(w) - 1) * r.stride,
                    stride: r.stride * h.max(w),
                    branches: Vec::new(),
                }
            }
            Op::Input | Op::BatchNorm { .. } | Op::Relu => ReceptiveField {
                branches: Vec::new(),
                ..ins[0].clone()
            },
        };
        out[id] = Some(field);
    }
    out
}

/// `(rf, effective_stride)` of a named node relative to the network input.
pub fn receptive_field<T: Element>(graph: &NetworkGraph<T>, node: &str) -> Result<(usize, usize)> {
    let id = graph.find_node(node)?;
    let fields = receptive_fields_from(graph, 0);
    let f = fields[id]
        .as_ref()
        .ok_or_else(|| Error::UnknownNode(node.to_string()))?;
    Ok((f.rf, f.stride))
}

fn node_params<T: Element>(graph: &NetworkGraph<T>, op: &Op) -> u64 {
    op.params().iter().map(|&p| graph.params()[p].data.len() as u64).sum()
}

fn node_macs(op: &Op, out: [usize; 3]) -> u64 {
    match op {
        Op::Conv { geometry, .. } => {
            (geometry.in_channels * geometry.kernel * geometry.kernel * geometry.out_channels) as u64
                * (out[1] * out[2]) as u64
        }
        Op::Linear {
            in_features,
            out_features,
            ..
        } => (*in_features * *out_features) as u64,
        _ => 0,
    }
}

fn node_elementwise(op: &Op, input: Option<[usize; 3]>, out: [usize; 3]) -> u64 {
    let elems = |s: [usize; 3]| (s[0] * s[1] * s[2]) as u64;
    match op {
        Op::BatchNorm { .. } | Op::Relu | Op::Add => elems(out),
        Op::GlobalAvgPool => input.map_or(0, elems),
        _ => 0,
    }
}

/// Exact learnable scalar count (batch-norm running statistics excluded).
pub fn count_parameters<T: Element>(graph: &NetworkGraph<T>) -> u64 {
    graph.parameter_count()
}

/// Total conv + FC MACs for one sample of the given (C, H, W).
pub fn count_macs<T: Element>(graph: &NetworkGraph<T>, input_shape: [usize; 3]) -> Result<u64> {
    let shapes = graph.infer_shapes(input_shape)?;
    Ok(graph
        .nodes()
        .iter()
        .zip(&shapes)
        .map(|(n, &s)| node_macs(&n.op, s))
        .sum())
}

/// Full per-node report for one sample of the given input shape.
pub fn analyze<T: Element>(graph: &NetworkGraph<T>, input_shape: [usize; 3]) -> Result<CostReport> {
    let shapes = graph.infer_shapes(input_shape)?;
    let fields = receptive_fields_from(graph, 0);
    let mut per_node = Vec::with_capacity(shapes.len());
    let mut totals = CostTotals::default();
    for (id, node) in graph.nodes().iter().enumerate() {
        let out = shapes[id];
        let field = fields[id].clone().unwrap_or(ReceptiveField {
            rf: 1,
            stride: 1,
            branches: vec![],
        });
        let cost = NodeCost {
            name: node.name.clone(),
            op: node.op.kind().to_string(),
            params: node_params(graph, &node.op),
            macs: node_macs(&node.op, out),
            elementwise: node_elementwise(&node.op, node.inputs.first().map(|&i| shapes[i]), out),
            output_shape: out,
            receptive_field: field.rf,
            stride_product: field.stride,
            branch_fields: field.branches,
        };
        totals.params += cost.params;
        totals.macs += cost.macs;
        totals.elementwise += cost.elementwise;
        per_node.push(cost);
    }
    let mut comparisons = Vec::new();
    for unit in graph
        .units()
        .iter()
        .filter(|u| u.spec.variant == UnitVariant::Inception)
    {
        let basic = UnitSpec::basic(unit.spec.in_channels, unit.spec.out_channels, 1);
        let macs = unit_macs_per_position(&unit.spec)?;
        let basic_macs = unit_macs_per_position(&basic)?;
        comparisons.push(UnitComparison {
            unit: unit.name.clone(),
            macs_per_position: macs,
            basic_macs_per_position: basic_macs,
            branch_macs_per_position: inception_branch_macs(&unit.spec)?,
            ratio: macs as f64 / basic_macs as f64,
        });
    }
    Ok(CostReport {
        network: graph.name().to_string(),
        input_shape,
        per_node,
        totals,
        comparisons,
    })
}

fn unit_graph(spec: &UnitSpec, hw: usize) -> Result<NetworkGraph<f32>> {
    let (mut b, x) = GraphBuilder::<f32>::new("unit", [spec.in_channels, hw, hw], Init::Zeros);
    let out = add_unit(&mut b, "unit", x, spec)?;
    b.mark_output(out);
    Ok(b.finish())
}

/// Conv MACs of a unit at stride 1 for a single spatial position.
pub fn unit_macs_per_position(spec: &UnitSpec) -> Result<u64> {
    let g = unit_graph(&spec.with_stride(1), 1)?;
    count_macs(&g, [spec.in_channels, 1, 1])
}

/// Per-position MACs of the shared 1×1 and the three branch convolutions of an
/// inception unit (projection excluded).
pub fn inception_branch_macs(spec: &UnitSpec) -> Result<u64> {
    if spec.variant != UnitVariant::Inception {
        return Err(Error::Unit("branch MACs are defined for inception units only".into()));
    }
    let g = unit_graph(&spec.with_stride(1), 1)?;
    let shapes = g.infer_shapes([spec.in_channels, 1, 1])?;
    Ok(g.nodes()
        .iter()
        .zip(&shapes)
        .filter(|(n, _)| !n.name.ends_with("/conv_proj") && !n.name.ends_with("/shortcut"))
        .map(|(n, &s)| node_macs(&n.op, s))
        .sum())
}

/// Ratio of per-position MACs, `a / b`, both at stride 1.
pub fn compare_unit_cost(a: &UnitSpec, b: &UnitSpec) -> Result<f64> {
    Ok(unit_macs_per_position(a)? as f64 / unit_macs_per_position(b)? as f64)
}

/// Receptive-field extents of the paths a unit merges.
///
/// For inception units these are the three branch extents at the concat,
/// measured on the grid of the shared 1×1 output (so the unit stride does not
/// change them). Other variants report the single extent of the whole unit
/// relative to its input.
pub fn effective_receptive_paths(spec: &UnitSpec) -> Result<BTreeSet<usize>> {
    let g = unit_graph(spec, 8)?;
    let unit = &g.units()[0];
    match (unit.branch_origin, unit.concat) {
        (Some(origin), Some(concat)) => {
            let fields = receptive_fields_from(&g, origin);
            let f = fields[concat].as_ref().expect("concat reachable from shared conv");
            Ok(f.branches.iter().copied().collect())
        }
        _ => {
            let fields = receptive_fields_from(&g, unit.input);
            let f = fields[unit.output].as_ref().expect("unit output reachable");
            Ok(BTreeSet::from([f.rf]))
        }
    }
}

fn fmt_count(v: u64) -> String {
    let s = v.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

impl CostReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table with totals and unit comparisons.
    pub fn to_text(&self) -> String {
        let name_w = self.per_node.iter().map(|n| n.name.len()).max().unwrap_or(4).max(4);
        let mut s = String::new();
        let [c, h, w] = self.input_shape;
        let _ = writeln!(s, "network: {}  input: {c}x{h}x{w}", self.network);
        let _ = writeln!(
            s,
            "{:<name_w$}  {:<16}  {:>12}  {:>15}  {:>14}  {:>5}  {:>6}",
            "node", "op", "params", "macs", "output", "rf", "stride"
        );
        for n in &self.per_node {
            let shape = format!("{}x{}x{}", n.output_shape[0], n.output_shape[1], n.output_shape[2]);
            let _ = writeln!(
                s,
                "{:<name_w$}  {:<16}  {:>12}  {:>15}  {:>14}  {:>5}  {:>6}",
                n.name,
                n.op,
                fmt_count(n.params),
                fmt_count(n.macs),
                shape,
                n.receptive_field,
                n.stride_product
            );
        }
        let _ = writeln!(
            s,
            "total params: {} ({:.2}M)  total MACs: {} ({:.1}M)  elementwise ops: {}",
            fmt_count(self.totals.params),
            self.totals.params as f64 / 1e6,
            fmt_count(self.totals.macs),
            self.totals.macs as f64 / 1e6,
            fmt_count(self.totals.elementwise)
        );
        for cmp in &self.comparisons {
            let _ = writeln!(
                s,
                "unit {}: {} MACs/position (branches {}) vs basic {} -> ratio {:.4}",
                cmp.unit,
                fmt_count(cmp.macs_per_position),
                fmt_count(cmp.branch_macs_per_position),
                fmt_count(cmp.basic_macs_per_position),
                cmp.ratio
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{build_with_init, builtin_config};

    fn params_of(name: &str) -> u64 {
        let g = build_with_init::<f32>(&builtin_config(name).unwrap(), Init::Zeros).unwrap();
        count_parameters(&g)
    }

    #[test]
    fn single_conv_with_bias() {
        let (mut b, x) = GraphBuilder::<f32>::new("c", [128, 16, 16], Init::Zeros);
        let c = b.conv("conv", x, 128, 3, 1, true).unwrap();
        b.mark_output(c);
        let g = b.finish();
        assert_eq!(count_parameters(&g), 147_584);
        assert_eq!(count_macs(&g, [128, 16, 16]).unwrap(), 37_748_736);
    }

    #[test]
    fn pointwise_projection_per_position() {
        let (mut b, x) = GraphBuilder::<f32>::new("c", [320, 1, 1], Init::Zeros);
        let c = b.conv("proj", x, 128, 1, 1, false).unwrap();
        b.mark_output(c);
        assert_eq!(count_macs(&b.finish(), [320, 1, 1]).unwrap(), 40_960);
    }

    #[test]
    fn unit_costs() {
        let basic = UnitSpec::basic(128, 128, 1);
        let inc = UnitSpec::inception(128, [128, 64, 64, 128], 128, 1);
        assert_eq!(unit_macs_per_position(&basic).unwrap(), 294_912);
        assert_eq!(inception_branch_macs(&inc).unwrap(), 237_568);
        assert_eq!(unit_macs_per_position(&inc).unwrap(), 278_528);
        assert!((compare_unit_cost(&inc, &basic).unwrap() - 278_528.0 / 294_912.0).abs() < 1e-12);
        assert_eq!(compare_unit_cost(&basic, &basic).unwrap(), 1.0);
        assert_eq!(compare_unit_cost(&UnitSpec::basic(256, 256, 1), &basic).unwrap(), 4.0);
    }

    #[test]
    fn receptive_paths() {
        let inc = UnitSpec::inception(128, [128, 64, 64, 128], 128, 1);
        assert_eq!(effective_receptive_paths(&inc).unwrap(), BTreeSet::from([1, 3, 5]));
        assert_eq!(
            effective_receptive_paths(&inc.with_stride(2)).unwrap(),
            BTreeSet::from([1, 3, 5])
        );
        assert_eq!(
            effective_receptive_paths(&UnitSpec::basic(8, 8, 1)).unwrap(),
            BTreeSet::from([5])
        );
    }

    #[test]
    fn recurrence_examples() {
        let (mut b, x) = GraphBuilder::<f32>::new("rf", [1, 16, 16], Init::Zeros);
        let a = b.conv("a", x, 1, 3, 1, false).unwrap();
        let c = b.conv("b", a, 1, 3, 1, false).unwrap();
        let p = b.conv("p", x, 1, 1, 1, false).unwrap();
        let s = b.conv("s2", x, 1, 3, 2, false).unwrap();
        let t = b.conv("s2b", s, 1, 3, 1, false).unwrap();
        b.mark_output(c);
        let _ = (p, t);
        let g = b.finish();
        assert_eq!(receptive_field(&g, "b").unwrap(), (5, 1));
        assert_eq!(receptive_field(&g, "p").unwrap(), (1, 1));
        assert_eq!(receptive_field(&g, "s2b").unwrap(), (7, 2));
        assert!(receptive_field(&g, "nope").is_err());
    }

    #[test]
    fn table_parameter_counts() {
        let wrn = params_of("wrn-16-4");
        let inc = params_of("wr-inception");
        let l2 = params_of("wr-inception-l2");
        let pre = params_of("preact-resnet-164");
        assert!((2_744_000..=2_856_000).contains(&wrn), "{wrn}");
        assert!((inc as f64 / 2.7e6 - 1.0).abs() <= 0.02, "{inc}");
        assert!((l2 as f64 / 4.8e6 - 1.0).abs() <= 0.02, "{l2}");
        assert!((pre as f64 / 1.7e6 - 1.0).abs() <= 0.05, "{pre}");
    }

    #[test]
    fn report_totals_are_sums() {
        let g = build_with_init::<f32>(&builtin_config("wr-inception").unwrap(), Init::Zeros).unwrap();
        let r = analyze(&g, [3, 32, 32]).unwrap();
        assert_eq!(r.totals.params, r.per_node.iter().map(|n| n.params).sum::<u64>());
        assert_eq!(r.totals.macs, r.per_node.iter().map(|n| n.macs).sum::<u64>());
        assert_eq!(r.totals.params, count_parameters(&g));
        assert_eq!(r.comparisons.len(), 1);
        assert_eq!(r.comparisons[0].macs_per_position, 278_528);
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(json["totals"]["params"].as_u64().unwrap(), r.totals.params);
        assert!(r.to_text().contains("total params"));
    }
}
