//! Central finite-difference gradient checking.
//!
//! Analytic gradients from the reverse pass are compared against
//! `(L(x + h) − L(x − h)) / 2h` computed from forward evaluations only. A
//! coordinate is skipped when a perturbation flips the sign of any ReLU input
//! (the loss is not differentiable across that kink); skips are counted and
//! bounded.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::blocks::{add_unit, UnitSpec};
use crate::config::{build_network, NetworkConfig};
use crate::error::Result;
use crate::graph::{GraphBuilder, Init, Mode, NetworkGraph, NodeId, Op, ParamRole, Tape};
use crate::layers::softmax_cross_entropy;
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;
/// At most this fraction of coordinates may be skipped at ReLU kinks.
pub const MAX_SKIP_FRACTION: f64 = 0.1;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_error(a, n))
        .fold(0.0, f64::max)
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut v = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = v[i];
            v[i] = orig + h;
            let up = f(&v);
            v[i] = orig - h;
            let down = f(&v);
            v[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Scalar objective placed on the graph outputs.
#[derive(Debug, Clone)]
pub enum Objective {
    /// `Σ r·y` with a fixed random tensor per output.
    Projection(Vec<Tensor<f64>>),
    /// Mean softmax cross-entropy of the first output.
    CrossEntropy(Vec<usize>),
}

impl Objective {
    fn loss_and_seeds(&self, graph: &NetworkGraph<f64>, tape: &Tape<f64>) -> Result<(f64, Vec<(NodeId, Tensor<f64>)>)> {
        match self {
            Objective::Projection(rs) => {
                let mut loss = 0.0;
                let mut seeds = Vec::new();
                for (&out, r) in graph.outputs().iter().zip(rs) {
                    let y = tape.value(out);
                    loss += y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>();
                    seeds.push((out, r.clone()));
                }
                Ok((loss, seeds))
            }
            Objective::CrossEntropy(labels) => {
                let out = graph.outputs()[0];
                let y = tape.value(out);
                let (loss, g) = softmax_cross_entropy(y.data(), y.sample_len(), labels)?;
                Ok((loss, vec![(out, Tensor::from_vec(y.shape(), g)?)]))
            }
        }
    }
}

fn relu_pattern(graph: &NetworkGraph<f64>, tape: &Tape<f64>) -> Vec<bool> {
    let mut bits = Vec::new();
    for node in graph.nodes() {
        if node.op == Op::Relu {
            bits.extend(tape.value(node.inputs[0]).data().iter().map(|&v| v > 0.0));
        }
    }
    bits
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct GraphCheck {
    pub max_rel_error: f64,
    pub coordinates: usize,
    pub skipped: usize,
}

impl GraphCheck {
    fn merge(&mut self, other: &GraphCheck) {
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.coordinates += other.coordinates;
        self.skipped += other.skipped;
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    pub step: f64,
    /// Coordinates sampled per parameter tensor (and from the input).
    pub max_coords: usize,
    /// Scales analytic gradients by `1 + 1e-3`; a negative control.
    pub corrupt: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            step: STEP,
            max_coords: 24,
            corrupt: false,
        }
    }
}

/// Compares reverse-mode gradients of `objective` (train-mode forward) with
/// central differences on sampled parameter and input coordinates.
pub fn check_graph(
    graph: &mut NetworkGraph<f64>,
    input: &Tensor<f64>,
    objective: &Objective,
    opts: &CheckOptions,
    rng: &mut ChaCha8Rng,
) -> Result<GraphCheck> {
    let tape = graph.forward(input, Mode::Train)?;
    let base_pattern = relu_pattern(graph, &tape);
    let (_, seeds) = objective.loss_and_seeds(graph, &tape)?;
    let trainable = vec![true; graph.params().len()];
    let grads = graph.backward(&tape, seeds, &trainable)?;
    drop(tape);
    let scale = if opts.corrupt { 1.0 + 1e-3 } else { 1.0 };
    let h = opts.step;
    let mut result = GraphCheck::default();

    let eval = |g: &NetworkGraph<f64>, x: &Tensor<f64>| -> Result<(f64, bool)> {
        let tape = g.forward(x, Mode::Train)?;
        let kink = relu_pattern(g, &tape) != base_pattern;
        Ok((objective.loss_and_seeds(g, &tape)?.0, kink))
    };
    let record = |analytic: f64, up: (f64, bool), down: (f64, bool), result: &mut GraphCheck| {
        result.coordinates += 1;
        if up.1 || down.1 {
            result.skipped += 1;
            return;
        }
        let numeric = (up.0 - down.0) / (2.0 * h);
        result.max_rel_error = result.max_rel_error.max(rel_error(analytic * scale, numeric));
    };

    for p in 0..graph.params().len() {
        let len = graph.params()[p].data.len();
        let analytic = grads.params[p].clone().expect("all parameters trainable");
        for j in sample(rng, len, len.min(opts.max_coords)) {
            let orig = graph.params()[p].data[j];
            graph.params_mut()[p].data[j] = orig + h;
            let up = eval(graph, input)?;
            graph.params_mut()[p].data[j] = orig - h;
            let down = eval(graph, input)?;
            graph.params_mut()[p].data[j] = orig;
            record(analytic[j], up, down, &mut result);
        }
    }
    let dx = grads.input.expect("input gradient");
    let mut x = input.clone();
    for j in sample(rng, x.len(), x.len().min(opts.max_coords)) {
        let orig = x.data()[j];
        x.data_mut()[j] = orig + h;
        let up = eval(graph, &x)?;
        x.data_mut()[j] = orig - h;
        let down = eval(graph, &x)?;
        x.data_mut()[j] = orig;
        record(dx.data()[j], up, down, &mut result);
    }
    Ok(result)
}

/// Gives batch-norm layers non-trivial affine parameters.
pub fn randomize_batch_norm(graph: &mut NetworkGraph<f64>, rng: &mut ChaCha8Rng) {
    for p in graph.params_mut() {
        match p.role {
            ParamRole::BnGamma => p.data.iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5)),
            ParamRole::BnBeta | ParamRole::ConvBias | ParamRole::FcBias => {
                p.data.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5))
            }
            _ => {}
        }
    }
}

fn random_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn projection_for(graph: &NetworkGraph<f64>, batch: usize, rng: &mut ChaCha8Rng) -> Objective {
    Objective::Projection(
        graph
            .outputs()
            .iter()
            .map(|&o| {
                let [c, h, w] = graph.node(o).shape;
                random_tensor([batch, c, h, w], rng)
            })
            .collect(),
    )
}

/// Names of the items run by [`run_suite`].
pub const SUITE_ITEMS: [&str; 12] = [
    "conv2d",
    "batch_norm",
    "relu",
    "global_avg_pool",
    "fully_connected",
    "softmax_cross_entropy",
    "basic_unit",
    "basic_unit_strided",
    "bottleneck_unit",
    "inception_unit",
    "inception_unit_strided",
    "miniature_network",
];

fn single_layer(item: &str, seed: u64, rng: &mut ChaCha8Rng) -> Result<(NetworkGraph<f64>, Tensor<f64>, Objective)> {
    let batch = 2;
    let unit = |spec: UnitSpec, rng: &mut ChaCha8Rng| -> Result<_> {
        let hw = rng.random_range(4..=6);
        let (mut b, x) = GraphBuilder::<f64>::new(item, [spec.in_channels, hw, hw], Init::Msr(seed));
        let out = add_unit(&mut b, "unit", x, &spec)?;
        b.mark_output(out);
        let g = b.finish();
        let input = random_tensor([batch, spec.in_channels, hw, hw], rng);
        Ok((g, input))
    };
    let (graph, input) = match item {
        "conv2d" => {
            let stride = 1 + (seed % 2) as usize;
            let (mut b, x) = GraphBuilder::new(item, [3, 6, 6], Init::Msr(seed));
            let c = b.conv("conv", x, 4, 3, stride, true)?;
            b.mark_output(c);
            (b.finish(), random_tensor([batch, 3, 6, 6], rng))
        }
        "batch_norm" => {
            let (mut b, x) = GraphBuilder::new(item, [3, 3, 3], Init::Msr(seed));
            let n = b.batch_norm("bn", x)?;
            b.mark_output(n);
            (b.finish(), random_tensor([batch, 3, 3, 3], rng))
        }
        "relu" => {
            let (mut b, x) = GraphBuilder::new(item, [2, 3, 3], Init::Msr(seed));
            let r = b.relu("relu", x)?;
            b.mark_output(r);
            let input = Tensor::from_fn([batch, 2, 3, 3], |_| {
                let m: f64 = rng.random_range(1e-3..1.0);
                if rng.random_bool(0.5) {
                    m
                } else {
                    -m
                }
            });
            (b.finish(), input)
        }
        "global_avg_pool" => {
            let (mut b, x) = GraphBuilder::new(item, [3, 4, 5], Init::Msr(seed));
            let p = b.global_avg_pool("pool", x)?;
            b.mark_output(p);
            (b.finish(), random_tensor([batch, 3, 4, 5], rng))
        }
        "fully_connected" => {
            let (mut b, x) = GraphBuilder::new(item, [2, 2, 2], Init::Msr(seed));
            let f = b.linear("fc", x, 3)?;
            b.mark_output(f);
            (b.finish(), random_tensor([batch, 2, 2, 2], rng))
        }
        "softmax_cross_entropy" => {
            let (mut b, x) = GraphBuilder::new(item, [5, 1, 1], Init::Msr(seed));
            b.mark_output(x);
            let labels = (0..batch).map(|_| rng.random_range(0..5)).collect();
            let input = random_tensor([batch, 5, 1, 1], rng).map(|v| 3.0 * v);
            return Ok((b.finish(), input, Objective::CrossEntropy(labels)));
        }
        "basic_unit" => unit(UnitSpec::basic(3, 3, 1), rng)?,
        "basic_unit_strided" => unit(UnitSpec::basic(2, 4, 2), rng)?,
        "bottleneck_unit" => unit(UnitSpec::bottleneck(4, 2, 4, 1), rng)?,
        "inception_unit" => unit(UnitSpec::inception(4, [3, 2, 2, 3], 4, 1), rng)?,
        "inception_unit_strided" => unit(UnitSpec::inception(3, [3, 2, 2, 2], 5, 2), rng)?,
        "miniature_network" => {
            let cfg = NetworkConfig::miniature();
            let g = build_network::<f64>(&cfg, seed)?;
            let input = random_tensor([batch, 3, 8, 8], rng);
            let labels = (0..batch).map(|_| rng.random_range(0..cfg.num_classes)).collect();
            return Ok((g, input, Objective::CrossEntropy(labels)));
        }
        other => {
            return Err(crate::error::Error::Input(format!(
                "unknown gradient check item `{other}`"
            )))
        }
    };
    let objective = projection_for(&graph, batch, rng);
    Ok((graph, input, objective))
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckItem {
    pub name: String,
    pub seeds: usize,
    pub max_rel_error: f64,
    pub coordinates: usize,
    pub skipped: usize,
    pub passed: bool,
}

impl CheckItem {
    fn from_check(name: &str, seeds: usize, c: &GraphCheck) -> Self {
        let skip_ok = (c.skipped as f64) <= MAX_SKIP_FRACTION * c.coordinates as f64;
        CheckItem {
            name: name.to_string(),
            seeds,
            max_rel_error: c.max_rel_error,
            coordinates: c.coordinates,
            skipped: c.skipped,
            passed: c.max_rel_error < TOLERANCE && skip_ok && c.coordinates > c.skipped,
        }
    }
}

/// One suite item over `seeds` consecutive seeds starting at `first_seed`.
pub fn run_item(item: &str, first_seed: u64, seeds: usize, opts: &CheckOptions) -> Result<CheckItem> {
    let mut total = GraphCheck::default();
    for s in 0..seeds as u64 {
        let seed = first_seed + s;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0005_eed0_f9ad);
        let (mut graph, input, objective) = single_layer(item, seed, &mut rng)?;
        randomize_batch_norm(&mut graph, &mut rng);
        let c = check_graph(&mut graph, &input, &objective, opts, &mut rng)?;
        total.merge(&c);
    }
    Ok(CheckItem::from_check(item, seeds, &total))
}

/// Every layer, every unit variant and the miniature network.
pub fn run_suite(first_seed: u64, seeds: usize, opts: &CheckOptions) -> Result<Vec<CheckItem>> {
    SUITE_ITEMS
        .iter()
        .map(|item| run_item(item, first_seed, seeds, opts))
        .collect()
}

/// Checks a full configuration (typically a built-in shrunk to 8×8 inputs).
pub fn check_config(config: &NetworkConfig, seed: u64, opts: &CheckOptions) -> Result<CheckItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graph = build_network::<f64>(config, seed)?;
    randomize_batch_norm(&mut graph, &mut rng);
    let [c, h, w] = config.input_shape;
    let input = random_tensor([2, c, h, w], &mut rng);
    let labels = (0..2).map(|_| rng.random_range(0..config.num_classes)).collect();
    let res = check_graph(&mut graph, &input, &Objective::CrossEntropy(labels), opts, &mut rng)?;
    Ok(CheckItem::from_check(&config.name, 1, &res))
}
