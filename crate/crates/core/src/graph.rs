//! Layer graph with a parameter registry, forward tape and reverse pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::UnitSpec;
use crate::error::{Error, Result};
use crate::layers::{
    batch_norm_backward, batch_norm_infer, batch_norm_infer_backward, batch_norm_train, conv2d_backward,
    conv2d_forward, fully_connected_backward, fully_connected_forward, global_avg_pool_backward,
    global_avg_pool_forward, msr_std, normal_fill, relu_backward, relu_forward, softmax_cross_entropy, BatchNormCache,
    ConvGeometry,
};
use crate::tensor::{add_elementwise, concat_channels, Element, Tensor};

pub type NodeId = usize;
pub type ParamId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input,
    Conv {
        geometry: ConvGeometry,
        weight: ParamId,
        bias: Option<ParamId>,
    },
    BatchNorm {
        gamma: ParamId,
        beta: ParamId,
        stats: usize,
    },
    Relu,
    Add,
    Concat,
    GlobalAvgPool,
    Linear {
        in_features: usize,
        out_features: usize,
        weight: ParamId,
        bias: ParamId,
    },
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Conv { .. } => "conv",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Relu => "relu",
            Op::Add => "add",
            Op::Concat => "concat",
            Op::GlobalAvgPool => "global_avg_pool",
            Op::Linear { .. } => "fully_connected",
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        match *self {
            Op::Conv { weight, bias, .. } => std::iter::once(weight).chain(bias).collect(),
            Op::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
            Op::Linear { weight, bias, .. } => vec![weight, bias],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<NodeId>,
    /// Per-sample (C, H, W) at the build-time input size.
    pub shape: [usize; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    ConvWeight,
    ConvBias,
    BnGamma,
    BnBeta,
    FcWeight,
    FcBias,
}

/// A learnable tensor with its natural dimensions.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub role: ParamRole,
    pub data: Vec<T>,
}

/// Batch-norm running statistics (not learnable).
#[derive(Debug, Clone)]
pub struct RunningStats<T> {
    pub name: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub epsilon: T,
    pub momentum: T,
}

/// Where a residual unit sits in the graph.
#[derive(Debug, Clone)]
pub struct UnitRecord {
    pub name: String,
    pub spec: UnitSpec,
    pub input: NodeId,
    pub output: NodeId,
    pub shortcut_projection: Option<NodeId>,
    /// Inception units: the shared 1×1 conv the branches start from.
    pub branch_origin: Option<NodeId>,
    pub concat: Option<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// MSR normal weights from a seed; BN gamma 1, beta 0, biases 0.
    Msr(u64),
    /// Every weight zero (shape-only analysis).
    Zeros,
}

#[derive(Debug, Clone)]
pub struct NetworkGraph<T> {
    pub(crate) name: String,
    pub(crate) nodes: Vec<Node>,
    pub(crate) params: Vec<Param<T>>,
    pub(crate) stats: Vec<RunningStats<T>>,
    pub(crate) outputs: Vec<NodeId>,
    pub(crate) units: Vec<UnitRecord>,
    pub(crate) frozen: Vec<bool>,
}

/// Activations (and batch-norm caches) recorded by a forward pass.
#[derive(Debug)]
pub struct Tape<T> {
    pub mode: Mode,
    values: Vec<Tensor<T>>,
    bn: Vec<Option<BatchNormCache<T>>>,
}

impl<T: Element> Tape<T> {
    pub fn value(&self, node: NodeId) -> &Tensor<T> {
        &self.values[node]
    }
}

#[derive(Debug, Clone)]
pub struct Gradients<T> {
    /// Indexed like the parameter registry; `None` for frozen parameters.
    pub params: Vec<Option<Vec<T>>>,
    pub input: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct ExecOutput<T> {
    pub logits: Tensor<T>,
    pub loss: Option<T>,
    pub grads: Option<Gradients<T>>,
}

impl<T: Element> NetworkGraph<T> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn find_node(&self, name: &str) -> Result<NodeId> {
        self.nodes
            .iter()
            .position(|n| n.name == name)
            .ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats<T>] {
        &self.stats
    }

    pub fn running_stats_mut(&mut self) -> &mut [RunningStats<T>] {
        &mut self.stats
    }

    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    pub fn units(&self) -> &[UnitRecord] {
        &self.units
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.nodes[0].shape
    }

    pub fn frozen(&self) -> &[bool] {
        &self.frozen
    }

    /// Freezes every parameter whose name starts with one of `prefixes`;
    /// all others become trainable. Returns the number frozen.
    pub fn set_frozen_prefixes<S: AsRef<str>>(&mut self, prefixes: &[S]) -> usize {
        for (flag, p) in self.frozen.iter_mut().zip(&self.params) {
            *flag = prefixes.iter().any(|pre| p.name.starts_with(pre.as_ref()));
        }
        self.frozen.iter().filter(|&&f| f).count()
    }

    /// Same graph with parameters and statistics converted to another precision.
    pub fn cast<U: Element>(&self) -> NetworkGraph<U> {
        NetworkGraph {
            name: self.name.clone(),
            nodes: self.nodes.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    dims: p.dims.clone(),
                    role: p.role,
                    data: p.data.iter().map(|v| U::of(v.as_f64())).collect(),
                })
                .collect(),
            stats: self
                .stats
                .iter()
                .map(|s| RunningStats {
                    name: s.name.clone(),
                    mean: s.mean.iter().map(|v| U::of(v.as_f64())).collect(),
                    var: s.var.iter().map(|v| U::of(v.as_f64())).collect(),
                    epsilon: U::of(s.epsilon.as_f64()),
                    momentum: U::of(s.momentum.as_f64()),
                })
                .collect(),
            outputs: self.outputs.clone(),
            units: self.units.clone(),
            frozen: self.frozen.clone(),
        }
    }

    /// Per-node (C, H, W) for an arbitrary input size.
    pub fn infer_shapes(&self, input: [usize; 3]) -> Result<Vec<[usize; 3]>> {
        let mut shapes: Vec<[usize; 3]> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let ins: Vec<[usize; 3]> = node.inputs.iter().map(|&i| shapes[i]).collect();
            let shape = node_shape(&node.name, &node.op, &ins, input)?;
            shapes.push(shape);
        }
        Ok(shapes)
    }

    /// Evaluates every node. Train mode uses batch statistics but does not
    /// touch the running estimates; see [`NetworkGraph::commit_running_stats`].
    pub fn forward(&self, input: &Tensor<T>, mode: Mode) -> Result<Tape<T>> {
        let [c, h, w] = self.input_shape();
        if input.channels() != c || (input.height(), input.width()) != (h, w) {
            return Err(Error::Shape(format!(
                "network expects (N, {c}, {h}, {w}) input, got {:?}",
                input.shape()
            )));
        }
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        let mut bn = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let x = |i: usize| &values[node.inputs[i]];
            let mut cache = None;
            let out = match &node.op {
                Op::Input => input.clone(),
                Op::Conv { geometry, weight, bias } => conv2d_forward(
                    x(0),
                    &self.params[*weight].data,
                    bias.map(|b| self.params[b].data.as_slice()),
                    geometry,
                )?,
                Op::BatchNorm { gamma, beta, stats } => {
                    let (g, b, s) = (&self.params[*gamma].data, &self.params[*beta].data, &self.stats[*stats]);
                    match mode {
                        Mode::Train => {
                            let (y, c) = batch_norm_train(x(0), g, b, s.epsilon)?;
                            cache = Some(c);
                            y
                        }
                        Mode::Infer => batch_norm_infer(x(0), g, b, &s.mean, &s.var, s.epsilon)?,
                    }
                }
                Op::Relu => relu_forward(x(0)),
                Op::Add => add_elementwise(x(0), x(1))?,
                Op::Concat => {
                    let parts: Vec<&Tensor<T>> = node.inputs.iter().map(|&i| &values[i]).collect();
                    concat_channels(&parts)?
                }
                Op::GlobalAvgPool => global_avg_pool_forward(x(0))?,
                Op::Linear { weight, bias, .. } => {
                    fully_connected_forward(x(0), &self.params[*weight].data, &self.params[*bias].data)?
                }
            };
            if out.first_non_finite().is_some() {
                return Err(Error::NonFinite {
                    node: node.name.clone(),
                });
            }
            values.push(out);
            bn.push(cache);
        }
        Ok(Tape { mode, values, bn })
    }

    /// Folds the batch statistics of a train-mode tape into the running estimates.
    pub fn commit_running_stats(&mut self, tape: &Tape<T>) {
        for (node, cache) in self.nodes.iter().zip(&tape.bn) {
            if let (Op::BatchNorm { stats, .. }, Some(cache)) = (&node.op, cache) {
                let s = &mut self.stats[*stats];
                let keep = T::one() - s.momentum;
                for c in 0..s.mean.len() {
                    s.mean[c] = s.momentum * s.mean[c] + keep * cache.mean[c];
                    s.var[c] = s.momentum * s.var[c] + keep * cache.var[c];
                }
            }
        }
    }

    /// Reverse pass from upstream gradients on any nodes (usually outputs).
    ///
    /// Parameter gradients are produced only where `trainable[p]` is set.
    pub fn backward(
        &self,
        tape: &Tape<T>,
        seeds: Vec<(NodeId, Tensor<T>)>,
        trainable: &[bool],
    ) -> Result<Gradients<T>> {
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        for (id, g) in seeds {
            accumulate(&mut grads[id], g)?;
        }
        let mut pgrads: Vec<Option<Vec<T>>> = vec![None; self.params.len()];
        let mut input_grad = None;
        let want = |p: ParamId| trainable.get(p).copied().unwrap_or(false);
        for (id, node) in self.nodes.iter().enumerate().rev() {
            let Some(dy) = grads[id].take() else { continue };
            let x = |i: usize| &tape.values[node.inputs[i]];
            match &node.op {
                Op::Input => input_grad = Some(dy),
                Op::Conv { geometry, weight, bias } => {
                    let want_b = bias.is_some_and(want);
                    let g = conv2d_backward(x(0), &self.params[*weight].data, geometry, &dy, want(*weight), want_b)?;
                    add_param_grad(&mut pgrads[*weight], g.weights);
                    if let Some(b) = bias {
                        add_param_grad(&mut pgrads[*b], g.bias);
                    }
                    accumulate(&mut grads[node.inputs[0]], g.input)?;
                }
                Op::BatchNorm { gamma, beta, stats } => {
                    let gm = &self.params[*gamma].data;
                    let g = match &tape.bn[id] {
                        Some(cache) => batch_norm_backward(cache, gm, &dy)?,
                        None => {
                            let s = &self.stats[*stats];
                            batch_norm_infer_backward(x(0), gm, &s.mean, &s.var, s.epsilon, &dy)?
                        }
                    };
                    if want(*gamma) {
                        add_param_grad(&mut pgrads[*gamma], Some(g.gamma));
                    }
                    if want(*beta) {
                        add_param_grad(&mut pgrads[*beta], Some(g.beta));
                    }
                    accumulate(&mut grads[node.inputs[0]], g.input)?;
                }
                Op::Relu => {
                    let g = relu_backward(x(0), &dy)?;
                    accumulate(&mut grads[node.inputs[0]], g)?;
                }
                Op::Add => {
                    accumulate(&mut grads[node.inputs[1]], dy.clone())?;
                    accumulate(&mut grads[node.inputs[0]], dy)?;
                }
                Op::Concat => {
                    let mut start = 0;
                    for &i in &node.inputs {
                        let c = tape.values[i].channels();
                        accumulate(&mut grads[i], dy.slice_channels(start, c)?)?;
                        start += c;
                    }
                }
                Op::GlobalAvgPool => {
                    let g = global_avg_pool_backward(x(0).shape(), &dy)?;
                    accumulate(&mut grads[node.inputs[0]], g)?;
                }
                Op::Linear { weight, bias, .. } => {
                    let wants = want(*weight) || want(*bias);
                    let g = fully_connected_backward(x(0), &self.params[*weight].data, &dy, wants)?;
                    if want(*weight) {
                        add_param_grad(&mut pgrads[*weight], g.weights);
                    }
                    if want(*bias) {
                        add_param_grad(&mut pgrads[*bias], g.bias);
                    }
                    accumulate(&mut grads[node.inputs[0]], g.input)?;
                }
            }
        }
        Ok(Gradients {
            params: pgrads,
            input: input_grad,
        })
    }

    /// Classifier evaluation: logits, and in train mode the mean softmax
    /// cross-entropy with gradients for every non-frozen parameter. Train
    /// mode also updates the batch-norm running statistics.
    pub fn execute(&mut self, input: &Tensor<T>, mode: Mode, labels: Option<&[usize]>) -> Result<ExecOutput<T>> {
        if mode == Mode::Train && labels.is_none() {
            return Err(Error::Input("train mode requires labels".into()));
        }
        let tape = self.forward(input, mode)?;
        let out_id = self.outputs[0];
        let logits = tape.value(out_id).clone();
        let k = logits.sample_len();
        let Some(labels) = labels else {
            return Ok(ExecOutput {
                logits,
                loss: None,
                grads: None,
            });
        };
        if labels.len() != logits.batch() {
            return Err(Error::Shape(format!(
                "{} labels for a batch of {}",
                labels.len(),
                logits.batch()
            )));
        }
        let (loss, dlogits) = softmax_cross_entropy(logits.data(), k, labels)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                node: "loss".to_string(),
            });
        }
        let grads = if mode == Mode::Train {
            let trainable: Vec<bool> = self.frozen.iter().map(|f| !f).collect();
            let seed = Tensor::from_vec(logits.shape(), dlogits)?;
            let g = self.backward(&tape, vec![(out_id, seed)], &trainable)?;
            self.commit_running_stats(&tape);
            Some(g)
        } else {
            None
        };
        Ok(ExecOutput {
            logits,
            loss: Some(loss),
            grads,
        })
    }

    /// Class scores only, in inference mode.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = self.forward(input, Mode::Infer)?;
        Ok(tape.values[self.outputs[0]].clone())
    }

    /// Learnable scalar count (running statistics excluded).
    pub fn parameter_count(&self) -> u64 {
        self.params.iter().map(|p| p.data.len() as u64).sum()
    }
}

fn accumulate<T: Element>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<()> {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            if acc.shape() != g.shape() {
                return Err(Error::Shape("gradient accumulation shape mismatch".into()));
            }
            acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a = *a + b);
        }
    }
    Ok(())
}

fn add_param_grad<T: Element>(slot: &mut Option<Vec<T>>, g: Option<Vec<T>>) {
    let Some(g) = g else { return };
    match slot {
        None => *slot = Some(g),
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
    }
}

fn node_shape(name: &str, op: &Op, ins: &[[usize; 3]], input: [usize; 3]) -> Result<[usize; 3]> {
    let bad = |msg: String| Error::Shape(format!("node `{name}`: {msg}"));
    Ok(match op {
        Op::Input => input,
        Op::Conv { geometry, .. } => {
            let [c, h, w] = ins[0];
            if c != geometry.in_channels {
                return Err(bad(format!(
                    "conv expects {} channels, got {}",
                    geometry.in_channels, c
                )));
            }
            let (ho, wo) = geometry.output_hw(h, w).map_err(|e| bad(e.to_string()))?;
            [geometry.out_channels, ho, wo]
        }
        Op::BatchNorm { .. } | Op::Relu => ins[0],
        Op::Add => {
            if ins[0] != ins[1] {
                return Err(bad(format!("add of {:?} and {:?}", ins[0], ins[1])));
            }
            ins[0]
        }
        Op::Concat => {
            let [_, h, w] = ins[0];
            if let Some(i) = ins.iter().position(|s| (s[1], s[2]) != (h, w)) {
                return Err(bad(format!("concat input {i} has spatial size {:?}", ins[i])));
            }
            [ins.iter().map(|s| s[0]).sum(), h, w]
        }
        Op::GlobalAvgPool => [ins[0][0], 1, 1],
        Op::Linear {
            in_features,
            out_features,
            ..
        } => {
            let flat: usize = ins[0].iter().product();
            if flat != *in_features {
                return Err(bad(format!("fully connected expects {in_features} inputs, got {flat}")));
            }
            [*out_features, 1, 1]
        }
    })
}

/// Incremental graph construction with shape checking and seeded initialization.
pub struct GraphBuilder<T> {
    graph: NetworkGraph<T>,
    rng: Option<ChaCha8Rng>,
    input_shape: [usize; 3],
}

impl<T: Element> GraphBuilder<T> {
    /// Starts a graph whose node 0 is the input.
    pub fn new(name: impl Into<String>, input_shape: [usize; 3], init: Init) -> (Self, NodeId) {
        let rng = match init {
            Init::Msr(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
            Init::Zeros => None,
        };
        let graph = NetworkGraph {
            name: name.into(),
            nodes: vec![Node {
                name: "input".into(),
                op: Op::Input,
                inputs: vec![],
                shape: input_shape,
            }],
            params: Vec::new(),
            stats: Vec::new(),
            outputs: Vec::new(),
            units: Vec::new(),
            frozen: Vec::new(),
        };
        (
            GraphBuilder {
                graph,
                rng,
                input_shape,
            },
            0,
        )
    }

    pub fn shape(&self, node: NodeId) -> [usize; 3] {
        self.graph.nodes[node].shape
    }

    pub fn find(&self, name: &str) -> Result<NodeId> {
        self.graph.find_node(name)
    }

    fn push(&mut self, name: String, op: Op, inputs: Vec<NodeId>) -> Result<NodeId> {
        if self.graph.nodes.iter().any(|n| n.name == name) {
            return Err(Error::Shape(format!("duplicate node name `{name}`")));
        }
        let ins: Vec<[usize; 3]> = inputs.iter().map(|&i| self.graph.nodes[i].shape).collect();
        let shape = node_shape(&name, &op, &ins, self.input_shape)?;
        self.graph.nodes.push(Node {
            name,
            op,
            inputs,
            shape,
        });
        Ok(self.graph.nodes.len() - 1)
    }

    fn add_param(&mut self, name: String, dims: Vec<usize>, role: ParamRole, fan_in: Option<usize>) -> ParamId {
        let len = dims.iter().product();
        let fill = match role {
            ParamRole::BnGamma => T::one(),
            _ => T::zero(),
        };
        let mut data = vec![fill; len];
        if let (Some(fan_in), Some(rng)) = (fan_in, self.rng.as_mut()) {
            normal_fill(&mut data, msr_std(fan_in), rng);
        }
        self.graph.params.push(Param { name, dims, role, data });
        self.graph.frozen.push(false);
        self.graph.params.len() - 1
    }

    /// Square convolution with "same" padding (k / 2).
    pub fn conv(
        &mut self,
        name: &str,
        x: NodeId,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
    ) -> Result<NodeId> {
        let in_channels = self.shape(x)[0];
        let geometry = ConvGeometry::same(in_channels, out_channels, kernel, stride);
        // Validate before registering parameters.
        let [_, h, w] = self.shape(x);
        geometry
            .output_hw(h, w)
            .map_err(|e| Error::Shape(format!("node `{name}`: {e}")))?;
        let weight = self.add_param(
            format!("{name}/weight"),
            vec![out_channels, in_channels, kernel, kernel],
            ParamRole::ConvWeight,
            Some(geometry.patch_len()),
        );
        let bias = bias.then(|| self.add_param(format!("{name}/bias"), vec![out_channels], ParamRole::ConvBias, None));
        self.push(name.to_string(), Op::Conv { geometry, weight, bias }, vec![x])
    }

    pub fn batch_norm(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        let c = self.shape(x)[0];
        let gamma = self.add_param(format!("{name}/gamma"), vec![c], ParamRole::BnGamma, None);
        let beta = self.add_param(format!("{name}/beta"), vec![c], ParamRole::BnBeta, None);
        self.graph.stats.push(RunningStats {
            name: name.to_string(),
            mean: vec![T::zero(); c],
            var: vec![T::one(); c],
            epsilon: T::of(1e-5),
            momentum: T::of(0.9),
        });
        let stats = self.graph.stats.len() - 1;
        self.push(name.to_string(), Op::BatchNorm { gamma, beta, stats }, vec![x])
    }

    pub fn relu(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        self.push(name.to_string(), Op::Relu, vec![x])
    }

    /// BN → ReLU, the pre-activation pair. Node names get `bn_`/`relu_` prefixes.
    pub fn pre_activation(&mut self, prefix: &str, tag: &str, x: NodeId) -> Result<NodeId> {
        let bn = self.batch_norm(&format!("{prefix}/bn_{tag}"), x)?;
        self.relu(&format!("{prefix}/relu_{tag}"), bn)
    }

    pub fn add(&mut self, name: &str, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(name.to_string(), Op::Add, vec![a, b])
    }

    pub fn concat(&mut self, name: &str, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Shape(format!("node `{name}`: concat needs at least one input")));
        }
        self.push(name.to_string(), Op::Concat, parts.to_vec())
    }

    pub fn global_avg_pool(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        self.push(name.to_string(), Op::GlobalAvgPool, vec![x])
    }

    pub fn linear(&mut self, name: &str, x: NodeId, out_features: usize) -> Result<NodeId> {
        let in_features: usize = self.shape(x).iter().product();
        let weight = self.add_param(
            format!("{name}/weight"),
            vec![out_features, in_features],
            ParamRole::FcWeight,
            Some(in_features),
        );
        let bias = self.add_param(format!("{name}/bias"), vec![out_features], ParamRole::FcBias, None);
        self.push(
            name.to_string(),
            Op::Linear {
                in_features,
                out_features,
                weight,
                bias,
            },
            vec![x],
        )
    }

    pub fn record_unit(&mut self, record: UnitRecord) {
        self.graph.units.push(record);
    }

    pub fn mark_output(&mut self, node: NodeId) {
        self.graph.outputs.push(node);
    }

    pub fn finish(mut self) -> NetworkGraph<T> {
        if self.graph.outputs.is_empty() {
            let last = self.graph.nodes.len() - 1;
            self.graph.outputs.push(last);
        }
        self.graph
    }
}
