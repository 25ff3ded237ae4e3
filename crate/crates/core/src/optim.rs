//! SGD with Nesterov momentum, weight decay, learning-rate schedules and
//! parameter freezing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NetworkGraph;
use crate::tensor::Element;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    MultiplicativeAtEpochs,
    MultiplicativeAtIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    pub boundaries: Vec<u64>,
    pub factor: f64,
}

impl LrSchedule {
    /// ×0.2 at epochs 60, 120 and 160.
    pub fn classification() -> Self {
        Self {
            kind: ScheduleKind::MultiplicativeAtEpochs,
            boundaries: vec![60, 120, 160],
            factor: 0.2,
        }
    }

    /// ×0.1 every 40,000 iterations up to `max_iterations`.
    pub fn detection(max_iterations: u64) -> Self {
        Self {
            kind: ScheduleKind::MultiplicativeAtIterations,
            boundaries: (1..).map(|k| k * 40_000).take_while(|&b| b <= max_iterations).collect(),
            factor: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::Input(format!("schedule factor {} not in (0, 1)", self.factor)));
        }
        if self.boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Input("schedule boundaries must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// `lr_initial · factor^(boundaries ≤ index)`.
pub fn lr_at(schedule: &LrSchedule, index: u64, lr_initial: f64) -> f64 {
    let passed = schedule.boundaries.iter().filter(|&&b| b <= index).count();
    lr_initial * schedule.factor.powi(passed as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_initial: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub epochs: usize,
    pub seed: u64,
    /// Parameter-name prefixes excluded from updates.
    pub freeze: Vec<String>,
    pub augment: bool,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    /// Stop once an epoch's training accuracy reaches this value.
    pub target_train_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::classification()
    }
}

impl TrainConfig {
    pub fn classification() -> Self {
        Self {
            lr_initial: 0.1,
            momentum: 0.9,
            weight_decay: 0.005,
            batch_size: 128,
            schedule: LrSchedule::classification(),
            epochs: 200,
            seed: 0,
            freeze: Vec::new(),
            augment: true,
            checkpoint_every: 0,
            target_train_accuracy: None,
        }
    }

    pub fn detection(max_iterations: u64) -> Self {
        Self {
            lr_initial: 0.001,
            weight_decay: 0.0005,
            batch_size: 32,
            schedule: LrSchedule::detection(max_iterations),
            ..Self::classification()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_initial >= 0.0 && self.momentum >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::Input(
                "learning rate, momentum and weight decay must be nonnegative".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Input("batch_size must be at least 1".into()));
        }
        self.schedule.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub velocity: Vec<Vec<T>>,
    pub step_count: u64,
}

impl<T: Element> OptimizerState<T> {
    pub fn new(graph: &NetworkGraph<T>) -> Self {
        Self {
            velocity: graph.params().iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
            step_count: 0,
        }
    }
}

/// One update of a single tensor: `g = grad + λw; v = μv + g; w -= lr·(g + μv)`.
pub fn nesterov_update<T: Element>(w: &mut [T], grad: &[T], v: &mut [T], lr: f64, momentum: f64, weight_decay: f64) {
    let (lr, mu, wd) = (T::of(lr), T::of(momentum), T::of(weight_decay));
    for ((w, &g), v) in w.iter_mut().zip(grad).zip(v.iter_mut()) {
        let g = g + wd * *w;
        *v = mu * *v + g;
        *w = *w - lr * (g + mu * *v);
    }
}

/// Updates every parameter not marked frozen in `frozen`. Missing gradients
/// (`None`) count as zero, so weight decay still applies.
pub fn sgd_nesterov_step<T: Element>(
    graph: &mut NetworkGraph<T>,
    grads: &[Option<Vec<T>>],
    state: &mut OptimizerState<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.len() != graph.params().len() || state.velocity.len() != grads.len() {
        return Err(Error::Shape(format!(
            "{} gradients and {} velocities for {} parameters",
            grads.len(),
            state.velocity.len(),
            graph.params().len()
        )));
    }
    let frozen = graph.frozen().to_vec();
    for (i, p) in graph.params_mut().iter_mut().enumerate() {
        if frozen[i] {
            continue;
        }
        let v = &mut state.velocity[i];
        let zeros;
        let g = match &grads[i] {
            Some(g) => g.as_slice(),
            None => {
                zeros = vec![T::zero(); p.data.len()];
                &zeros
            }
        };
        if g.len() != p.data.len() || v.len() != p.data.len() {
            return Err(Error::Shape(format!("gradient for `{}` has the wrong length", p.name)));
        }
        nesterov_update(&mut p.data, g, v, lr, momentum, weight_decay);
    }
    state.step_count += 1;
    Ok(())
}
