//! Epoch training loop for classifiers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint::{save_checkpoint, save_optimizer_state};
use crate::data::cifar::{augment_with, AugmentDraw};
use crate::data::ImageSet;
use crate::error::{Error, Result};
use crate::graph::{Mode, NetworkGraph};
use crate::optim::{lr_at, sgd_nesterov_step, OptimizerState, ScheduleKind, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub lr: f64,
    /// Mean mini-batch loss over the epoch.
    pub loss: f64,
    /// Fraction of training samples classified correctly during the epoch.
    pub acc: f64,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,step,lr,loss,acc";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.epoch, self.step, self.lr, self.loss, self.acc)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    /// True if the run ended early on reaching the target accuracy.
    pub reached_target: bool,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", EpochRecord::CSV_HEADER);
        for r in &self.records {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.last().map(|r| r.acc)
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Epochs already completed (for resumed runs).
    pub start_epoch: usize,
    /// Receives `log.csv`, periodic `epoch_NNNN.ckpt` files with their
    /// `epoch_NNNN.opt` optimizer state, and `final.ckpt`.
    pub out_dir: Option<PathBuf>,
    /// Momentum buffers of a resumed run; zero when absent.
    pub optimizer: Option<OptimizerState<f32>>,
}

fn batch_lr(config: &TrainConfig, epoch: usize, step: u64) -> f64 {
    match config.schedule.kind {
        ScheduleKind::MultiplicativeAtEpochs => lr_at(&config.schedule, epoch as u64, config.lr_initial),
        ScheduleKind::MultiplicativeAtIterations => lr_at(&config.schedule, step, config.lr_initial),
    }
}

fn argmax(row: &[f32]) -> usize {
    row.iter()
        .enumerate()
        .fold(
            (0, f32::NEG_INFINITY),
            |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
        )
        .0
}

/// Runs `config.epochs` epochs (minus any already completed). Shuffling and
/// augmentation draw from a generator seeded by `(config.seed, epoch)`, so a
/// run is reproducible and resumable epoch by epoch.
pub fn train_epochs(
    graph: &mut NetworkGraph<f32>,
    data: &ImageSet,
    config: &TrainConfig,
    options: &TrainOptions,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainLog> {
    config.validate()?;
    data.validate()?;
    if data.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if data.shape != graph.input_shape() {
        return Err(Error::Shape(format!(
            "dataset images are {:?} but the network expects {:?}",
            data.shape,
            graph.input_shape()
        )));
    }
    graph.set_frozen_prefixes(&config.freeze);
    let mut state = match &options.optimizer {
        Some(s) if s.velocity.len() == graph.params().len() => s.clone(),
        Some(_) => return Err(Error::Checkpoint("optimizer state does not match the network".into())),
        None => OptimizerState::new(graph),
    };
    let mut log = TrainLog::default();
    let mut csv = match &options.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut w = BufWriter::new(File::create(dir.join("log.csv"))?);
            writeln!(w, "{}", EpochRecord::CSV_HEADER)?;
            w.flush()?;
            Some(w)
        }
        None => None,
    };
    let [c, side, _] = data.shape;
    let per_epoch = data.len().div_ceil(config.batch_size) as u64;
    let mut step = options.start_epoch as u64 * per_epoch;
    for epoch in options.start_epoch..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut batches) = (0.0f64, 0usize, 0usize);
        let mut lr = batch_lr(config, epoch, step);
        for chunk in order.chunks(config.batch_size) {
            let draws: Vec<Option<AugmentDraw>> = chunk
                .iter()
                .map(|_| config.augment.then(|| AugmentDraw::sample(&mut rng)))
                .collect();
            let (x, labels) = data.batch_with(chunk, |slot, img| match draws[slot] {
                Some(d) => augment_with(img, c, side, d),
                None => img.to_vec(),
            });
            lr = batch_lr(config, epoch, step);
            let out = graph.execute(&x, Mode::Train, Some(&labels))?;
            let loss = out.loss.expect("train mode yields a loss") as f64;
            let k = out.logits.sample_len();
            correct += labels
                .iter()
                .enumerate()
                .filter(|(n, &l)| argmax(&out.logits.data()[n * k..(n + 1) * k]) == l)
                .count();
            let grads = out.grads.expect("train mode yields gradients");
            sgd_nesterov_step(
                graph,
                &grads.params,
                &mut state,
                lr,
                config.momentum,
                config.weight_decay,
            )?;
            if let Some(p) = graph.params().iter().find(|p| p.data.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFinite { node: p.name.clone() });
            }
            loss_sum += loss;
            batches += 1;
            step += 1;
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            step,
            lr,
            loss: loss_sum / batches as f64,
            acc: correct as f64 / data.len() as f64,
        };
        if let Some(w) = csv.as_mut() {
            writeln!(w, "{}", record.csv_row())?;
            w.flush()?;
        }
        if let Some(dir) = &options.out_dir {
            if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
                save_checkpoint(graph, &dir.join(format!("epoch_{:04}.ckpt", epoch + 1)))?;
                save_optimizer_state(graph, &state, &dir.join(format!("epoch_{:04}.opt", epoch + 1)))?;
            }
        }
        on_epoch(&record);
        log.records.push(record);
        if config.target_train_accuracy.is_some_and(|t| record.acc >= t) {
            log.reached_target = true;
            break;
        }
    }
    if let Some(dir) = &options.out_dir {
        save_checkpoint(graph, &dir.join("final.ckpt"))?;
    }
    Ok(log)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalReport {
    pub samples: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub error: f64,
}

/// Inference-mode loss and top-1 accuracy.
pub fn evaluate(graph: &NetworkGraph<f32>, data: &ImageSet, batch_size: usize) -> Result<EvalReport> {
    data.validate()?;
    if data.is_empty() {
        return Err(Error::Input("evaluation set is empty".into()));
    }
    let (mut loss, mut correct) = (0.0f64, 0usize);
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, labels) = data.batch(chunk);
        let logits = graph.predict(&x)?;
        let k = logits.sample_len();
        let (l, _) = crate::layers::softmax_cross_entropy(logits.data(), k, &labels)?;
        loss += l as f64 * chunk.len() as f64;
        correct += labels
            .iter()
            .enumerate()
            .filter(|(n, &l)| argmax(&logits.data()[n * k..(n + 1) * k]) == l)
            .count();
    }
    let accuracy = correct as f64 / data.len() as f64;
    Ok(EvalReport {
        samples: data.len(),
        loss: loss / data.len() as f64,
        accuracy,
        error: 1.0 - accuracy,
    })
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::{load_checkpoint, load_optimizer_state};
    use crate::config::{build_network, NetworkConfig};
    use rand_distr::{Distribution, StandardNormal};

    fn tiny_set(n: usize, seed: u64) -> ImageSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = [3, 8, 8];
        let data = (0..n * 192).map(|_| StandardNormal.sample(&mut rng)).collect();
        ImageSet {
            shape,
            data,
            labels: (0..n).map(|i| i % 4).collect(),
            num_classes: 4,
        }
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            lr_initial: 0.01,
            batch_size: 8,
            epochs: 2,
            seed: 3,
            augment: false,
            weight_decay: 0.0,
            ..TrainConfig::classification()
        }
    }

    #[test]
    fn same_seed_same_losses() {
        let data = tiny_set(16, 0);
        let run = || {
            let mut g = build_network::<f32>(&NetworkConfig::miniature(), 1).unwrap();
            train_epochs(&mut g, &data, &quick_config(), &TrainOptions::default(), &mut |_| {}).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 2);
        assert_eq!(a.records[1].step, 4);
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let data = tiny_set(16, 0);
        let mut g = build_network::<f32>(&NetworkConfig::miniature(), 1).unwrap();
        let before: Vec<Vec<f32>> = g.params().iter().map(|p| p.data.clone()).collect();
        let config = TrainConfig {
            lr_initial: 0.0,
            epochs: 1,
            ..quick_config()
        };
        train_epochs(&mut g, &data, &config, &TrainOptions::default(), &mut |_| {}).unwrap();
        let after: Vec<Vec<f32>> = g.params().iter().map(|p| p.data.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn fixed_batch_loss_decreases() {
        let data = tiny_set(8, 2);
        let mut g = build_network::<f32>(&NetworkConfig::miniature(), 4).unwrap();
        let (x, labels) = data.batch(&(0..8).collect::<Vec<_>>());
        let mut state = OptimizerState::new(&g);
        let mut losses = Vec::new();
        for _ in 0..=10 {
            let out = g.execute(&x, Mode::Train, Some(&labels)).unwrap();
            losses.push(out.loss.unwrap());
            sgd_nesterov_step(&mut g, &out.grads.unwrap().params, &mut state, 0.01, 0.9, 0.0).unwrap();
        }
        assert!(losses[10] < losses[0], "{losses:?}");
    }

    #[test]
    fn writes_log_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_set(16, 0);
        let mut g = build_network::<f32>(&NetworkConfig::miniature(), 1).unwrap();
        let config = TrainConfig {
            checkpoint_every: 1,
            ..quick_config()
        };
        let opts = TrainOptions {
            out_dir: Some(dir.path().to_path_buf()),
            ..TrainOptions::default()
        };
        let mut seen = 0;
        let log = train_epochs(&mut g, &data, &config, &opts, &mut |_| seen += 1).unwrap();
        assert_eq!(seen, 2);
        let csv = std::fs::read_to_string(dir.path().join("log.csv")).unwrap();
        assert_eq!(csv, log.to_csv());
        assert!(dir.path().join("epoch_0001.ckpt").is_file());
        assert!(dir.path().join("final.ckpt").is_file());
    }

    #[test]
    fn resuming_reproduces_the_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_set(16, 0);
        let config = TrainConfig {
            checkpoint_every: 1,
            augment: true,
            ..quick_config()
        };
        let mut full = build_network::<f32>(&NetworkConfig::miniature(), 1).unwrap();
        let opts = TrainOptions {
            out_dir: Some(dir.path().to_path_buf()),
            ..TrainOptions::default()
        };
        let full_log = train_epochs(&mut full, &data, &config, &opts, &mut |_| {}).unwrap();

        let mut resumed = build_network::<f32>(&NetworkConfig::miniature(), 99).unwrap();
        load_checkpoint(&mut resumed, &dir.path().join("epoch_0001.ckpt")).unwrap();
        let state = load_optimizer_state(&resumed, &dir.path().join("epoch_0001.opt")).unwrap();
        let opts = TrainOptions {
            start_epoch: 1,
            out_dir: None,
            optimizer: Some(state),
        };
        let log = train_epochs(&mut resumed, &data, &config, &opts, &mut |_| {}).unwrap();
        assert_eq!(log.records[..], full_log.records[1..]);
        for (a, b) in full.params().iter().zip(resumed.params()) {
            assert_eq!(a.data, b.data, "{}", a.name);
        }
    }

    #[test]
    fn non_finite_input_names_the_node() {
        let mut data = tiny_set(8, 0);
        data.data[5] = f32::NAN;
        let mut g = build_network::<f32>(&NetworkConfig::miniature(), 1).unwrap();
        let err = train_epochs(&mut g, &data, &quick_config(), &TrainOptions::default(), &mut |_| {}).unwrap_err();
        match err {
            Error::NonFinite { node } => assert_eq!(node, "input"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn frozen_prefix_bytes_survive_training() {
        let data = tiny_set(16, 0);
        let mut g = build_network::<f32>(&NetworkConfig::miniature(), 1).unwrap();
        let before = g.params()[0].data.clone();
        let config = TrainConfig {
            freeze: vec!["conv1".into()],
            ..quick_config()
        };
        train_epochs(&mut g, &data, &config, &TrainOptions::default(), &mut |_| {}).unwrap();
        assert_eq!(g.params()[0].name, "conv1/weight");
        assert_eq!(g.params()[0].data, before);
    }

    #[test]
    fn untrained_accuracy_is_reported() {
        let data = tiny_set(16, 0);
        let g = build_network::<f32>(&NetworkConfig::miniature(), 1).unwrap();
        let r = evaluate(&g, &data, 5).unwrap();
        assert_eq!(r.samples, 16);
        assert!((r.accuracy + r.error - 1.0).abs() < 1e-12);
    }
}
