//! A two-map SSD head on a residual backbone, trainable at toy scale.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::boxes::{decode_box, BBox, Variances};
use super::loss::{multibox_loss_with, MultiboxLoss};
use super::matching::{build_targets, PriorTarget};
use super::nms::nms;
use super::priors::{generate_priors, PriorLayout};
use crate::blocks::UnitSpec;
use crate::config::{build_backbone, stage_output_name, NetworkConfig, StageConfig, StemConfig};
use crate::error::{Error, Result};
use crate::graph::{Gradients, Init, Mode, NetworkGraph, NodeId};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsdConfig {
    pub backbone: NetworkConfig,
    /// Stage indices (0-based) whose outputs feed the predictors.
    pub taps: Vec<usize>,
    /// Object classes, background excluded.
    pub num_classes: usize,
    pub aspect_ratios: Vec<f64>,
    pub s_min: f64,
    pub s_max: f64,
    pub variances: Variances,
    pub match_threshold: f64,
    pub negpos_ratio: usize,
}

impl SsdConfig {
    /// Predictors on the last two stages of a given backbone.
    pub fn on_backbone(backbone: NetworkConfig, num_classes: usize) -> Self {
        let n = backbone.stages.len();
        Self {
            taps: vec![n.saturating_sub(2), n - 1],
            backbone,
            num_classes,
            aspect_ratios: vec![1.0, 2.0, 0.5],
            s_min: 0.2,
            s_max: 0.9,
            variances: Variances::default(),
            match_threshold: 0.5,
            negpos_ratio: 3,
        }
    }

    /// Small backbone for synthetic 32×32 scenes.
    pub fn toy(num_classes: usize) -> Self {
        let backbone = NetworkConfig {
            name: "toy-detector".into(),
            input_shape: [3, 32, 32],
            conv1: StemConfig {
                kernel: 3,
                out_channels: 8,
            },
            stages: vec![
                StageConfig {
                    units: vec![UnitSpec::basic(8, 8, 2)],
                    stage_stride: 2,
                },
                StageConfig {
                    units: vec![UnitSpec::inception(8, [8, 4, 4, 8], 16, 2)],
                    stage_stride: 2,
                },
                StageConfig {
                    units: vec![UnitSpec::basic(16, 16, 2)],
                    stage_stride: 2,
                },
            ],
            num_classes: num_classes + 1,
        };
        Self {
            s_min: 0.3,
            ..Self::on_backbone(backbone, num_classes)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Detection {
    /// 1-based object class.
    pub class: usize,
    pub score: f64,
    pub bbox: BBox,
}

/// A labelled object in normalized coordinates; `class` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Annotation {
    pub class: usize,
    pub bbox: BBox,
}

pub struct SsdModel {
    pub config: SsdConfig,
    pub graph: NetworkGraph<f32>,
    pub layout: PriorLayout,
    pub priors: Vec<BBox>,
    /// (class-score node, offset node) per tapped map.
    heads: Vec<(NodeId, NodeId)>,
}

#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub loss: f64,
    pub matched: usize,
    pub per_image: Vec<MultiboxLoss>,
}

impl SsdModel {
    pub fn build(config: SsdConfig, seed: u64) -> Result<Self> {
        let anchors = config.aspect_ratios.len() + 1;
        let k = config.num_classes + 1;
        let (mut b, _) = build_backbone::<f32>(&config.backbone, Init::Msr(seed))?;
        let mut heads = Vec::new();
        let mut grids = Vec::new();
        for (m, &stage) in config.taps.iter().enumerate() {
            if stage >= config.backbone.stages.len() {
                return Err(Error::Input(format!("tap stage {stage} does not exist")));
            }
            let x = b.find(&stage_output_name(&config.backbone, stage))?;
            let act = b.pre_activation(&format!("det{m}"), "in", x)?;
            let cls = b.conv(&format!("det{m}/cls"), act, anchors * k, 3, 1, true)?;
            let loc = b.conv(&format!("det{m}/loc"), act, anchors * 4, 3, 1, true)?;
            b.mark_output(cls);
            b.mark_output(loc);
            let [_, h, w] = b.shape(x);
            grids.push((h, w));
            heads.push((cls, loc));
        }
        let mut layout = PriorLayout::linear(&grids, config.s_min, config.s_max, &config.aspect_ratios);
        layout.extra_square = true;
        let priors = generate_priors(&layout)?;
        Ok(Self {
            graph: b.finish(),
            config,
            layout,
            priors,
            heads,
        })
    }

    fn classes(&self) -> usize {
        self.config.num_classes + 1
    }

    /// Per-image (logits P×K, offsets P×4) in prior order.
    fn gather(&self, outputs: &[(&Tensor<f32>, &Tensor<f32>)], n: usize) -> (Vec<f64>, Vec<f64>) {
        let k = self.classes();
        let (mut logits, mut offsets) = (Vec::new(), Vec::new());
        for &(cls, loc) in outputs {
            let [_, _, h, w] = cls.shape();
            let anchors = loc.channels() / 4;
            let (cs, ls) = (cls.sample(n), loc.sample(n));
            for i in 0..h {
                for j in 0..w {
                    for a in 0..anchors {
                        for c in 0..k {
                            logits.push(cs[((a * k + c) * h + i) * w + j] as f64);
                        }
                        for c in 0..4 {
                            offsets.push(ls[((a * 4 + c) * h + i) * w + j] as f64);
                        }
                    }
                }
            }
        }
        (logits, offsets)
    }

    /// Inverse of `gather` for gradients of all images.
    fn scatter(
        &self,
        shapes: &[([usize; 4], [usize; 4])],
        grads: &[(Vec<f64>, Vec<f64>)],
    ) -> Vec<(Tensor<f32>, Tensor<f32>)> {
        let k = self.classes();
        let mut out: Vec<(Tensor<f32>, Tensor<f32>)> = shapes
            .iter()
            .map(|&(c, l)| (Tensor::zeros(c), Tensor::zeros(l)))
            .collect();
        for (n, (gl, go)) in grads.iter().enumerate() {
            let (mut pl, mut po) = (0usize, 0usize);
            for (cls, loc) in out.iter_mut() {
                let [_, _, h, w] = cls.shape();
                let anchors = loc.channels() / 4;
                let (cs, ls) = (cls.sample_mut(n), loc.sample_mut(n));
                for i in 0..h {
                    for j in 0..w {
                        for a in 0..anchors {
                            for c in 0..k {
                                cs[((a * k + c) * h + i) * w + j] = gl[pl] as f32;
                                pl += 1;
                            }
                            for c in 0..4 {
                                ls[((a * 4 + c) * h + i) * w + j] = go[po] as f32;
                                po += 1;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn targets(&self, annotations: &[Annotation]) -> Result<Vec<PriorTarget>> {
        let gts: Vec<BBox> = annotations.iter().map(|a| a.bbox).collect();
        let labels: Vec<usize> = annotations.iter().map(|a| a.class).collect();
        build_targets(
            &self.priors,
            &gts,
            &labels,
            self.config.match_threshold,
            self.config.variances,
        )
    }

    /// Batch multibox loss normalized by the total matched count, with
    /// parameter gradients in train mode.
    pub fn loss(
        &mut self,
        images: &Tensor<f32>,
        annotations: &[Vec<Annotation>],
        mode: Mode,
    ) -> Result<(BatchLoss, Option<Gradients<f32>>)> {
        if annotations.len() != images.batch() {
            return Err(Error::Shape(format!(
                "{} annotation lists for {} images",
                annotations.len(),
                images.batch()
            )));
        }
        let tape = self.graph.forward(images, mode)?;
        let outs: Vec<(&Tensor<f32>, &Tensor<f32>)> = self
            .heads
            .iter()
            .map(|&(c, l)| (tape.value(c), tape.value(l)))
            .collect();
        let targets: Vec<Vec<PriorTarget>> = annotations.iter().map(|a| self.targets(a)).collect::<Result<_>>()?;
        let matched: usize = targets.iter().map(|t| t.iter().filter(|p| p.class > 0).count()).sum();
        let k = self.classes();
        let mut per_image = Vec::new();
        for (n, t) in targets.iter().enumerate() {
            let (logits, offsets) = self.gather(&outs, n);
            per_image.push(multibox_loss_with(
                &logits,
                &offsets,
                t,
                k,
                self.config.negpos_ratio,
                Some(matched),
            )?);
        }
        let loss = per_image.iter().map(|l| l.loss).sum::<f64>();
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                node: "multibox_loss".into(),
            });
        }
        let grads = if mode == Mode::Train {
            let shapes: Vec<([usize; 4], [usize; 4])> = outs.iter().map(|(c, l)| (c.shape(), l.shape())).collect();
            let g: Vec<(Vec<f64>, Vec<f64>)> = per_image
                .iter()
                .map(|l| (l.grad_logits.clone(), l.grad_offsets.clone()))
                .collect();
            let seeds: Vec<(NodeId, Tensor<f32>)> = self
                .heads
                .iter()
                .zip(self.scatter(&shapes, &g))
                .flat_map(|(&(cn, ln), (ct, lt))| [(cn, ct), (ln, lt)])
                .collect();
            let trainable: Vec<bool> = self.graph.frozen().iter().map(|f| !f).collect();
            let grads = self.graph.backward(&tape, seeds, &trainable)?;
            self.graph.commit_running_stats(&tape);
            Some(grads)
        } else {
            None
        };
        Ok((
            BatchLoss {
                loss,
                matched,
                per_image,
            },
            grads,
        ))
    }

    /// Decoded, per-class NMS-filtered detections for each image.
    pub fn detect(
        &self,
        images: &Tensor<f32>,
        score_threshold: f64,
        nms_threshold: f64,
        top_k: usize,
    ) -> Result<Vec<Vec<Detection>>> {
        let tape = self.graph.forward(images, Mode::Infer)?;
        let outs: Vec<(&Tensor<f32>, &Tensor<f32>)> = self
            .heads
            .iter()
            .map(|&(c, l)| (tape.value(c), tape.value(l)))
            .collect();
        let k = self.classes();
        let mut all = Vec::new();
        for n in 0..images.batch() {
            let (logits, offsets) = self.gather(&outs, n);
            let mut dets = Vec::new();
            let probs: Vec<Vec<f64>> = logits
                .chunks(k)
                .map(|row| {
                    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
                    let s: f64 = e.iter().sum();
                    e.into_iter().map(|v| v / s).collect()
                })
                .collect();
            for class in 1..k {
                let cand: Vec<usize> = (0..self.priors.len())
                    .filter(|&p| probs[p][class] >= score_threshold)
                    .collect();
                let boxes: Vec<BBox> = cand
                    .iter()
                    .map(|&p| {
                        let t = [
                            offsets[p * 4],
                            offsets[p * 4 + 1],
                            offsets[p * 4 + 2],
                            offsets[p * 4 + 3],
                        ];
                        decode_box(t, &self.priors[p], self.config.variances).clipped()
                    })
                    .collect();
                let scores: Vec<f64> = cand.iter().map(|&p| probs[p][class]).collect();
                for i in nms(&boxes, &scores, nms_threshold) {
                    dets.push(Detection {
                        class,
                        score: scores[i],
                        bbox: boxes[i],
                    });
                }
            }
            dets.sort_by(|a, b| b.score.total_cmp(&a.score));
            dets.truncate(top_k);
            all.push(dets);
        }
        Ok(all)
    }
}

/// Synthetic scenes: noisy background with one or two solid rectangles whose
/// colour identifies the class (1-based, at most 3 classes).
pub fn synthetic_scenes(
    count: usize,
    side: usize,
    num_classes: usize,
    seed: u64,
) -> (Tensor<f32>, Vec<Vec<Annotation>>) {
    const COLOURS: [[f32; 3]; 3] = [[1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tensor::<f32>::zeros([count, 3, side, side]);
    let mut anns = Vec::with_capacity(count);
    for n in 0..count {
        for v in t.sample_mut(n) {
            *v = rng.random_range(-0.2..0.2);
        }
        let objects = rng.random_range(1..=2);
        let mut list = Vec::new();
        for _ in 0..objects {
            let class = rng.random_range(1..=num_classes.clamp(1, 3));
            let w = rng.random_range(side / 4..=side / 2);
            let h = rng.random_range(side / 4..=side / 2);
            let x0 = rng.random_range(0..=side - w);
            let y0 = rng.random_range(0..=side - h);
            let img = t.sample_mut(n);
            for c in 0..3 {
                for y in y0..y0 + h {
                    for x in x0..x0 + w {
                        img[(c * side + y) * side + x] = COLOURS[class - 1][c];
                    }
                }
            }
            let s = side as f64;
            list.push(Annotation {
                class,
                bbox: BBox::new(x0 as f64 / s, y0 as f64 / s, (x0 + w) as f64 / s, (y0 + h) as f64 / s),
            });
        }
        anns.push(list);
    }
    (t, anns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{sgd_nesterov_step, OptimizerState};

    #[test]
    fn head_shapes_and_prior_count() {
        let model = SsdModel::build(SsdConfig::toy(2), 0).unwrap();
        // 8×8 and 4×4 maps with 3 ratios + extra square.
        assert_eq!(model.priors.len(), (64 + 16) * 4);
        assert_eq!(model.graph.outputs().len(), 4);
    }

    #[test]
    fn gather_scatter_round_trip() {
        let model = SsdModel::build(SsdConfig::toy(2), 0).unwrap();
        let shapes = vec![([2, 12, 8, 8], [2, 16, 8, 8]), ([2, 12, 4, 4], [2, 16, 4, 4])];
        let p = model.priors.len();
        let grads: Vec<(Vec<f64>, Vec<f64>)> = (0..2)
            .map(|n| {
                (
                    (0..p * 3).map(|i| (i + n * 7) as f64).collect(),
                    (0..p * 4).map(|i| (i * 3 + n) as f64).collect(),
                )
            })
            .collect();
        let tensors = model.scatter(&shapes, &grads);
        let refs: Vec<(&Tensor<f32>, &Tensor<f32>)> = tensors.iter().map(|(a, b)| (a, b)).collect();
        for (n, g) in grads.iter().enumerate() {
            assert_eq!(&model.gather(&refs, n), g);
        }
    }

    #[test]
    fn toy_training_reduces_loss() {
        let mut model = SsdModel::build(SsdConfig::toy(2), 1).unwrap();
        let (x, anns) = synthetic_scenes(8, 32, 2, 3);
        let mut state = OptimizerState::new(&model.graph);
        let mut losses = Vec::new();
        for _ in 0..15 {
            let (l, g) = model.loss(&x, &anns, Mode::Train).unwrap();
            losses.push(l.loss);
            sgd_nesterov_step(&mut model.graph, &g.unwrap().params, &mut state, 0.01, 0.9, 0.0005).unwrap();
        }
        assert!(losses[14] < losses[0] * 0.8, "{losses:?}");
        let dets = model.detect(&x, 0.01, 0.45, 20).unwrap();
        assert_eq!(dets.len(), 8);
        assert!(dets.iter().all(|d| d.len() <= 20));
    }
}
