//! Declarative network configurations and the built-in architectures.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blocks::{add_unit, UnitSpec};
use crate::error::{Error, Result};
use crate::graph::{GraphBuilder, Init, NetworkGraph};
use crate::tensor::Element;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemConfig {
    pub kernel: usize,
    pub out_channels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub units: Vec<UnitSpec>,
    /// Stride of the first unit; later units run at stride 1.
    pub stage_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub name: String,
    /// (C, H, W).
    pub input_shape: [usize; 3],
    pub conv1: StemConfig,
    pub stages: Vec<StageConfig>,
    pub num_classes: usize,
}

pub const BUILTIN_NETWORKS: [&str; 4] = ["wrn-16-4", "wr-inception", "wr-inception-l2", "preact-resnet-164"];

fn stage(units: Vec<UnitSpec>) -> StageConfig {
    let stage_stride = units[0].stride;
    StageConfig { units, stage_stride }
}

fn repeat_basic(in_channels: usize, width: usize, stride: usize, count: usize) -> Vec<UnitSpec> {
    (0..count)
        .map(|i| {
            if i == 0 {
                UnitSpec::basic(in_channels, width, stride)
            } else {
                UnitSpec::basic(width, width, 1)
            }
        })
        .collect()
}

fn repeat_bottleneck(in_channels: usize, inner: usize, out: usize, stride: usize, count: usize) -> Vec<UnitSpec> {
    (0..count)
        .map(|i| {
            if i == 0 {
                UnitSpec::bottleneck(in_channels, inner, out, stride)
            } else {
                UnitSpec::bottleneck(out, inner, out, 1)
            }
        })
        .collect()
}

/// One of [`BUILTIN_NETWORKS`], for 3×32×32 inputs and 10 classes.
pub fn builtin_config(name: &str) -> Result<NetworkConfig> {
    let (conv1, stages) = match name {
        "wrn-16-4" => (
            16,
            vec![
                stage(repeat_basic(16, 64, 1, 2)),
                stage(repeat_basic(64, 128, 2, 2)),
                stage(repeat_basic(128, 256, 2, 2)),
            ],
        ),
        "wr-inception" => (
            16,
            vec![
                stage(repeat_basic(16, 64, 1, 2)),
                stage(vec![
                    UnitSpec::basic(64, 128, 2),
                    UnitSpec::inception(128, [128, 64, 64, 128], 128, 1),
                ]),
                stage(repeat_basic(128, 256, 2, 2)),
            ],
        ),
        "wr-inception-l2" => (
            64,
            vec![
                stage(repeat_basic(64, 64, 1, 2)),
                stage(vec![
                    UnitSpec::basic(64, 256, 2),
                    UnitSpec::inception(256, [256, 256, 128, 256], 256, 1),
                ]),
                stage(repeat_basic(256, 256, 2, 2)),
            ],
        ),
        "preact-resnet-164" => (
            16,
            vec![
                stage(repeat_bottleneck(16, 16, 64, 1, 18)),
                stage(repeat_bottleneck(64, 32, 128, 2, 18)),
                stage(repeat_bottleneck(128, 64, 256, 2, 18)),
            ],
        ),
        other => return Err(Error::UnknownNetwork(other.to_string())),
    };
    Ok(NetworkConfig {
        name: name.to_string(),
        input_shape: [3, 32, 32],
        conv1: StemConfig {
            kernel: 3,
            out_channels: conv1,
        },
        stages,
        num_classes: 10,
    })
}

impl NetworkConfig {
    /// Small network touching every unit variant; used by gradient checks.
    pub fn miniature() -> Self {
        NetworkConfig {
            name: "miniature".into(),
            input_shape: [3, 8, 8],
            conv1: StemConfig {
                kernel: 3,
                out_channels: 4,
            },
            stages: vec![
                stage(vec![UnitSpec::basic(4, 4, 1)]),
                stage(vec![
                    UnitSpec::basic(4, 6, 2),
                    UnitSpec::inception(6, [4, 2, 2, 3], 6, 1),
                ]),
                stage(vec![UnitSpec::bottleneck(6, 2, 8, 2)]),
            ],
            num_classes: 4,
        }
    }

    pub fn with_input(mut self, input_shape: [usize; 3]) -> Self {
        self.input_shape = input_shape;
        self
    }

    pub fn with_classes(mut self, num_classes: usize) -> Self {
        self.num_classes = num_classes;
        self
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks channel chaining and stride rules, reporting the first bad stage.
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::Config {
                stage: 0,
                message: "num_classes must be positive".into(),
            });
        }
        if self.input_shape[0] == 0 || self.conv1.out_channels == 0 {
            return Err(Error::Config {
                stage: 0,
                message: "input and stem channels must be positive".into(),
            });
        }
        let mut channels = self.conv1.out_channels;
        for (si, st) in self.stages.iter().enumerate() {
            let err = |message: String| Error::Config { stage: si, message };
            if st.units.is_empty() {
                return Err(err("stage has no units".into()));
            }
            if !matches!(st.stage_stride, 1 | 2) {
                return Err(err(format!("stage stride must be 1 or 2, got {}", st.stage_stride)));
            }
            for (ui, u) in st.units.iter().enumerate() {
                u.validate().map_err(|e| err(format!("unit {ui}: {e}")))?;
                let want_stride = if ui == 0 { st.stage_stride } else { 1 };
                if u.stride != want_stride {
                    return Err(err(format!(
                        "unit {ui} has stride {}, expected {want_stride}",
                        u.stride
                    )));
                }
                if u.in_channels != channels {
                    return Err(err(format!(
                        "unit {ui} expects {} input channels but receives {}",
                        u.in_channels, channels
                    )));
                }
                channels = u.out_channels;
            }
        }
        Ok(())
    }

    pub fn final_channels(&self) -> usize {
        self.stages
            .last()
            .and_then(|s| s.units.last())
            .map_or(self.conv1.out_channels, |u| u.out_channels)
    }
}

/// Node name of the output of stage `index` (0-based).
pub fn stage_output_name(config: &NetworkConfig, index: usize) -> String {
    format!("stage{}/unit{}/add", index + 1, config.stages[index].units.len())
}

/// Stem and residual stages followed by the final BN → ReLU, without a head.
/// Returns the builder and the activated feature node.
pub fn build_backbone<T: Element>(config: &NetworkConfig, init: Init) -> Result<(GraphBuilder<T>, usize)> {
    config.validate()?;
    let (mut b, x) = GraphBuilder::new(config.name.clone(), config.input_shape, init);
    let mut h = b.conv("conv1", x, config.conv1.out_channels, config.conv1.kernel, 1, false)?;
    for (si, st) in config.stages.iter().enumerate() {
        for (ui, spec) in st.units.iter().enumerate() {
            let prefix = format!("stage{}/unit{}", si + 1, ui + 1);
            h = add_unit(&mut b, &prefix, h, spec).map_err(|e| Error::Config {
                stage: si,
                message: e.to_string(),
            })?;
        }
    }
    let bn = b.batch_norm("final/bn", h)?;
    let act = b.relu("final/relu", bn)?;
    Ok((b, act))
}

/// Builds the classifier network with seeded MSR initialization.
pub fn build_network<T: Element>(config: &NetworkConfig, seed: u64) -> Result<NetworkGraph<T>> {
    build_with_init(config, Init::Msr(seed))
}

pub fn build_with_init<T: Element>(config: &NetworkConfig, init: Init) -> Result<NetworkGraph<T>> {
    let (mut b, act) = build_backbone::<T>(config, init)?;
    let pooled = b.global_avg_pool("head/pool", act)?;
    let logits = b.linear("head/fc", pooled, config.num_classes)?;
    b.mark_output(logits);
    Ok(b.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Mode, Op};
    use crate::tensor::Tensor;

    #[test]
    fn builtins_validate() {
        for name in BUILTIN_NETWORKS {
            builtin_config(name).unwrap().validate().unwrap();
        }
        assert!(matches!(builtin_config("nosuch"), Err(Error::UnknownNetwork(_))));
    }

    #[test]
    fn wr_inception_feature_map_and_logits() {
        let cfg = builtin_config("wr-inception").unwrap();
        let g = build_network::<f32>(&cfg, 1).unwrap();
        let feat = g.find_node("final/relu").unwrap();
        assert_eq!(g.node(feat).shape, [256, 8, 8]);
        let logits = g.predict(&Tensor::zeros([1, 3, 32, 32])).unwrap();
        assert_eq!(logits.shape(), [1, 10, 1, 1]);
    }

    #[test]
    fn wrn_has_three_shortcut_projections() {
        let g = build_with_init::<f32>(&builtin_config("wrn-16-4").unwrap(), Init::Zeros).unwrap();
        let n = g.nodes().iter().filter(|n| n.name.ends_with("/shortcut")).count();
        assert_eq!(n, 3);
        assert_eq!(g.units().iter().filter(|u| u.shortcut_projection.is_some()).count(), 3);
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = NetworkConfig::miniature();
        let a = build_network::<f32>(&cfg, 9).unwrap();
        let b = build_network::<f32>(&cfg, 9).unwrap();
        for (p, q) in a.params().iter().zip(b.params()) {
            let pb: Vec<u32> = p.data.iter().map(|v| v.to_bits()).collect();
            let qb: Vec<u32> = q.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(pb, qb);
        }
    }

    #[test]
    fn chaining_errors_name_stage() {
        let mut cfg = builtin_config("wrn-16-4").unwrap();
        cfg.stages[2].units[0].in_channels = 64;
        match cfg.validate() {
            Err(Error::Config { stage, .. }) => assert_eq!(stage, 2),
            other => panic!("{other:?}"),
        }
        let mut cfg = builtin_config("wrn-16-4").unwrap();
        cfg.stages[1].units[1].stride = 2;
        assert!(matches!(cfg.validate(), Err(Error::Config { stage: 1, .. })));
    }

    #[test]
    fn json_round_trip() {
        let cfg = builtin_config("wr-inception-l2").unwrap();
        assert_eq!(NetworkConfig::from_json_str(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn inception_replaces_second_conv3_unit() {
        let g = build_with_init::<f32>(&builtin_config("wr-inception").unwrap(), Init::Zeros).unwrap();
        let unit = g.units().iter().find(|u| u.concat.is_some()).unwrap();
        assert_eq!(unit.name, "stage2/unit2");
        assert!(unit.shortcut_projection.is_none());
    }

    #[test]
    fn duplicated_sample_gives_identical_rows() {
        let cfg = NetworkConfig::miniature();
        let mut g = build_network::<f64>(&cfg, 3).unwrap();
        // move running stats away from the defaults first
        let x = Tensor::from_fn([4, 3, 8, 8], |i| {
            ((i[0] * 7 + i[1] * 3 + i[2] * 5 + i[3]) % 11) as f64 * 0.1
        });
        g.execute(&x, Mode::Train, Some(&[0, 1, 2, 3])).unwrap();
        let one = Tensor::from_fn([2, 3, 8, 8], |i| ((i[1] * 3 + i[2] * 5 + i[3]) % 7) as f64 * 0.2);
        let logits = g.predict(&one).unwrap();
        assert_eq!(logits.sample(0), logits.sample(1));
        assert!(matches!(g.node(g.outputs()[0]).op, Op::Linear { .. }));
    }
}
