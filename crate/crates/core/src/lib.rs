//! Wide-residual-inception networks from scratch.
//!
//! The crate covers dense tensors and hand-differentiated layers, residual
//! unit builders (basic, bottleneck, residual-inception), whole-network
//! assembly from declarative configs, static cost analysis (parameters, MACs,
//! receptive fields), SGD with Nesterov momentum, CIFAR/KITTI readers, and
//! SSD-style detection mechanics with AP/AR evaluation.

pub mod blocks;
pub mod checkpoint;
pub mod config;
pub mod cost;
pub mod data;
pub mod detect;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod tensor;
pub mod train;

pub use blocks::{UnitSpec, UnitVariant};
pub use config::{build_network, builtin_config, NetworkConfig, StageConfig, StemConfig, BUILTIN_NETWORKS};
pub use error::{Error, Result};
pub use graph::{Mode, NetworkGraph};
pub use tensor::{add_elementwise, concat_channels, Element, Tensor};
