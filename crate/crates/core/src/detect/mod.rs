//! SSD-style detection mechanics and evaluation.

pub mod boxes;
pub mod eval;
pub mod loss;
pub mod matching;
pub mod nms;
pub mod priors;
pub mod ssd;

pub use boxes::{decode_box, encode_box, iou, BBox, Variances};
pub use eval::{evaluate_class, evaluate_kitti, ApMode, DetectionReport, EvalConfig};
pub use loss::{multibox_loss, MultiboxLoss};
pub use matching::{build_targets, match_priors, PriorTarget};
pub use nms::{nms, DEFAULT_NMS_THRESHOLD};
pub use priors::{generate_priors, PriorLayout, PriorMap};
