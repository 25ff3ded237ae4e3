//! Differentiable primitives with hand-written forward and backward passes.

mod batchnorm;
mod conv;
mod init;
mod linear;
mod loss;
mod pool;
mod relu;

pub use batchnorm::{
    batch_norm_backward, batch_norm_infer, batch_norm_infer_backward, batch_norm_train, BatchNormCache, BatchNormGrads,
    BatchNormParams,
};
pub use conv::{conv2d_backward, conv2d_forward, ConvGeometry, ConvGrads, ConvParams};
pub use init::{msr_initialize, msr_std, normal_fill, MsrInit};
pub use linear::{fully_connected_backward, fully_connected_forward, FcGrads, FcParams};
pub use loss::softmax_cross_entropy;
pub use pool::{global_avg_pool_backward, global_avg_pool_forward};
pub use relu::{relu_backward, relu_forward};
