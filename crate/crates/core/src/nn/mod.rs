//! Convolutional networks: architecture specs, layers with backpropagation,
//! Adam training, gradient checking and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod infer;
pub mod layers;
pub mod network;
pub mod scalar;
pub mod spec;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use infer::{predict, MultiFiberReconstructor, NnReconstructor, NnScratch};
pub use network::{mse_loss, LayerParams, Network, TrainCache, Workspace};
pub use scalar::{gemm, Scalar};
pub use spec::{
    build_cnn_large, build_cnn_small, build_multifiber, ArchConfig, InputNorm, LayerSpec,
    NetworkSpec, Shape, UpsampleHead,
};
pub use train::{
    evaluate_loss, train, AdamParams, EpochStats, TensorSet, TrainOptions, TrainedNetwork,
};
