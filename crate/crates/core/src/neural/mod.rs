//! Dense beam classifier.
//!
//! Architecture: `FC(64) -> BN -> ReLU -> FC(128) -> BN -> ReLU -> FC(K')`,
//! softmax cross-entropy loss, RMSprop updates. Features are the first `M`
//! PN RSS magnitudes divided by their own maximum.
//!
//! Trainable parameters are the dense weights and biases plus the BN scale
//! and shift; BN running statistics are state, not parameters. That gives
//! `64M + 129K' + 8768` trainable values.

mod network;
mod train;

pub use network::{
    cross_entropy, normalize_features, param_count, BatchNorm, Dense, ForwardCache, Gradients, Matrix, Mode,
    NetworkMeta, NetworkParameters, BN_EPSILON, BN_MOMENTUM, HIDDEN1, HIDDEN2, NORMALIZATION_TAG, TENSOR_NAMES,
};
pub use train::{
    backward_and_step, load_model, predict, predict_batch, save_model, train, RmsProp, TrainConfig, TrainHistory,
};
