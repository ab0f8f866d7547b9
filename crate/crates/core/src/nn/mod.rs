// SPDX-License-Identifier: Apache-2.0

//! Double-precision tensors and hand-written layer kernels.
//!
//! Each differentiable layer comes as a forward function that returns its
//! output (plus a cache where needed) and a backward function that turns an
//! output gradient into parameter and input gradients. Parameter gradients
//! accumulate into [`Gradients`] under the same names as in
//! [`ModelParameters`], so a model's backward pass feeds [`sgd_step`]
//! directly and can be verified coordinate by coordinate with [`grad_check`].

mod attention;
mod conv;
mod gradcheck;
mod linear;
mod loss;
mod optim;
mod params;
mod recurrent;
mod tensor;
mod train;
mod transformer;

pub use attention::{attention, attention_backward, attention_pool, attention_pool_backward};
pub use conv::{conv1d_backward, conv1d_forward};
pub use gradcheck::{grad_check, GRAD_CHECK_FLOOR};
pub use linear::{embedding_backward, embedding_lookup, linear_backward, linear_forward};
pub use loss::{cosine, cosine_backward, cross_entropy, softmax_cross_entropy_grad, PROB_FLOOR};
pub use optim::sgd_step;
pub use params::{Gradients, Initializer, ModelParameters};
pub use recurrent::{
    bidirectional_backward, bidirectional_encode, gru_step, init_bidirectional, init_cell,
    lstm_step, BiCache, Cell, CellKind, CellState, StepCache,
};
pub use tensor::{matmul, softmax, Tensor};
pub use train::{grad_norm, train_loop, Hyper, TrainedModel};
pub use transformer::{
    encoder_backward, encoder_forward, init_encoder_layer, layer_norm, layer_norm_backward,
    transformer_encoder_layer, EncoderCache, LayerNormCache, LAYER_NORM_EPS,
};

pub(crate) use tensor::{dot, softmax_slice};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("index {index} out of range for size {bound}")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error("convolution width {0} must be odd")]
    EvenWidth(usize),
    #[error("empty sequence")]
    EmptySequence,
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
