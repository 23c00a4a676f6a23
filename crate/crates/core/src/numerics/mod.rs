//! Dense single-sample tensor numerics with hand-written reverse-mode
//! gradients for the layer set used by the classifiers in this crate.

mod gradcheck;
mod init;
mod layers;
mod loss;
pub mod ntw;
mod params;
mod stack;
mod tensor;

pub use gradcheck::{
    gradient_check, relative_error, Differentiable, GradientCheckConfig, GradientCheckReport,
    ParamCheck,
};
pub use init::{fans, glorot_bound, glorot_init};
pub use layers::{
    backward, backward_accumulate, forward, softmax, LayerGradients, LayerSpec, Padding,
};
pub use loss::{cross_entropy, cross_entropy_gradient, PROBABILITY_FLOOR};
pub use params::{adam_step, AdamConfig, Gradients, ParamSet};
pub use stack::{Stack, StackObjective};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("{layer} layer: {detail}")]
    Shape { layer: String, detail: String },
    #[error("class index {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),
    #[error("gradient for `{name}` has shape {got:?}, parameter is {expected:?}")]
    GradientShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("shape {0:?} has no fan-in/fan-out (rank < 2)")]
    NoFans(Vec<usize>),
    #[error("weight container: {0}")]
    Container(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
