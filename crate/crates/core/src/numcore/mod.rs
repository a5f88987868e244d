//! Dense `f64` primitives: matrices, ReLU networks with closed-form
//! backpropagation, Adam, finite-difference gradient checks and the text
//! checkpoint format.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod mlp;
pub mod rng;
pub mod tensor;

pub use adam::{clip_global_norm, AdamState};
pub use checkpoint::TextDocument;
pub use gradcheck::{grad_check, numeric_gradient, GradCheckReport};
pub use mlp::{dot, Activation, ForwardCache, MlpGrads, MlpParams};
pub use rng::{seeded, SeededRng};
pub use tensor::Tensor2;
