//! Query-guided spatial-temporal-frequency audio-visual question answering.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense tensors, a reverse-mode tape and a finite-difference
//!   gradient checker.
//! * [`nn`]: multi-head self/cross attention, feed-forward and convolutional
//!   fusion blocks plus the parameter store they draw weights from.
//! * [`qgmc`], [`stfi`], [`qcr`]: the three stages of the model (query-guided
//!   correlation, spatial-temporal-frequency interaction, prompt-conditioned
//!   reasoning and answer head).
//! * [`synth`]: a procedural audio-visual scene generator with a rule-based
//!   answer oracle and a binary fixture format.
//! * [`model`] and [`harness`]: model assembly with ablation switches, AdamW
//!   training, evaluation and the ablation suite.
//!
//! Everything numeric is generic over [`Scalar`]; the aliases below pin the
//! double-precision instantiation used for training and gradient checks.

pub mod error;
pub mod harness;
pub mod model;
pub mod nn;
pub mod qcr;
pub mod qgmc;
pub mod scalar;
pub mod stfi;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Graph64 = tensor::Graph<f64>;
pub type ParamStore64 = nn::ParamStore<f64>;
pub type QStar64 = model::QStar<f64>;
