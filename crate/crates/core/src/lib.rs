//! Scalar-generic numerical core of the lip-to-speech system: tensors,
//! reverse-mode autodiff, layers, the video encoder / variance decoder
//! network and the conditional flow post-net.

pub mod autograd;
pub mod ctx;
pub mod error;
pub mod flow;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use autograd::{Grads, Graph, Var};
pub use ctx::Ctx;
pub use error::{CoreError, Result};
pub use flow::{FlowCondition, FlowConfig, FlowOutput, FlowPostNet, NllReduction};
pub use loss::{LossComponents, LossWeights, Reduction};
pub use model::{DataStats, LipToSpeech, ModelConfig, VariancePrediction, VarianceSource};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Builder, Init, ModelRng, ParamId, ParamKind, ParamStore};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Var32 = Var<f32>;
pub type Var64 = Var<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;
pub type AdamW32 = AdamW<f32>;
pub type AdamW64 = AdamW<f64>;
