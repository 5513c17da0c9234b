//! Minimal differentiable numerics: tensors, a reverse-mode tape, the
//! layers the generator and discriminator are built from, and a
//! finite-difference checker.

mod attention;
mod autograd;
mod conv;
mod embedding;
pub mod gradcheck;
mod layers;
mod ops;
mod params;
mod scalar;
mod spectral;
mod tensor;

pub use attention::{multi_head_self_attention, SelfAttention, TransformerBlock};
pub use autograd::{Gradients, Var};
pub use conv::{area_downsample, ConvSpec};
pub use embedding::{time_embedding, TimestepEmbedding};
pub use gradcheck::{gradcheck, relative_error, sample_indices, GradcheckReport};
pub use layers::{conv2d, Conv2d, LayerNorm, Linear};
pub use params::{Bound, Init, ParamId, ParamLayout, ParamSet, ParamSpec};
pub use scalar::Scalar;
pub use spectral::{matrix_dims, power_iterate, spectral_normalize, PowerIteration, SpectralState};
pub use tensor::{conv_out_size, Tensor};
