//! Minimal differentiable substrate: dense layers, one attention block,
//! reverse-mode gradients written by hand, Adam, and a finite-difference
//! checker.

mod adam;
mod attention;
mod gradcheck;
mod mlp;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use attention::{Attention, AttentionCache, AttentionSpec, ProjectedCache, Projection};
pub use gradcheck::{gradient_check, relative_error, GradCheckReport, TensorCheck};
pub use mlp::{Activation, Mlp, MlpCache, MlpSpec, OutputActivation, SIGMOID_CLAMP};
pub use params::{Param, ParamSet};
pub use tensor::{axpy, dot, norm, Tensor2D};

pub(crate) use mlp::{sigmoid_fn as sigmoid, softplus_fn as softplus};
