//! Fourier neural operator with hand-written reverse-mode gradients.

pub mod activation;
pub mod checkpoint;
pub mod fft;
pub mod model;
pub mod optim;
pub mod tensor;

pub use activation::{Activation, ACTIVATION_NAMES};
pub use checkpoint::Checkpoint;
pub use model::{
    backward, forward, init_params, predict, spectral_conv, FnoConfig, ForwardCache, PaddingType, ParamSet,
    ParamTensor, SpectralConv, PADDING_TYPES,
};
pub use optim::{OptimState, OptimizerKind, OPTIMIZER_NAMES};
pub use tensor::Tensor4;
