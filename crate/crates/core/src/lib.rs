//! Cross-scale wavelet super-resolution: numerics, network, objective and data.

pub mod attention;
pub mod autograd;
pub mod blocks;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod ops;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod wavelet;

pub use autograd::{Grads, Tape, Var};
pub use error::{Error, Result};
pub use model::{Ablation, CwtNet, ForwardOutput, Mode, NetworkConfig, WrInit};
pub use objective::{LossBreakdown, LossKind, LossWeights, Objective, OptStrategy};
pub use optim::{AdamConfig, AdamState};
pub use params::{Gradients, ParamId, ParamLayout, Parameters};
pub use rng::SeededRng;
pub use tensor::{Scalar, Shape4, Tensor, Tensor4};
