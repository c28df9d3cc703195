//! Small differentiable network: convolution, pooling, dense, ReLU and
//! inverted dropout layers with hand-written backpropagation, softmax
//! cross-entropy, and SGD with momentum.

mod config;
mod gradcheck;
pub mod io;
pub mod loss;
mod network;
mod optim;
mod tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use config::{LayerSpec, NetworkConfig, DEFAULT_CONV_ARCH, DEFAULT_DENSE_ARCH};
pub use gradcheck::{analytic_gradient, compare_gradients, grad_check, GRAD_FLOOR, MIN_COORDS};
pub use network::{backward, forward, predict, ForwardCache, ModelParams};
pub use optim::Sgd;
pub use tensor::Tensor;

/// Seeded random stream driving dropout masks, mixup draws and shuffles.
pub type RngState = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> RngState {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("non-finite values")]
    NonFinite,
    #[error("stale or mismatched forward cache: {0}")]
    StaleCache(String),
    #[error("gradient check requires dropout to be off")]
    DropoutActive,
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
