//! Dense kernels with exact reverse-mode gradients: shared MLPs
//! (Linear → BatchNorm → ReLU), set pooling, and point-wise losses.

mod loss;
mod mlp;
mod pool;

pub use loss::{huber, point_loss, LossVariant};
pub use mlp::{
    Activation, BatchNorm, BatchNormConfig, Dense, DenseGrad, Mlp, MlpGrad, MlpSpec, MlpTape,
    Mode,
};
pub use pool::{set_pool, PoolMode, PoolTape};
