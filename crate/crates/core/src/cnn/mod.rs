//! Convolutional predictors: the closed-form 3×3 model with its explicit
//! update rules, and the general multi-layer network.

pub mod conv;
pub mod didactic;
pub mod general;

pub use conv::{conv2d_valid, pool, ConvBias, FeatureMap, PoolMode};
pub use didactic::{
    didactic_forward, didactic_gradients, didactic_loss, didactic_sgd_step, didactic_train, DidacticCnnParams,
    DidacticOutput,
};
pub use general::{general_train, GeneralArch, GeneralCnnConfig, GeneralCnnModel};
