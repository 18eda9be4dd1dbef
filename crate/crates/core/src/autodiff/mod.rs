//! Reverse-mode differentiation over dense matrices, MLP parameters and
//! the Adam optimizer.

mod adam;
mod nn;
mod tape;

pub use adam::{adam_step, AdamState};
pub use nn::{
    glorot_init, Activation, LayerVars, MlpLayer, ModelDims, ModelParams, ParamVars,
    CHECKPOINT_VERSION,
};
pub use tape::{Tape, Var};
