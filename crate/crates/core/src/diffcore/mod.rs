//! Minimal reverse-mode differentiation over dense `f64` arrays, a
//! fully connected network type, and the Adam optimizer.

mod adam;
mod mlp;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, adam_step_module, AdamConfig, AdamState};
pub use mlp::{Activation, Layer, Mlp};
pub use params::{
    format_real, params_from_json, params_from_value, params_to_json, to_json_string, FullPrecision, Module,
    ParamDoc, ParamMap,
};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::{gemm, solve_lower_into, solve_upper_transposed};
