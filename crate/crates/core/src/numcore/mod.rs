//! Dense `f64` numerics with reverse-mode differentiation.

pub mod array;
pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod tape;

pub use array::{DiffArray, InitSpec, ParamId, ParamStore, ParamTensor};
pub use gradcheck::{finite_diff_check, Coords, GradCheckReport};
pub use nn::{ffn, layer_norm, linear, relu, softmax, tanh_act, Ffn, LayerNorm, Linear, LN_EPS};
pub use optim::{sgd_momentum_step, OptimizerState};
pub use tape::{softmax_values, Gradients, Tape, Var};
