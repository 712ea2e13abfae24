//! Minimal dense feed-forward networks with hand-written backpropagation.

mod checkpoint;
mod gradcheck;
mod matrix;
mod network;
mod optim;

pub(crate) use checkpoint::{expect_tag, next_line, parse};
pub use checkpoint::{
    fmt_f64, network_from_str, network_to_string, read_network, write_network, NETWORK_MAGIC,
    NETWORK_VERSION,
};
pub use gradcheck::{finite_diff_check, max_relative_error, numeric_gradient, relative_error};
pub use matrix::Matrix;
pub use network::{
    backward, backward_from, forward, sigmoid, softplus, Activation, Activations, Backward, Grads,
    Layer, LayerGrads, Network,
};
pub use optim::{adam_step, sgd_step, AdamConfig, AdamState};
