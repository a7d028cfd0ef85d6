//! Minimal differentiable-computation substrate: a reverse-mode tape with
//! the op set the model needs, parameter storage, an LSTM cell, the
//! checkpoint container, and a finite-difference gradient checker.

pub mod checkpoint;
pub mod gradcheck;
pub mod lstm;
pub mod params;
pub mod tape;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use gradcheck::{analytic_grads, grad_check, max_rel_err, numeric_grads, GradCheckReport};
pub use lstm::{init_lstm_params, lstm_step, LstmVars};
pub use params::{Bound, Param, ParamStore};
pub use tape::{Grads, Tape, Var};

/// Default negative slope of the leaky-ReLU activations.
pub const LEAKY_RELU_SLOPE: f64 = 0.1;
