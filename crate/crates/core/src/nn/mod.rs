//! Minimal differentiable-layer engine.

mod gradcheck;
mod layer;
mod network;
mod optim;

pub use gradcheck::{fd_gradient, grad_check, grad_check_input, relative_error, BlockError, GradCheckReport, FD_STEP};
pub use layer::{softmax_rows, Conv2d, ConvTranspose2d, Dense, GradientTape, Layer};
pub use network::{Sequential, Trace};
pub use optim::{Optimizer, UpdateRule};
