//! Binary cross-entropy and the Adam optimizer.

mod adam;
mod loss;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{bce_grad, bce_loss, BCE_CLAMP};
