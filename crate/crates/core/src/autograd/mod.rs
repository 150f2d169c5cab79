//! Reverse-mode differentiation for spiking networks.
//!
//! Spike nodes are differentiated with a triangular surrogate centred on the
//! threshold. Bernoulli indicators enter the tape as constants, so the
//! estimate `(1 - b) * I` passes `(1 - b)` straight through to `I`.

mod gradcheck;
mod registry;
mod tape;

pub use gradcheck::{finite_diff_check, GradCheckReport, SkippedCoordinate};
pub use registry::{Param, ParamId, ParamKind, ParamRegistry, Sgd};
pub use tape::{Gradients, Tape, Var};

use crate::numerics::Tensor;

/// Triangular surrogate for the derivative of `[h >= v_th]`:
/// `max(0, alpha - |h - v_th|) / alpha^2`.
///
/// Evaluated at the pre-spike membrane `h`; the post-reset value is zero
/// wherever a spike fired.
pub fn surrogate_grad(h: &Tensor, v_th: f64, alpha: f64) -> Tensor {
    let inv = 1.0 / (alpha * alpha);
    h.map(|x| inv * (alpha - (x - v_th).abs()).max(0.0))
}
