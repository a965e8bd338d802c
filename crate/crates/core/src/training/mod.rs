//! Surrogate-gradient backpropagation through time and parameter updates.

mod adam;
mod bptt;
mod loss;

pub use adam::{adam_update, AdamConfig, OptimizerState};
pub use bptt::{
    bptt, bptt_into, qlif_partials, qlif_step_backward, sample_gradients, GradPlanes, Gradients, LayerGrads,
    QlifPartials, QlifTraceEntry, SampleResult, StepGrads,
};
pub use loss::{cross_entropy_loss, LossOutput};

use core::f64::consts::PI;

/// Arctan surrogate for the derivative of the spike with respect to the population.
#[inline]
pub fn surrogate_grad(alpha: f64) -> f64 {
    let z = alpha * PI;
    1.0 / (PI * (1.0 + z * z))
}
