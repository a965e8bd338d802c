//! Spiking layers built from QLIF neurons and their composition into models.
//!
//! Every QLIF layer owns two parameter planes of identical shape: the
//! theta-plane sets how far a presynaptic spike rotates the neuron, the
//! tau-plane sets how long the neuron relaxes when the synapse is silent.
//! Per timestep a layer reduces its binary inputs to one drive per neuron:
//!
//! * `theta_hat = sum_i theta[i] * x[i]`
//! * `tau_hat = max(0, sum_i tau[i] * (1 - x[i]) / fan_in)`
//! * `x_eff = 1` iff any presynaptic spike arrived

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::neuron::{qlif_step, QlifConfig, QlifInput, QlifState};

mod conv;
mod dense;
mod model;
mod pool;

pub use conv::{conv_forward, ConvGeometry, ConvLayer};
pub use dense::{dense_forward, DenseLayer, LifDenseLayer};
pub use model::{
    model_forward, ForwardTrace, Layer, LayerTrace, LifTrace, Model, PoolTrace, QlifTrace, SampleTrace,
};
pub use pool::{maxpool_forward, PoolGeometry, POOL_NO_SPIKE};

/// Upper bound of the uniform theta initialisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ThetaInit {
    /// `U(0, 2 pi / fan_in)`: all synapses active at once rotate by about pi.
    #[default]
    FanIn,
    /// `U(0, 2 pi / sqrt(fan_in))`.
    SqrtFanIn,
}

impl ThetaInit {
    pub fn upper(&self, fan_in: usize) -> f64 {
        match self {
            ThetaInit::FanIn => 2.0 * PI / fan_in as f64,
            ThetaInit::SqrtFanIn => 2.0 * PI / libm::sqrt(fan_in as f64),
        }
    }
}

/// Paired theta/tau parameters of one layer, row-major over `shape`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WeightPlanes {
    pub shape: Vec<usize>,
    pub theta: Vec<f64>,
    pub tau: Vec<f64>,
}

impl WeightPlanes {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), theta: vec![0.0; n], tau: vec![0.0; n] }
    }

    pub fn new(shape: &[usize], theta: Vec<f64>, tau: Vec<f64>) -> Result<Self> {
        let planes = Self { shape: shape.to_vec(), theta, tau };
        planes.validate()?;
        Ok(planes)
    }

    /// `theta ~ U(0, theta_init.upper(fan_in))`, `tau ~ U(0.1, 1.0) * t1`.
    pub fn init<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, t1: f64, theta_init: ThetaInit, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let theta_max = theta_init.upper(fan_in);
        let theta = (0..n).map(|_| rng.random::<f64>() * theta_max).collect();
        let tau = (0..n).map(|_| (0.1 + 0.9 * rng.random::<f64>()) * t1).collect();
        Self { shape: shape.to_vec(), theta, tau }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n: usize = self.shape.iter().product();
        if self.theta.len() != n || self.tau.len() != n {
            return Err(shape_err(n, alloc::format!("theta {} / tau {}", self.theta.len(), self.tau.len())));
        }
        if self.theta.iter().chain(&self.tau).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("weight planes contain non-finite entries".into()));
        }
        Ok(())
    }
}

/// Aggregated per-neuron drives for one timestep.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Drives {
    pub theta: Vec<f64>,
    /// Aggregated delay before clamping at zero.
    pub tau_raw: Vec<f64>,
    pub x_eff: Vec<u8>,
}

impl Drives {
    pub fn zeros(n: usize) -> Self {
        Self { theta: vec![0.0; n], tau_raw: vec![0.0; n], x_eff: vec![0; n] }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Clamped delay actually seen by the neuron.
    pub fn tau(&self, j: usize) -> f64 {
        self.tau_raw[j].max(0.0)
    }
}

/// Advances every neuron of a layer by one step.
///
/// `alpha` holds the stored populations and is updated in place; the
/// pre-reset populations and output spikes are written to the out slices.
pub fn qlif_layer_step(
    alpha: &mut [f64],
    drives: &Drives,
    cfg: &QlifConfig,
    alpha_pre_reset: &mut [f64],
    spikes: &mut [u8],
) -> Result<()> {
    let n = alpha.len();
    if drives.len() != n || alpha_pre_reset.len() != n || spikes.len() != n {
        return Err(shape_err(n, drives.len()));
    }
    for j in 0..n {
        let input = QlifInput::from_drive(drives.x_eff[j] != 0, drives.theta[j], drives.tau_raw[j]);
        let out = qlif_step(QlifState { alpha: alpha[j] }, input, cfg);
        alpha[j] = out.state.alpha;
        alpha_pre_reset[j] = out.alpha_pre_reset;
        spikes[j] = out.spike as u8;
    }
    Ok(())
}
