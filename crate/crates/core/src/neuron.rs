//! Closed-form QLIF and classical LIF neuron dynamics.
//!
//! A QLIF neuron is a single qubit whose excited-state population `alpha`
//! plays the role of the membrane potential. Each timestep the previous
//! population is reinstated by a memory rotation `R_X(phi)`, then either an
//! input rotation `R_X(theta)` (spike) or a delay of length `tau` (no spike)
//! is applied. The neuron fires when the resulting population exceeds the
//! threshold and is then reset to the ground state.

use libm::{asin, exp, sin, sqrt};

use crate::error::{Error, Result};

/// Slack allowed on populations before they are reported as out of domain.
pub const POPULATION_TOLERANCE: f64 = 1e-12;

/// Semantics of the no-spike (delay) branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum DecayMode {
    /// Counter-rotation by the decay angle: `alpha' = sin^2((gamma + phi) / 2)`.
    #[default]
    PaperExact,
    /// T1 relaxation of the population: `alpha' = alpha * exp(-tau / t1)`.
    PhysicalExponential,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QlifConfig {
    /// Firing threshold on the excited-state population, in (0, 1).
    pub threshold: f64,
    /// Relaxation time constant; `tau` is expressed in the same unit.
    pub t1: f64,
    pub decay_mode: DecayMode,
    /// Clamp applied to populations inside derivative evaluations.
    pub epsilon: f64,
}

impl Default for QlifConfig {
    fn default() -> Self {
        Self { threshold: 0.5, t1: 1.0, decay_mode: DecayMode::PaperExact, epsilon: 1e-6 }
    }
}

impl QlifConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidConfig(alloc::format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        if !(self.t1 > 0.0 && self.t1.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!("t1 must be positive, got {}", self.t1)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1e-3) {
            return Err(Error::InvalidConfig(alloc::format!(
                "epsilon must lie in (0, 1e-3), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QlifState {
    pub alpha: f64,
}

impl QlifState {
    pub fn new(alpha: f64) -> Result<Self> {
        Ok(Self { alpha: check_population(alpha)? })
    }

    pub fn ground() -> Self {
        Self { alpha: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QlifInput {
    pub x: bool,
    pub theta: f64,
    pub tau: f64,
}

impl QlifInput {
    pub fn new(x: bool, theta: f64, tau: f64) -> Result<Self> {
        if !theta.is_finite() || !tau.is_finite() || tau < 0.0 {
            return Err(Error::InvalidConfig(alloc::format!(
                "input requires finite theta and tau >= 0, got theta={theta}, tau={tau}"
            )));
        }
        Ok(Self { x, theta, tau })
    }

    /// Builds an input from aggregated drives; negative delays are clamped to zero.
    pub fn from_drive(x: bool, theta: f64, tau: f64) -> Self {
        Self { x, theta, tau: tau.max(0.0) }
    }
}

/// Result of one QLIF timestep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    pub state: QlifState,
    pub spike: bool,
    pub alpha_pre_reset: f64,
}

#[inline]
pub(crate) fn clamp_unit(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

fn check_population(alpha: f64) -> Result<f64> {
    if !(-POPULATION_TOLERANCE..=1.0 + POPULATION_TOLERANCE).contains(&alpha) {
        return Err(Error::PopulationDomain { value: alpha });
    }
    Ok(clamp_unit(alpha))
}

#[inline]
fn sin_sq(x: f64) -> f64 {
    let s = sin(x);
    s * s
}

#[inline]
pub(crate) fn memory_angle_unchecked(alpha: f64) -> f64 {
    2.0 * asin(sqrt(alpha))
}

/// Angle of the `R_X` gate that reinstates population `alpha` from `|0>`.
pub fn memory_angle(alpha: f64) -> Result<f64> {
    Ok(memory_angle_unchecked(check_population(alpha)?))
}

#[inline]
pub(crate) fn decay_angle_unchecked(alpha: f64, tau: f64, t1: f64) -> f64 {
    -2.0 * asin(sqrt(clamp_unit(alpha * exp(-tau / t1))))
}

/// Counter-rotation angle mimicking a delay of length `tau`.
pub fn decay_angle(alpha: f64, tau: f64, t1: f64) -> Result<f64> {
    let alpha = check_population(alpha)?;
    if tau.is_nan() || tau < 0.0 || t1.is_nan() || t1 <= 0.0 {
        return Err(Error::InvalidConfig(alloc::format!("need tau >= 0 and t1 > 0, got tau={tau}, t1={t1}")));
    }
    Ok(decay_angle_unchecked(alpha, tau, t1))
}

/// Pre-reset population after one step. `alpha` must already lie in [0, 1]
/// and `tau` must be non-negative.
#[inline]
pub(crate) fn excite(alpha: f64, x: bool, theta: f64, tau: f64, cfg: &QlifConfig) -> f64 {
    let phi = memory_angle_unchecked(alpha);
    let next = if x {
        sin_sq(0.5 * (theta + phi))
    } else {
        match cfg.decay_mode {
            DecayMode::PaperExact => {
                let gamma = decay_angle_unchecked(alpha, tau, cfg.t1);
                sin_sq(0.5 * (gamma + phi))
            }
            DecayMode::PhysicalExponential => alpha * exp(-tau / cfg.t1),
        }
    };
    clamp_unit(next)
}

/// Threshold and reset: returns `(stored alpha, spike)`.
#[inline]
pub(crate) fn fire(alpha_pre_reset: f64, cfg: &QlifConfig) -> (f64, bool) {
    if alpha_pre_reset > cfg.threshold {
        (0.0, true)
    } else {
        (alpha_pre_reset, false)
    }
}

/// One QLIF timestep: memory rotation, spike rotation or delay, threshold, reset.
pub fn qlif_step(state: QlifState, input: QlifInput, cfg: &QlifConfig) -> StepOutput {
    let alpha = clamp_unit(state.alpha);
    let alpha_pre_reset = excite(alpha, input.x, input.theta, input.tau.max(0.0), cfg);
    let (alpha, spike) = fire(alpha_pre_reset, cfg);
    StepOutput { state: QlifState { alpha }, spike, alpha_pre_reset }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LifConfig {
    /// Membrane decay per step, `exp(-1 / (R C))`.
    pub beta: f64,
    pub u_thr: f64,
}

impl Default for LifConfig {
    fn default() -> Self {
        Self { beta: 0.9, u_thr: 1.0 }
    }
}

impl LifConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidConfig(alloc::format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        if !self.u_thr.is_finite() {
            return Err(Error::InvalidConfig(alloc::format!("u_thr must be finite, got {}", self.u_thr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LifState {
    pub u: f64,
    pub s_prev: bool,
}

/// Classical discrete LIF step with subtractive reset driven by the previous spike.
pub fn lif_step(state: LifState, x: bool, w: f64, cfg: &LifConfig) -> (LifState, bool) {
    let input = if x { w } else { 0.0 };
    let reset = if state.s_prev { cfg.u_thr } else { 0.0 };
    let u = cfg.beta * state.u + input - reset;
    let spike = u > cfg.u_thr;
    (LifState { u, s_prev: spike }, spike)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QlifTraceRecord {
    pub t: usize,
    pub x: bool,
    pub alpha_pre_reset: f64,
    pub spike: bool,
}

/// Runs a QLIF neuron from the ground state over a sequence of inputs.
pub fn run_qlif_trace(inputs: &[QlifInput], cfg: &QlifConfig) -> alloc::vec::Vec<QlifTraceRecord> {
    let mut state = QlifState::ground();
    inputs
        .iter()
        .enumerate()
        .map(|(t, input)| {
            let out = qlif_step(state, *input, cfg);
            state = out.state;
            QlifTraceRecord { t, x: input.x, alpha_pre_reset: out.alpha_pre_reset, spike: out.spike }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LifTraceRecord {
    pub t: usize,
    pub x: bool,
    pub u: f64,
    pub spike: bool,
}

/// Runs a LIF neuron from rest; each input is `(spike, weight)`.
pub fn run_lif_trace(inputs: &[(bool, f64)], cfg: &LifConfig) -> alloc::vec::Vec<LifTraceRecord> {
    let mut state = LifState::default();
    inputs
        .iter()
        .enumerate()
        .map(|(t, &(x, w))| {
            let (next, spike) = lif_step(state, x, w, cfg);
            state = next;
            LifTraceRecord { t, x, u: next.u, spike }
        })
        .collect()
}
