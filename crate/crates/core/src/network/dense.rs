use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{Drives, ThetaInit, WeightPlanes};
use crate::error::{shape_err, Result};
use crate::neuron::{LifConfig, QlifConfig};

/// Fully-connected QLIF layer; planes are `[fan_in, fan_out]`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DenseLayer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub planes: WeightPlanes,
    pub neuron: QlifConfig,
}

impl DenseLayer {
    pub fn new(fan_in: usize, fan_out: usize, planes: WeightPlanes, neuron: QlifConfig) -> Result<Self> {
        let layer = Self { fan_in, fan_out, planes, neuron };
        layer.validate()?;
        Ok(layer)
    }

    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, neuron: QlifConfig, theta_init: ThetaInit, rng: &mut R) -> Self {
        let planes = WeightPlanes::init(&[fan_in, fan_out], fan_in, neuron.t1, theta_init, rng);
        Self { fan_in, fan_out, planes, neuron }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fan_in == 0 || self.fan_out == 0 || self.planes.shape != [self.fan_in, self.fan_out] {
            return Err(shape_err(
                alloc::format!("[{}, {}] with both sizes >= 1", self.fan_in, self.fan_out),
                alloc::format!("{:?}", self.planes.shape),
            ));
        }
        self.planes.validate()?;
        self.neuron.validate()
    }

    pub(crate) fn tau_column_sums(&self) -> Vec<f64> {
        column_sums(&self.planes.tau, self.fan_out)
    }

    /// Drives for the inputs listed in `active`; `tau_colsum` from [`Self::tau_column_sums`].
    pub(crate) fn drives_sparse(&self, active: &[usize], tau_colsum: &[f64], drives: &mut Drives) {
        sparse_drives(&self.planes, self.fan_in, self.fan_out, active, tau_colsum, drives);
    }
}

fn column_sums(plane: &[f64], fan_out: usize) -> Vec<f64> {
    let mut sums = vec![0.0; fan_out];
    for row in plane.chunks_exact(fan_out) {
        for (s, &w) in sums.iter_mut().zip(row) {
            *s += w;
        }
    }
    sums
}

/// Output neurons accumulated together, sized so both accumulators stay in L1.
const BLOCK: usize = 512;

fn sparse_drives(
    planes: &WeightPlanes,
    fan_in: usize,
    fan_out: usize,
    active: &[usize],
    tau_colsum: &[f64],
    drives: &mut Drives,
) {
    drives.theta.clear();
    drives.theta.resize(fan_out, 0.0);
    drives.tau_raw.clear();
    drives.tau_raw.extend_from_slice(tau_colsum);
    for start in (0..fan_out).step_by(BLOCK) {
        let end = (start + BLOCK).min(fan_out);
        let theta = &mut drives.theta[start..end];
        let tau = &mut drives.tau_raw[start..end];
        for &i in active {
            let row = i * fan_out + start..i * fan_out + end;
            for ((th, ta), (&wt, &wd)) in
                theta.iter_mut().zip(tau.iter_mut()).zip(planes.theta[row.clone()].iter().zip(&planes.tau[row]))
            {
                *th += wt;
                *ta -= wd;
            }
        }
    }
    let inv = 1.0 / fan_in as f64;
    for t in drives.tau_raw.iter_mut() {
        *t *= inv;
    }
    drives.x_eff.clear();
    drives.x_eff.resize(fan_out, (!active.is_empty()) as u8);
}

/// Dense aggregation of one timestep of binary input spikes.
pub fn dense_forward(spikes_in: &[u8], planes: &WeightPlanes) -> Result<Drives> {
    let [fan_in, fan_out] = planes.shape[..] else {
        return Err(shape_err("rank-2 planes", alloc::format!("{:?}", planes.shape)));
    };
    if spikes_in.len() != fan_in {
        return Err(shape_err(fan_in, spikes_in.len()));
    }
    let active: Vec<usize> = spikes_in.iter().enumerate().filter(|(_, &s)| s != 0).map(|(i, _)| i).collect();
    let colsum = column_sums(&planes.tau, fan_out);
    let mut drives = Drives::default();
    sparse_drives(planes, fan_in, fan_out, &active, &colsum, &mut drives);
    Ok(drives)
}

/// Fully-connected classical LIF layer with a single `[fan_in, fan_out]` weight matrix.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LifDenseLayer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub neuron: LifConfig,
}

impl LifDenseLayer {
    /// `w ~ U(-0.5, 1.0) * 2 / sqrt(fan_in)`.
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, neuron: LifConfig, rng: &mut R) -> Self {
        let scale = 2.0 / libm::sqrt(fan_in as f64);
        let weights = (0..fan_in * fan_out).map(|_| (rng.random::<f64>() * 1.5 - 0.5) * scale).collect();
        Self { fan_in, fan_out, weights, neuron }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fan_in == 0 || self.fan_out == 0 || self.weights.len() != self.fan_in * self.fan_out {
            return Err(shape_err(self.fan_in * self.fan_out, self.weights.len()));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(crate::error::Error::InvalidConfig("LIF weights contain non-finite entries".into()));
        }
        self.neuron.validate()
    }

    /// Input current `sum_i w[i, j]` over active inputs.
    pub(crate) fn currents(&self, active: &[usize], out: &mut [f64]) {
        out.fill(0.0);
        for &i in active {
            for (c, &w) in out.iter_mut().zip(&self.weights[i * self.fan_out..(i + 1) * self.fan_out]) {
                *c += w;
            }
        }
    }
}
