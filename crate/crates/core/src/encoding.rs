//! Rate coding of intensities into spike trains and spike-count decoding.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};

pub const DEFAULT_TIMESTEPS: usize = 25;

/// Binary spikes laid out as `[t][b][feature...]`, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeTensor {
    timesteps: usize,
    batch: usize,
    feature_shape: Vec<usize>,
    data: Vec<u8>,
}

impl SpikeTensor {
    pub fn zeros(timesteps: usize, batch: usize, feature_shape: &[usize]) -> Self {
        let features: usize = feature_shape.iter().product();
        Self {
            timesteps,
            batch,
            feature_shape: feature_shape.to_vec(),
            data: vec![0; timesteps * batch * features],
        }
    }

    pub fn from_data(timesteps: usize, batch: usize, feature_shape: &[usize], data: Vec<u8>) -> Result<Self> {
        if timesteps == 0 {
            return Err(Error::InvalidConfig("spike tensor needs at least one timestep".into()));
        }
        let features: usize = feature_shape.iter().product();
        if data.len() != timesteps * batch * features {
            return Err(shape_err(timesteps * batch * features, data.len()));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidConfig("spike tensor values must be 0 or 1".into()));
        }
        Ok(Self { timesteps, batch, feature_shape: feature_shape.to_vec(), data })
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn feature_shape(&self) -> &[usize] {
        &self.feature_shape
    }

    pub fn features(&self) -> usize {
        self.feature_shape.iter().product()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Spikes of sample `b` at timestep `t`.
    pub fn at(&self, t: usize, b: usize) -> &[u8] {
        let n = self.features();
        let start = (t * self.batch + b) * n;
        &self.data[start..start + n]
    }

    pub fn at_mut(&mut self, t: usize, b: usize) -> &mut [u8] {
        let n = self.features();
        let start = (t * self.batch + b) * n;
        &mut self.data[start..start + n]
    }

    /// Copies out the `[t][feature]` train of one sample.
    pub fn sample(&self, b: usize) -> Vec<u8> {
        (0..self.timesteps).flat_map(|t| self.at(t, b).iter().copied()).collect()
    }

    pub fn total_spikes(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EncoderConfig {
    pub timesteps: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { timesteps: DEFAULT_TIMESTEPS, seed: 0 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.timesteps == 0 {
            return Err(Error::InvalidConfig("timesteps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Generator for one (seed, sample, epoch) key; each timestep is a separate stream.
fn sample_rng(seed: u64, key: u64, epoch: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&key.to_le_bytes());
    bytes[16..24].copy_from_slice(&epoch.to_le_bytes());
    ChaCha8Rng::from_seed(bytes)
}

fn check_intensities(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(index) => Err(Error::IntensityDomain { index, value: values[index] }),
        None => Ok(()),
    }
}

/// Bernoulli rate code for a single sample into `out` (`timesteps * values.len()`).
///
/// The train depends only on `(cfg.seed, key, epoch)`, so samples can be
/// encoded in any order or in parallel.
pub fn encode_sample(values: &[f64], cfg: &EncoderConfig, key: u64, epoch: u64, out: &mut [u8]) -> Result<()> {
    cfg.validate()?;
    check_intensities(values)?;
    let n = values.len();
    if out.len() != cfg.timesteps * n {
        return Err(shape_err(cfg.timesteps * n, out.len()));
    }
    let mut rng = sample_rng(cfg.seed, key, epoch);
    for (t, row) in out.chunks_exact_mut(n.max(1)).enumerate().take(cfg.timesteps) {
        rng.set_stream(t as u64);
        rng.set_word_pos(0);
        for (spike, &p) in row.iter_mut().zip(values) {
            let u: f64 = rng.random();
            *spike = (u < p) as u8;
        }
    }
    Ok(())
}

/// Encodes a batch of samples (`values` is `batch x features`, row-major).
/// Sample `b` is keyed by `keys[b]`.
pub fn rate_encode_keyed(
    values: &[f64],
    feature_shape: &[usize],
    cfg: &EncoderConfig,
    keys: &[u64],
    epoch: u64,
) -> Result<SpikeTensor> {
    cfg.validate()?;
    let n: usize = feature_shape.iter().product();
    if n == 0 || values.len() != keys.len() * n {
        return Err(shape_err(keys.len() * n, values.len()));
    }
    let batch = keys.len();
    let mut out = SpikeTensor::zeros(cfg.timesteps, batch, feature_shape);
    let mut buf = vec![0u8; cfg.timesteps * n];
    for (b, (sample, &key)) in values.chunks_exact(n).zip(keys).enumerate() {
        encode_sample(sample, cfg, key, epoch, &mut buf)?;
        for t in 0..cfg.timesteps {
            out.at_mut(t, b).copy_from_slice(&buf[t * n..(t + 1) * n]);
        }
    }
    Ok(out)
}

/// Encodes a batch keyed by batch position.
pub fn rate_encode(values: &[f64], feature_shape: &[usize], cfg: &EncoderConfig) -> Result<SpikeTensor> {
    let n: usize = feature_shape.iter().product::<usize>().max(1);
    let keys: Vec<u64> = (0..(values.len() / n) as u64).collect();
    rate_encode_keyed(values, feature_shape, cfg, &keys, 0)
}

/// Per-sample spike counts summed over time.
pub fn count_decode(spikes: &SpikeTensor) -> Vec<Vec<f64>> {
    let n = spikes.features();
    let mut counts = vec![vec![0.0; n]; spikes.batch()];
    for t in 0..spikes.timesteps() {
        for (b, c) in counts.iter_mut().enumerate() {
            for (acc, &s) in c.iter_mut().zip(spikes.at(t, b)) {
                *acc += s as f64;
            }
        }
    }
    counts
}

/// Index of the largest score; ties go to the smallest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}
