//! Mini-batch training and evaluation over a [`Dataset`].

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use qlif_core::encoding::{argmax, encode_sample, EncoderConfig};
use qlif_core::network::Model;
use qlif_core::training::{adam_update, cross_entropy_loss, sample_gradients, AdamConfig, Gradients, OptimizerState};

use crate::data::{Dataset, CLASSES};
use crate::error::{Error, Result};

/// Samples per unit of parallel work; partial gradients are summed within
/// a chunk in index order and then across chunks in chunk order.
const CHUNK: usize = 8;

/// Epoch key used for evaluation encodings.
pub const EVAL_EPOCH: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub timesteps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { timesteps: 25, batch_size: 128, seed: 0, shuffle: true, adam: AdamConfig::default() }
    }
}

impl TrainConfig {
    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig { timesteps: self.timesteps, seed: self.seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchMetrics {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
    /// Accuracy over all samples of the epoch seen so far.
    pub train_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpochMetrics {
    pub batches: Vec<BatchMetrics>,
    pub mean_loss: f64,
    pub train_acc: f64,
}

/// Order in which an epoch visits the dataset.
pub fn epoch_order(len: usize, cfg: &TrainConfig, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    if cfg.shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
    }
    order
}

fn encoded(data: &Dataset, i: usize, enc: &EncoderConfig, epoch: u64) -> Result<Vec<u8>> {
    let values = data.intensities(i);
    let mut spikes = vec![0u8; enc.timesteps * values.len()];
    encode_sample(&values, enc, i as u64, epoch, &mut spikes)?;
    Ok(spikes)
}

struct Partial {
    grads: Gradients,
    loss: f64,
    correct: usize,
}

fn chunk_gradients(model: &Model, data: &Dataset, idx: &[usize], cfg: &TrainConfig, epoch: usize) -> Result<Partial> {
    let enc = cfg.encoder();
    let mut grads = Gradients::zeros_like(model);
    let (mut loss, mut correct) = (0.0, 0);
    for &i in idx {
        let spikes = encoded(data, i, &enc, epoch as u64)?;
        let r = sample_gradients(model, &spikes, cfg.timesteps, data.label(i), &mut grads)?;
        loss += r.loss;
        correct += (r.prediction == data.label(i)) as usize;
    }
    Ok(Partial { grads, loss, correct })
}

/// One pass over `data`: encode, forward, loss, BPTT and one Adam step per
/// mini-batch. Results do not depend on the size of the rayon pool.
pub fn train_epoch(
    model: &mut Model,
    data: &Dataset,
    opt: &mut OptimizerState,
    cfg: &TrainConfig,
    epoch: usize,
    mut on_batch: impl FnMut(&BatchMetrics),
) -> Result<EpochMetrics> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    check_input(model, data)?;
    let order = epoch_order(data.len(), cfg, epoch);
    let mut out = EpochMetrics::default();
    let (mut seen, mut correct, mut loss_sum) = (0usize, 0usize, 0.0);
    for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
        let frozen = &*model;
        let partials: Vec<Partial> = batch
            .par_chunks(CHUNK)
            .map(|idx| chunk_gradients(frozen, data, idx, cfg, epoch))
            .collect::<Result<_>>()?;
        let mut grads = Gradients::zeros_like(model);
        let mut batch_loss = 0.0;
        for p in &partials {
            grads.add_assign(&p.grads);
            batch_loss += p.loss;
            correct += p.correct;
        }
        grads.scale(1.0 / batch.len() as f64);
        adam_update(model, &grads, opt)?;
        seen += batch.len();
        loss_sum += batch_loss;
        let m = BatchMetrics { epoch, batch: b, loss: batch_loss / batch.len() as f64, train_acc: correct as f64 / seen as f64 };
        on_batch(&m);
        out.batches.push(m);
    }
    out.mean_loss = if seen > 0 { loss_sum / seen as f64 } else { 0.0 };
    out.train_acc = if seen > 0 { correct as f64 / seen as f64 } else { 0.0 };
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub mean_loss: f64,
    /// `confusion[true][predicted]`.
    pub confusion: [[usize; CLASSES]; CLASSES],
}

impl EvalReport {
    pub fn samples(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }
}

/// Accuracy, loss and confusion matrix over `data`.
pub fn evaluate(model: &Model, data: &Dataset, cfg: &TrainConfig) -> Result<EvalReport> {
    check_input(model, data)?;
    if model.output_len() != CLASSES {
        return Err(Error::Config(format!("model has {} outputs, dataset has {CLASSES} classes", model.output_len())));
    }
    let enc = cfg.encoder();
    let idx: Vec<usize> = (0..data.len()).collect();
    let rows: Vec<(usize, usize, f64)> = idx
        .par_chunks(CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|&i| {
                    let spikes = encoded(data, i, &enc, EVAL_EPOCH)?;
                    let trace = model.forward_sample(&spikes, cfg.timesteps)?;
                    let loss = cross_entropy_loss(&trace.counts, data.label(i))?.loss;
                    Ok((data.label(i), argmax(&trace.counts), loss))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let mut confusion = [[0; CLASSES]; CLASSES];
    let mut loss = 0.0;
    for &(truth, pred, l) in &rows {
        confusion[truth][pred] += 1;
        loss += l;
    }
    let n = rows.len().max(1) as f64;
    let correct: usize = (0..CLASSES).map(|c| confusion[c][c]).sum();
    Ok(EvalReport { accuracy: correct as f64 / n, mean_loss: loss / n, confusion })
}

fn check_input(model: &Model, data: &Dataset) -> Result<()> {
    if model.input_len() != data.pixels_per_image() {
        return Err(Error::Core(qlif_core::Error::ShapeMismatch {
            expected: format!("{} input features", model.input_len()),
            actual: format!("{}x{} images", data.rows, data.cols),
        }));
    }
    Ok(())
}

/// Runs `f` on a rayon pool of `threads` workers (0 = all cores).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Fresh optimizer with `cfg.adam`.
pub fn optimizer(model: &Model, cfg: &TrainConfig) -> OptimizerState {
    OptimizerState::new(model, cfg.adam)
}
