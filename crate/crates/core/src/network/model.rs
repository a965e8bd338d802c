use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ConvGeometry, ConvLayer, DenseLayer, Drives, LifDenseLayer, PoolGeometry, ThetaInit};
use crate::encoding::SpikeTensor;
use crate::error::{shape_err, Error, Result};
use crate::neuron::{self, LifConfig, QlifConfig};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum Layer {
    Dense(DenseLayer),
    Conv2d(ConvLayer),
    MaxPool2d(PoolGeometry),
    LifDense(LifDenseLayer),
}

impl Layer {
    pub fn input_len(&self) -> usize {
        match self {
            Layer::Dense(d) => d.fan_in,
            Layer::Conv2d(c) => c.geometry.in_len(),
            Layer::MaxPool2d(p) => p.in_len(),
            Layer::LifDense(d) => d.fan_in,
        }
    }

    pub fn output_len(&self) -> usize {
        match self {
            Layer::Dense(d) => d.fan_out,
            Layer::Conv2d(c) => c.geometry.out_len(),
            Layer::MaxPool2d(p) => p.out_len(),
            Layer::LifDense(d) => d.fan_out,
        }
    }

    pub fn output_shape(&self) -> Vec<usize> {
        match self {
            Layer::Dense(d) => vec![d.fan_out],
            Layer::Conv2d(c) => vec![c.geometry.filters, c.geometry.out_height(), c.geometry.out_width()],
            Layer::MaxPool2d(p) => vec![p.channels, p.height / 2, p.width / 2],
            Layer::LifDense(d) => vec![d.fan_out],
        }
    }

    /// Required `[C, H, W]` input for spatial layers.
    fn spatial_input(&self) -> Option<[usize; 3]> {
        match self {
            Layer::Conv2d(c) => Some([c.geometry.in_channels, c.geometry.height, c.geometry.width]),
            Layer::MaxPool2d(p) => Some([p.channels, p.height, p.width]),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Layer::Dense(d) => d.validate(),
            Layer::Conv2d(c) => c.validate(),
            Layer::MaxPool2d(p) => p.validate(),
            Layer::LifDense(d) => d.validate(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    /// Trainable buffers in a fixed order (theta then tau, or weights).
    pub fn parameters(&self) -> Vec<&[f64]> {
        match self {
            Layer::Dense(d) => vec![&d.planes.theta, &d.planes.tau],
            Layer::Conv2d(c) => vec![&c.planes.theta, &c.planes.tau],
            Layer::MaxPool2d(_) => vec![],
            Layer::LifDense(d) => vec![&d.weights],
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Dense(d) => vec![&mut d.planes.theta, &mut d.planes.tau],
            Layer::Conv2d(c) => vec![&mut c.planes.theta, &mut c.planes.tau],
            Layer::MaxPool2d(_) => vec![],
            Layer::LifDense(d) => vec![&mut d.weights],
        }
    }
}

/// A feed-forward stack of spiking layers.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Model {
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
}

impl Model {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let model = Self { input_shape, layers };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidConfig("model has no layers".into()));
        }
        let mut shape = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            let len: usize = shape.iter().product();
            if layer.input_len() != len {
                return Err(shape_err(
                    alloc::format!("layer {i} input of {} values", layer.input_len()),
                    alloc::format!("{shape:?}"),
                ));
            }
            if let Some(chw) = layer.spatial_input() {
                if shape[..] != chw[..] {
                    return Err(shape_err(alloc::format!("layer {i} input {chw:?}"), alloc::format!("{shape:?}")));
                }
            }
            shape = layer.output_shape();
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(0, Layer::output_len)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// `input -> QLIF(hidden) -> QLIF(classes)`.
    pub fn qsnn_dense(
        input_shape: &[usize],
        hidden: usize,
        classes: usize,
        neuron: QlifConfig,
        theta_init: ThetaInit,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_in = input_shape.iter().product();
        Self::new(
            input_shape.to_vec(),
            vec![
                Layer::Dense(DenseLayer::init(n_in, hidden, neuron, theta_init, &mut rng)),
                Layer::Dense(DenseLayer::init(hidden, classes, neuron, theta_init, &mut rng)),
            ],
        )
    }

    /// `[C, H, W] -> QLIF conv(filters, k x k) -> 2x2 max-pool -> QLIF(classes)`.
    pub fn qscnn_conv(
        input_shape: &[usize],
        filters: usize,
        kernel: usize,
        classes: usize,
        neuron: QlifConfig,
        theta_init: ThetaInit,
        seed: u64,
    ) -> Result<Self> {
        let [c, h, w] = input_shape[..] else {
            return Err(shape_err("[C, H, W] input", alloc::format!("{input_shape:?}")));
        };
        let geometry = ConvGeometry { in_channels: c, height: h, width: w, filters, kernel };
        geometry.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv = ConvLayer::init(geometry, neuron, theta_init, &mut rng);
        let pool = PoolGeometry { channels: filters, height: geometry.out_height(), width: geometry.out_width() };
        let head = DenseLayer::init(pool.out_len(), classes, neuron, theta_init, &mut rng);
        Self::new(input_shape.to_vec(), vec![Layer::Conv2d(conv), Layer::MaxPool2d(pool), Layer::Dense(head)])
    }

    /// Classical reference: `input -> LIF(hidden) -> LIF(classes)`.
    pub fn lif_dense(input_shape: &[usize], hidden: usize, classes: usize, neuron: LifConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_in = input_shape.iter().product();
        Self::new(
            input_shape.to_vec(),
            vec![
                Layer::LifDense(LifDenseLayer::init(n_in, hidden, neuron, &mut rng)),
                Layer::LifDense(LifDenseLayer::init(hidden, classes, neuron, &mut rng)),
            ],
        )
    }

    /// Runs one sample (`[t][feature]` spikes) through every layer for all
    /// timesteps, starting from the ground state, and records everything
    /// the backward pass needs.
    pub fn forward_sample(&self, spikes: &[u8], timesteps: usize) -> Result<SampleTrace> {
        let n_in = self.input_len();
        if timesteps == 0 || spikes.len() != timesteps * n_in {
            return Err(shape_err(timesteps * n_in, spikes.len()));
        }
        let mut layer_spikes = Vec::with_capacity(self.layers.len() + 1);
        layer_spikes.push(spikes.to_vec());
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut runners = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let n = layer.output_len();
            layer_spikes.push(vec![0u8; timesteps * n]);
            traces.push(LayerTrace::allocate(layer, timesteps));
            runners.push(Runner::new(layer));
        }

        let mut active = Vec::new();
        for t in 0..timesteps {
            for (l, layer) in self.layers.iter().enumerate() {
                let (before, after) = layer_spikes.split_at_mut(l + 1);
                let n_prev = layer.input_len();
                let n = layer.output_len();
                let input = &before[l][t * n_prev..(t + 1) * n_prev];
                let output = &mut after[0][t * n..(t + 1) * n];
                active.clear();
                active.extend(input.iter().enumerate().filter(|(_, &s)| s != 0).map(|(i, _)| i));
                runners[l].step(layer, input, &active, t, output, &mut traces[l]);
            }
        }

        let n_out = self.output_len();
        let last = layer_spikes.last().expect("model has layers");
        let mut counts = vec![0.0; n_out];
        for row in last.chunks_exact(n_out) {
            for (c, &s) in counts.iter_mut().zip(row) {
                *c += s as f64;
            }
        }
        Ok(SampleTrace { timesteps, layer_spikes, layers: traces, counts })
    }
}

/// Mutable per-sample state of one layer during a forward pass.
struct Runner {
    state: Vec<f64>,
    tau_sums: Vec<f64>,
    drives: Drives,
    pre: Vec<f64>,
    field: Vec<u32>,
}

impl Runner {
    fn new(layer: &Layer) -> Self {
        let n = layer.output_len();
        let tau_sums = match layer {
            Layer::Dense(d) => d.tau_column_sums(),
            Layer::Conv2d(c) => c.tau_kernel_sums(),
            _ => Vec::new(),
        };
        Self { state: vec![0.0; n], tau_sums, drives: Drives::zeros(n), pre: vec![0.0; n], field: Vec::new() }
    }

    fn step(&mut self, layer: &Layer, input: &[u8], active: &[usize], t: usize, output: &mut [u8], trace: &mut LayerTrace) {
        let n = output.len();
        let rows = t * n..(t + 1) * n;
        match (layer, trace) {
            (Layer::Dense(_) | Layer::Conv2d(_), LayerTrace::Qlif(tr)) => {
                let cfg = match layer {
                    Layer::Dense(d) => {
                        d.drives_sparse(active, &self.tau_sums, &mut self.drives);
                        &d.neuron
                    }
                    Layer::Conv2d(c) => {
                        c.drives_sparse(active, &self.tau_sums, &mut self.drives, &mut self.field);
                        &c.neuron
                    }
                    _ => unreachable!(),
                };
                tr.alpha_prev[rows.clone()].copy_from_slice(&self.state);
                super::qlif_layer_step(&mut self.state, &self.drives, cfg, &mut self.pre, output)
                    .expect("runner buffers sized from layer");
                tr.theta_hat[rows.clone()].copy_from_slice(&self.drives.theta);
                tr.tau_raw[rows.clone()].copy_from_slice(&self.drives.tau_raw);
                tr.x_eff[rows.clone()].copy_from_slice(&self.drives.x_eff);
                tr.alpha_pre_reset[rows].copy_from_slice(&self.pre);
            }
            (Layer::LifDense(d), LayerTrace::Lif(tr)) => {
                d.currents(active, &mut self.pre);
                tr.u_prev[rows.clone()].copy_from_slice(&self.state);
                for j in 0..n {
                    let s_prev = t > 0 && self.field_spike(j);
                    let state = neuron::LifState { u: self.state[j], s_prev };
                    let (next, spike) = neuron::lif_step(state, true, self.pre[j], &d.neuron);
                    self.state[j] = next.u;
                    output[j] = spike as u8;
                }
                self.remember_spikes(output);
                tr.u_post[rows].copy_from_slice(&self.state);
            }
            (Layer::MaxPool2d(p), LayerTrace::Pool(tr)) => {
                p.select(input, output, &mut tr.selected[rows]);
            }
            _ => unreachable!("trace kind matches layer kind"),
        }
    }

    // LIF layers keep their previous output spikes in `field`.
    fn field_spike(&self, j: usize) -> bool {
        self.field.get(j).is_some_and(|&s| s != 0)
    }

    fn remember_spikes(&mut self, spikes: &[u8]) {
        self.field.clear();
        self.field.extend(spikes.iter().map(|&s| s as u32));
    }
}

/// Per-timestep record of a QLIF layer, each buffer `[t][neuron]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QlifTrace {
    pub alpha_prev: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub tau_raw: Vec<f64>,
    pub alpha_pre_reset: Vec<f64>,
    pub x_eff: Vec<u8>,
}

/// Per-timestep record of a LIF layer; `u_post` is the pre-threshold potential.
#[derive(Debug, Clone, PartialEq)]
pub struct LifTrace {
    pub u_prev: Vec<f64>,
    pub u_post: Vec<f64>,
}

/// Routing of each pooled output, `[t][output]` input indices or [`super::POOL_NO_SPIKE`].
#[derive(Debug, Clone, PartialEq)]
pub struct PoolTrace {
    pub selected: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerTrace {
    Qlif(QlifTrace),
    Lif(LifTrace),
    Pool(PoolTrace),
}

impl LayerTrace {
    fn allocate(layer: &Layer, timesteps: usize) -> Self {
        let n = timesteps * layer.output_len();
        match layer {
            Layer::Dense(_) | Layer::Conv2d(_) => LayerTrace::Qlif(QlifTrace {
                alpha_prev: vec![0.0; n],
                theta_hat: vec![0.0; n],
                tau_raw: vec![0.0; n],
                alpha_pre_reset: vec![0.0; n],
                x_eff: vec![0; n],
            }),
            Layer::LifDense(_) => LayerTrace::Lif(LifTrace { u_prev: vec![0.0; n], u_post: vec![0.0; n] }),
            Layer::MaxPool2d(_) => LayerTrace::Pool(PoolTrace { selected: vec![0; n] }),
        }
    }
}

/// Complete forward record of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTrace {
    pub timesteps: usize,
    /// Spikes at every layer boundary, `[0]` being the encoded input; each `[t][neuron]`.
    pub layer_spikes: Vec<Vec<u8>>,
    pub layers: Vec<LayerTrace>,
    /// Output spike counts summed over time.
    pub counts: Vec<f64>,
}

impl SampleTrace {
    /// Spikes entering layer `l` (or leaving layer `l - 1`) at timestep `t`.
    pub fn spikes(&self, boundary: usize, t: usize) -> &[u8] {
        let buf = &self.layer_spikes[boundary];
        let n = buf.len() / self.timesteps;
        &buf[t * n..(t + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForwardTrace {
    pub samples: Vec<SampleTrace>,
}

/// Forward pass over a batch; returns per-sample output counts and traces.
pub fn model_forward(batch: &SpikeTensor, model: &Model) -> Result<(Vec<Vec<f64>>, ForwardTrace)> {
    if batch.features() != model.input_len() {
        return Err(shape_err(model.input_len(), batch.features()));
    }
    let mut trace = ForwardTrace::default();
    for b in 0..batch.batch() {
        trace.samples.push(model.forward_sample(&batch.sample(b), batch.timesteps())?);
    }
    let counts = trace.samples.iter().map(|s| s.counts.clone()).collect();
    Ok((counts, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::WeightPlanes;
    use crate::neuron::DecayMode;
    use core::f64::consts::PI;

    fn toy(theta: f64, tau: f64, mode: DecayMode) -> Model {
        let neuron = QlifConfig { threshold: 0.9, decay_mode: mode, ..QlifConfig::default() };
        let planes = WeightPlanes::new(&[1, 1], vec![theta], vec![tau]).unwrap();
        Model::new(vec![1], vec![Layer::Dense(DenseLayer::new(1, 1, planes, neuron).unwrap())]).unwrap()
    }

    #[test]
    fn single_spike_single_output() {
        let m = toy(PI, 0.5, DecayMode::PaperExact);
        let batch = SpikeTensor::from_data(1, 1, &[1], vec![1]).unwrap();
        let (counts, trace) = model_forward(&batch, &m).unwrap();
        assert_eq!(counts, vec![vec![1.0]]);
        assert_eq!(trace.samples[0].layer_spikes[1], vec![1]);
    }

    #[test]
    fn silent_input_stays_silent() {
        let mut m = Model::qsnn_dense(&[6], 4, 3, QlifConfig { decay_mode: DecayMode::PhysicalExponential, ..QlifConfig::default() }, ThetaInit::default(), 1).unwrap();
        for layer in &mut m.layers {
            if let Layer::Dense(d) = layer {
                d.planes.tau.fill(0.0);
            }
        }
        let batch = SpikeTensor::zeros(10, 2, &[6]);
        let (counts, _) = model_forward(&batch, &m).unwrap();
        assert!(counts.iter().flatten().all(|&c| c == 0.0));
    }

    #[test]
    fn batch_samples_are_independent() {
        let m = Model::qsnn_dense(&[8], 5, 3, QlifConfig::default(), ThetaInit::default(), 3).unwrap();
        let a: Vec<u8> = (0..40).map(|i| ((i * 7) % 3 == 0) as u8).collect();
        let b: Vec<u8> = (0..40).map(|i| ((i * 5) % 4 == 1) as u8).collect();
        let mut data = Vec::new();
        let mut swapped = Vec::new();
        for t in 0..5 {
            data.extend_from_slice(&a[t * 8..(t + 1) * 8]);
            data.extend_from_slice(&b[t * 8..(t + 1) * 8]);
            swapped.extend_from_slice(&b[t * 8..(t + 1) * 8]);
            swapped.extend_from_slice(&a[t * 8..(t + 1) * 8]);
        }
        let (c1, _) = model_forward(&SpikeTensor::from_data(5, 2, &[8], data).unwrap(), &m).unwrap();
        let (c2, _) = model_forward(&SpikeTensor::from_data(5, 2, &[8], swapped).unwrap(), &m).unwrap();
        assert_eq!(c1[0], c2[1]);
        assert_eq!(c1[1], c2[0]);
        let (same, _) = model_forward(&SpikeTensor::from_data(5, 1, &[8], a.clone()).unwrap(), &m).unwrap();
        assert_eq!(same[0], c1[0]);
    }

    #[test]
    fn conv_preset_shapes() {
        let m = Model::qscnn_conv(&[1, 28, 28], 12, 5, 10, QlifConfig::default(), ThetaInit::default(), 0).unwrap();
        assert_eq!(m.layers[0].output_shape(), vec![12, 24, 24]);
        assert_eq!(m.layers[1].output_shape(), vec![12, 12, 12]);
        assert_eq!(m.layers[2].input_len(), 1728);
        assert_eq!(m.output_len(), 10);
    }

    #[test]
    fn chain_mismatch_rejected() {
        let mut m = Model::qsnn_dense(&[8], 5, 3, QlifConfig::default(), ThetaInit::default(), 3).unwrap();
        m.input_shape = vec![9];
        assert!(m.validate().is_err());
        let err = Model::qscnn_conv(&[784], 12, 5, 10, QlifConfig::default(), ThetaInit::default(), 0);
        assert!(err.is_err());
    }

    #[test]
    fn one_by_one_conv_equals_dense() {
        let neuron = QlifConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (c, h, w, f) = (3usize, 2usize, 2usize, 4usize);
        let geometry = ConvGeometry { in_channels: c, height: h, width: w, filters: f, kernel: 1 };
        let conv = ConvLayer::init(geometry, neuron, ThetaInit::default(), &mut rng);
        let conv_model = Model::new(vec![c, h, w], vec![Layer::Conv2d(conv.clone())]).unwrap();
        let spikes: Vec<u8> = (0..6 * c * h * w).map(|i| ((i * 13) % 5 < 2) as u8).collect();
        let conv_trace = conv_model.forward_sample(&spikes, 6).unwrap();
        // Each pixel is a dense layer over channels with planes transposed to [C, F].
        for p in 0..h * w {
            let transpose = |plane: &[f64]| -> Vec<f64> {
                let mut out = vec![0.0; c * f];
                for fi in 0..f {
                    for ci in 0..c {
                        out[ci * f + fi] = plane[fi * c + ci];
                    }
                }
                out
            };
            let planes = WeightPlanes::new(&[c, f], transpose(&conv.planes.theta), transpose(&conv.planes.tau)).unwrap();
            let dense = Model::new(vec![c], vec![Layer::Dense(DenseLayer::new(c, f, planes, neuron).unwrap())]).unwrap();
            let pixel_spikes: Vec<u8> =
                (0..6).flat_map(|t| (0..c).map(move |ci| (t, ci))).map(|(t, ci)| spikes[t * c * h * w + ci * h * w + p]).collect();
            let dense_trace = dense.forward_sample(&pixel_spikes, 6).unwrap();
            for t in 0..6 {
                for fi in 0..f {
                    assert_eq!(conv_trace.spikes(1, t)[fi * h * w + p], dense_trace.spikes(1, t)[fi]);
                }
            }
        }
    }
}
