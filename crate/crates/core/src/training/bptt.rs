use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, sin, sqrt};

use super::loss::cross_entropy_loss;
use super::surrogate_grad;
use crate::encoding::argmax;
use crate::error::{shape_err, Error, Result};
use crate::network::{ConvLayer, DenseLayer, Layer, LayerTrace, LifDenseLayer, LifTrace, Model, PoolGeometry, PoolTrace, QlifTrace, SampleTrace, POOL_NO_SPIKE};
use crate::neuron::{decay_angle_unchecked, memory_angle_unchecked, DecayMode, QlifConfig};

/// Everything recorded about one neuron at one timestep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QlifTraceEntry {
    pub alpha_prev: f64,
    pub x: bool,
    pub theta_hat: f64,
    /// Aggregated delay before clamping.
    pub tau_raw: f64,
    pub alpha_pre_reset: f64,
    pub spike: bool,
}

/// Partial derivatives of the pre-reset population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QlifPartials {
    pub d_theta: f64,
    pub d_tau: f64,
    pub d_alpha: f64,
}

/// Analytic partials of `alpha'(alpha, x, theta, tau)`; `epsilon` keeps
/// the arcsine derivatives finite at the population boundaries.
pub fn qlif_partials(alpha: f64, x: bool, theta: f64, tau: f64, cfg: &QlifConfig) -> QlifPartials {
    let eps = cfg.epsilon;
    let phi = memory_angle_unchecked(alpha);
    let a = alpha.clamp(eps, 1.0 - eps);
    let d_phi = 1.0 / sqrt(a * (1.0 - a));
    if x {
        let h = 0.5 * sin(theta + phi);
        return QlifPartials { d_theta: h, d_tau: 0.0, d_alpha: h * d_phi };
    }
    let k = exp(-tau / cfg.t1);
    match cfg.decay_mode {
        DecayMode::PaperExact => {
            let gamma = decay_angle_unchecked(alpha, tau, cfg.t1);
            let h = 0.5 * sin(gamma + phi);
            let b = (alpha * k).clamp(eps, 1.0 - eps);
            let root = sqrt(b * (1.0 - b));
            let d_gamma_d_alpha = -k / root;
            let d_gamma_d_tau = b / (cfg.t1 * root);
            QlifPartials { d_theta: 0.0, d_tau: h * d_gamma_d_tau, d_alpha: h * (d_phi + d_gamma_d_alpha) }
        }
        DecayMode::PhysicalExponential => QlifPartials { d_theta: 0.0, d_tau: -alpha * k / cfg.t1, d_alpha: k },
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepGrads {
    pub d_alpha_prev: f64,
    pub d_theta_hat: f64,
    /// Gradient with respect to the raw (unclamped) delay drive.
    pub d_tau_hat: f64,
}

/// Backward through one QLIF step.
///
/// The spike contributes through the arctan surrogate evaluated at the
/// pre-reset population. The population carried to the next step is
/// `alpha' * (1 - spike)` with the spike held constant, so a reset step
/// passes no temporal gradient.
pub fn qlif_step_backward(entry: &QlifTraceEntry, d_alpha_next: f64, d_spike: f64, cfg: &QlifConfig) -> StepGrads {
    let carried = if entry.spike { 0.0 } else { d_alpha_next };
    let g = d_spike * surrogate_grad(entry.alpha_pre_reset) + carried;
    let p = qlif_partials(entry.alpha_prev, entry.x, entry.theta_hat, entry.tau_raw.max(0.0), cfg);
    StepGrads {
        d_alpha_prev: g * p.d_alpha,
        d_theta_hat: g * p.d_theta,
        d_tau_hat: if entry.tau_raw > 0.0 { g * p.d_tau } else { 0.0 },
    }
}

/// Loss gradients for the two planes of a QLIF layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GradPlanes {
    pub d_theta: Vec<f64>,
    pub d_tau: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrads {
    Planes(GradPlanes),
    Weights(Vec<f64>),
    None,
}

impl LayerGrads {
    pub fn buffers(&self) -> Vec<&[f64]> {
        match self {
            LayerGrads::Planes(p) => vec![&p.d_theta, &p.d_tau],
            LayerGrads::Weights(w) => vec![w],
            LayerGrads::None => vec![],
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            LayerGrads::Planes(p) => vec![&mut p.d_theta, &mut p.d_tau],
            LayerGrads::Weights(w) => vec![w],
            LayerGrads::None => vec![],
        }
    }
}

/// Gradients for every layer of a model, aligned with [`Layer::parameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        let layers = model
            .layers
            .iter()
            .map(|layer| match layer {
                Layer::Dense(DenseLayer { planes, .. }) | Layer::Conv2d(ConvLayer { planes, .. }) => {
                    LayerGrads::Planes(GradPlanes { d_theta: vec![0.0; planes.len()], d_tau: vec![0.0; planes.len()] })
                }
                Layer::LifDense(d) => LayerGrads::Weights(vec![0.0; d.weights.len()]),
                Layer::MaxPool2d(_) => LayerGrads::None,
            })
            .collect();
        Self { layers }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.buffers_mut().into_iter().zip(b.buffers()) {
                for (u, v) in x.iter_mut().zip(y) {
                    *u += v;
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            for buf in layer.buffers_mut() {
                buf.iter_mut().for_each(|v| *v *= factor);
            }
        }
    }

    pub fn fill_zero(&mut self) {
        for layer in &mut self.layers {
            for buf in layer.buffers_mut() {
                buf.fill(0.0);
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(|l| l.buffers().iter().all(|b| b.iter().all(|&v| v == 0.0)))
    }

    /// All gradient values in parameter order.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.buffers()).flat_map(|b| b.iter().copied()).collect()
    }
}

fn check_trace(model: &Model, trace: &SampleTrace, d_scores: &[f64], grads: &Gradients) -> Result<()> {
    if trace.layers.len() != model.layers.len() || trace.layer_spikes.len() != model.layers.len() + 1 {
        return Err(Error::TraceMismatch(alloc::format!(
            "{} traced layers for {} model layers",
            trace.layers.len(),
            model.layers.len()
        )));
    }
    if grads.layers.len() != model.layers.len() {
        return Err(shape_err(model.layers.len(), grads.layers.len()));
    }
    if d_scores.len() != model.output_len() {
        return Err(shape_err(model.output_len(), d_scores.len()));
    }
    for (l, (layer, lt)) in model.layers.iter().zip(&trace.layers).enumerate() {
        let n = trace.timesteps * layer.output_len();
        let ok = match (layer, lt) {
            (Layer::Dense(_) | Layer::Conv2d(_), LayerTrace::Qlif(q)) => q.alpha_prev.len() == n,
            (Layer::LifDense(_), LayerTrace::Lif(t)) => t.u_post.len() == n,
            (Layer::MaxPool2d(_), LayerTrace::Pool(p)) => p.selected.len() == n,
            _ => false,
        };
        if !ok || trace.layer_spikes[l + 1].len() != n {
            return Err(Error::TraceMismatch(alloc::format!("layer {l} trace does not match the layer")));
        }
    }
    Ok(())
}

/// Gradients of the loss with respect to every trainable parameter, given
/// the forward trace of one sample and `dL/dcounts`.
pub fn bptt(model: &Model, trace: &SampleTrace, d_scores: &[f64]) -> Result<Gradients> {
    let mut grads = Gradients::zeros_like(model);
    bptt_into(model, trace, d_scores, &mut grads)?;
    Ok(grads)
}

/// As [`bptt`], accumulating into `grads`.
pub fn bptt_into(model: &Model, trace: &SampleTrace, d_scores: &[f64], grads: &mut Gradients) -> Result<()> {
    check_trace(model, trace, d_scores, grads)?;
    let n_layers = model.layers.len();
    let mut carry: Vec<Vec<f64>> = model.layers.iter().map(|l| vec![0.0; l.output_len()]).collect();
    let mut tau_acc: Vec<Vec<f64>> = model
        .layers
        .iter()
        .map(|l| match l {
            Layer::Dense(d) => vec![0.0; d.fan_out],
            Layer::Conv2d(c) => vec![0.0; c.geometry.filters],
            _ => Vec::new(),
        })
        .collect();
    let mut scratch = Scratch::default();
    let mut d_out = Vec::new();
    let mut d_in = Vec::new();

    for t in (0..trace.timesteps).rev() {
        d_out.clear();
        d_out.extend_from_slice(d_scores);
        for l in (0..n_layers).rev() {
            let layer = &model.layers[l];
            let need_input = l > 0;
            d_in.clear();
            if need_input {
                d_in.resize(layer.input_len(), 0.0);
            }
            let x = trace.spikes(l, t);
            let s = trace.spikes(l + 1, t);
            let d_in_opt = need_input.then_some(&mut d_in[..]);
            match (layer, &trace.layers[l], &mut grads.layers[l]) {
                (Layer::Dense(d), LayerTrace::Qlif(tr), LayerGrads::Planes(g)) => {
                    scratch.step_grads(tr, s, t, &d_out, &mut carry[l], &d.neuron);
                    dense_backward(d, x, &scratch, g, &mut tau_acc[l], d_in_opt);
                }
                (Layer::Conv2d(c), LayerTrace::Qlif(tr), LayerGrads::Planes(g)) => {
                    scratch.step_grads(tr, s, t, &d_out, &mut carry[l], &c.neuron);
                    conv_backward(c, x, &scratch, g, &mut tau_acc[l], d_in_opt);
                }
                (Layer::LifDense(d), LayerTrace::Lif(tr), LayerGrads::Weights(g)) => {
                    lif_backward(d, tr, x, t, &d_out, &mut carry[l], g, d_in_opt);
                }
                (Layer::MaxPool2d(p), LayerTrace::Pool(tr), LayerGrads::None) => {
                    if let Some(d_in) = d_in_opt {
                        pool_backward(p, tr, t, &d_out, d_in);
                    }
                }
                _ => return Err(Error::TraceMismatch(alloc::format!("layer {l} gradient kind"))),
            }
            core::mem::swap(&mut d_out, &mut d_in);
        }
    }

    // The silent-synapse part of the delay drive touches every synapse of a neuron.
    for (l, layer) in model.layers.iter().enumerate() {
        match (layer, &mut grads.layers[l]) {
            (Layer::Dense(d), LayerGrads::Planes(g)) => {
                for row in g.d_tau.chunks_exact_mut(d.fan_out) {
                    for (v, &a) in row.iter_mut().zip(&tau_acc[l]) {
                        *v += a;
                    }
                }
            }
            (Layer::Conv2d(c), LayerGrads::Planes(g)) => {
                let per = c.geometry.fan_in();
                for (kernel, &a) in g.d_tau.chunks_exact_mut(per).zip(&tau_acc[l]) {
                    kernel.iter_mut().for_each(|v| *v += a);
                }
            }
            _ => {}
        }
    }
    Ok(())
}

/// Per-neuron drive gradients of the current timestep.
#[derive(Default)]
struct Scratch {
    d_theta: Vec<f64>,
    d_tau: Vec<f64>,
}

impl Scratch {
    fn step_grads(&mut self, tr: &QlifTrace, spikes: &[u8], t: usize, d_out: &[f64], carry: &mut [f64], cfg: &QlifConfig) {
        let n = spikes.len();
        let base = t * n;
        self.d_theta.clear();
        self.d_tau.clear();
        for j in 0..n {
            let entry = QlifTraceEntry {
                alpha_prev: tr.alpha_prev[base + j],
                x: tr.x_eff[base + j] != 0,
                theta_hat: tr.theta_hat[base + j],
                tau_raw: tr.tau_raw[base + j],
                alpha_pre_reset: tr.alpha_pre_reset[base + j],
                spike: spikes[j] != 0,
            };
            let g = qlif_step_backward(&entry, carry[j], d_out[j], cfg);
            carry[j] = g.d_alpha_prev;
            self.d_theta.push(g.d_theta_hat);
            self.d_tau.push(g.d_tau_hat);
        }
    }
}

fn dense_backward(d: &DenseLayer, x: &[u8], s: &Scratch, g: &mut GradPlanes, tau_acc: &mut [f64], d_in: Option<&mut [f64]>) {
    let n = d.fan_out;
    let inv = 1.0 / d.fan_in as f64;
    for (i, _) in x.iter().enumerate().filter(|(_, &v)| v != 0) {
        let row = i * n..(i + 1) * n;
        for (v, &dt) in g.d_theta[row.clone()].iter_mut().zip(&s.d_theta) {
            *v += dt;
        }
        for (v, &dt) in g.d_tau[row].iter_mut().zip(&s.d_tau) {
            *v -= dt * inv;
        }
    }
    for (a, &dt) in tau_acc.iter_mut().zip(&s.d_tau) {
        *a += dt * inv;
    }
    if let Some(d_in) = d_in {
        if s.d_theta.iter().chain(&s.d_tau).all(|&v| v == 0.0) {
            return;
        }
        for (i, out) in d_in.iter_mut().enumerate() {
            let row = i * n..(i + 1) * n;
            let mut acc = 0.0;
            for ((&wt, &wd), (&dt, &dd)) in
                d.planes.theta[row.clone()].iter().zip(&d.planes.tau[row]).zip(s.d_theta.iter().zip(&s.d_tau))
            {
                acc += wt * dt - wd * dd * inv;
            }
            *out = acc;
        }
    }
}

fn conv_backward(c: &ConvLayer, x: &[u8], s: &Scratch, g: &mut GradPlanes, tau_acc: &mut [f64], d_in: Option<&mut [f64]>) {
    let geo = &c.geometry;
    let pixels = geo.out_height() * geo.out_width();
    let inv = 1.0 / geo.fan_in() as f64;
    for (idx, _) in x.iter().enumerate().filter(|(_, &v)| v != 0) {
        let (ch, iy, ix) = geo.input_coords(idx);
        geo.for_each_receptor(iy, ix, |ky, kx, o| {
            for f in 0..geo.filters {
                let w = geo.weight_index(f, ch, ky, kx);
                g.d_theta[w] += s.d_theta[f * pixels + o];
                g.d_tau[w] -= s.d_tau[f * pixels + o] * inv;
            }
        });
    }
    for (f, a) in tau_acc.iter_mut().enumerate() {
        *a += s.d_tau[f * pixels..(f + 1) * pixels].iter().sum::<f64>() * inv;
    }
    if let Some(d_in) = d_in {
        for (idx, out) in d_in.iter_mut().enumerate() {
            let (ch, iy, ix) = geo.input_coords(idx);
            let mut acc = 0.0;
            geo.for_each_receptor(iy, ix, |ky, kx, o| {
                for f in 0..geo.filters {
                    let w = geo.weight_index(f, ch, ky, kx);
                    acc += c.planes.theta[w] * s.d_theta[f * pixels + o] - c.planes.tau[w] * s.d_tau[f * pixels + o] * inv;
                }
            });
            *out = acc;
        }
    }
}

fn pool_backward(p: &PoolGeometry, tr: &PoolTrace, t: usize, d_out: &[f64], d_in: &mut [f64]) {
    let n = p.out_len();
    for (o, &g) in d_out.iter().enumerate() {
        match tr.selected[t * n + o] {
            // a silent window behaves as the mean of its inputs
            POOL_NO_SPIKE => {
                for i in p.window(o) {
                    d_in[i] += 0.25 * g;
                }
            }
            i => d_in[i as usize] += g,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn lif_backward(
    d: &LifDenseLayer,
    tr: &LifTrace,
    x: &[u8],
    t: usize,
    d_out: &[f64],
    carry: &mut [f64],
    g: &mut [f64],
    d_in: Option<&mut [f64]>,
) {
    let n = d.fan_out;
    let mut d_current = vec![0.0; n];
    for j in 0..n {
        let u = tr.u_post[t * n + j];
        let total = d_out[j] * surrogate_grad(u - d.neuron.u_thr) + carry[j];
        d_current[j] = total;
        carry[j] = d.neuron.beta * total;
    }
    for (i, _) in x.iter().enumerate().filter(|(_, &v)| v != 0) {
        for (v, &dc) in g[i * n..(i + 1) * n].iter_mut().zip(&d_current) {
            *v += dc;
        }
    }
    if let Some(d_in) = d_in {
        for (i, out) in d_in.iter_mut().enumerate() {
            *out = d.weights[i * n..(i + 1) * n].iter().zip(&d_current).map(|(w, dc)| w * dc).sum();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    pub loss: f64,
    pub counts: Vec<f64>,
    pub prediction: usize,
}

/// Forward, loss and BPTT for one encoded sample, accumulating into `grads`.
pub fn sample_gradients(
    model: &Model,
    spikes: &[u8],
    timesteps: usize,
    label: usize,
    grads: &mut Gradients,
) -> Result<SampleResult> {
    let trace = model.forward_sample(spikes, timesteps)?;
    let out = cross_entropy_loss(&trace.counts, label)?;
    bptt_into(model, &trace, &out.d_scores, grads)?;
    let prediction = argmax(&trace.counts);
    Ok(SampleResult { loss: out.loss, counts: trace.counts, prediction })
}
