//! Smooth reference forward for finite-difference gradient checks.
//!
//! A base hard forward fixes every discrete decision (spikes, resets, the
//! effective-input bit of each neuron and max-pool routing). The soft
//! forward then replays the network with each spike
//! `S = S_hard + g(a) - g(a_base)`, `g(a) = atan(pi a) / pi^2`, so that
//! `dS/da` is the arctan surrogate while values agree with the hard
//! forward at the base point.

#![allow(dead_code, clippy::needless_range_loop)]

use std::f64::consts::PI;

use qlif_core::network::{Layer, Model};
use qlif_core::neuron::{DecayMode, QlifConfig};

#[derive(Debug, Clone, Default)]
pub struct Frozen {
    /// `[layer][t][neuron]` hard spikes.
    pub spikes: Vec<Vec<Vec<bool>>>,
    /// `[layer][t][neuron]` effective-input bit (QLIF layers).
    pub x_eff: Vec<Vec<Vec<bool>>>,
    /// `[layer][t][neuron]` pre-threshold value at the base point.
    pub base: Vec<Vec<Vec<f64>>>,
    /// `[layer][t][window]` selected input, `None` for a silent window.
    pub route: Vec<Vec<Vec<Option<usize>>>>,
}

fn g(a: f64) -> f64 {
    (PI * a).atan() / (PI * PI)
}

fn sin2(x: f64) -> f64 {
    let s = x.sin();
    s * s
}

fn unit(a: f64) -> f64 {
    a.clamp(0.0, 1.0)
}

fn qlif_value(alpha: f64, x: bool, theta: f64, tau: f64, cfg: &QlifConfig) -> f64 {
    let phi = 2.0 * alpha.sqrt().asin();
    let next = if x {
        sin2(0.5 * (theta + phi))
    } else {
        let k = (-tau / cfg.t1).exp();
        match cfg.decay_mode {
            DecayMode::PaperExact => {
                let gamma = -2.0 * unit(alpha * k).sqrt().asin();
                sin2(0.5 * (gamma + phi))
            }
            DecayMode::PhysicalExponential => alpha * k,
        }
    };
    unit(next)
}

/// Output of a forward: counts and, in record mode, the frozen decisions.
pub struct Run {
    pub counts: Vec<f64>,
    pub frozen: Frozen,
}

/// Runs the network on `[t][feature]` input. With `frozen = None` this is
/// the hard forward and records the decisions; otherwise it is the soft
/// forward around those decisions.
pub fn run(model: &Model, input: &[Vec<f64>], frozen: Option<&Frozen>) -> Run {
    let timesteps = input.len();
    let n_layers = model.layers.len();
    let mut rec = Frozen {
        spikes: vec![Vec::new(); n_layers],
        x_eff: vec![Vec::new(); n_layers],
        base: vec![Vec::new(); n_layers],
        route: vec![Vec::new(); n_layers],
    };
    let mut state: Vec<Vec<f64>> = model.layers.iter().map(|l| vec![0.0; l.output_len()]).collect();
    let mut prev_spike: Vec<Vec<bool>> = model.layers.iter().map(|l| vec![false; l.output_len()]).collect();
    let mut counts = vec![0.0; model.output_len()];

    for t in 0..timesteps {
        let mut x: Vec<f64> = input[t].clone();
        for (l, layer) in model.layers.iter().enumerate() {
            let n = layer.output_len();
            let mut out = vec![0.0; n];
            match layer {
                Layer::Dense(_) | Layer::Conv2d(_) => {
                    let (theta, tau_raw, active, cfg) = aggregate(layer, &x);
                    let mut spikes = vec![false; n];
                    let mut pre = vec![0.0; n];
                    let mut xe = vec![false; n];
                    for j in 0..n {
                        let x_eff = frozen.map_or(active[j], |f| f.x_eff[l][t][j]);
                        let a = qlif_value(state[l][j], x_eff, theta[j], tau_raw[j].max(0.0), cfg);
                        let (s_hard, s) = match frozen {
                            None => {
                                let s = a > cfg.threshold;
                                (s, s as u8 as f64)
                            }
                            Some(f) => {
                                let s = f.spikes[l][t][j];
                                (s, s as u8 as f64 + (g(a) - g(f.base[l][t][j])))
                            }
                        };
                        state[l][j] = if s_hard { 0.0 } else { a };
                        out[j] = s;
                        spikes[j] = s_hard;
                        pre[j] = a;
                        xe[j] = x_eff;
                    }
                    rec.spikes[l].push(spikes);
                    rec.base[l].push(pre);
                    rec.x_eff[l].push(xe);
                }
                Layer::LifDense(d) => {
                    let mut spikes = vec![false; n];
                    let mut pre = vec![0.0; n];
                    for j in 0..n {
                        let current: f64 = (0..d.fan_in).map(|i| d.weights[i * n + j] * x[i]).sum();
                        let reset = if prev_spike[l][j] { d.neuron.u_thr } else { 0.0 };
                        let u = d.neuron.beta * state[l][j] + current - reset;
                        let v = u - d.neuron.u_thr;
                        let (s_hard, s) = match frozen {
                            None => {
                                let s = u > d.neuron.u_thr;
                                (s, s as u8 as f64)
                            }
                            Some(f) => {
                                let s = f.spikes[l][t][j];
                                (s, s as u8 as f64 + (g(v) - g(f.base[l][t][j])))
                            }
                        };
                        state[l][j] = u;
                        out[j] = s;
                        spikes[j] = s_hard;
                        pre[j] = v;
                    }
                    prev_spike[l] = spikes.clone();
                    rec.spikes[l].push(spikes);
                    rec.base[l].push(pre);
                }
                Layer::MaxPool2d(p) => {
                    let (ph, pw) = (p.height / 2, p.width / 2);
                    let mut routes = vec![None; n];
                    for c in 0..p.channels {
                        for py in 0..ph {
                            for px in 0..pw {
                                let o = (c * ph + py) * pw + px;
                                let w: Vec<usize> = [(0, 0), (0, 1), (1, 0), (1, 1)]
                                    .iter()
                                    .map(|(dy, dx)| (c * p.height + 2 * py + dy) * p.width + 2 * px + dx)
                                    .collect();
                                let route = match frozen {
                                    None => w.iter().copied().find(|&i| x[i] > 0.5),
                                    Some(f) => f.route[l][t][o],
                                };
                                out[o] = match route {
                                    Some(i) => x[i],
                                    None => w.iter().map(|&i| x[i]).sum::<f64>() / 4.0,
                                };
                                routes[o] = route;
                            }
                        }
                    }
                    rec.route[l].push(routes);
                }
            }
            x = out;
        }
        for (c, v) in counts.iter_mut().zip(&x) {
            *c += v;
        }
    }
    Run { counts, frozen: rec }
}

/// Synapse-level drives of a QLIF layer for real-valued inputs.
fn aggregate<'a>(layer: &'a Layer, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<bool>, &'a QlifConfig) {
    match layer {
        Layer::Dense(d) => {
            let n = d.fan_out;
            let mut theta = vec![0.0; n];
            let mut tau = vec![0.0; n];
            for j in 0..n {
                for i in 0..d.fan_in {
                    theta[j] += d.planes.theta[i * n + j] * x[i];
                    tau[j] += d.planes.tau[i * n + j] * (1.0 - x[i]);
                }
                tau[j] /= d.fan_in as f64;
            }
            let any = x.iter().any(|&v| v > 0.5);
            (theta, tau, vec![any; n], &d.neuron)
        }
        Layer::Conv2d(c) => {
            let g = &c.geometry;
            let (oh, ow, k) = (g.height + 1 - g.kernel, g.width + 1 - g.kernel, g.kernel);
            let n = g.filters * oh * ow;
            let mut theta = vec![0.0; n];
            let mut tau = vec![0.0; n];
            let mut active = vec![false; n];
            for f in 0..g.filters {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let o = (f * oh + oy) * ow + ox;
                        for ch in 0..g.in_channels {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let v = x[(ch * g.height + oy + ky) * g.width + ox + kx];
                                    let w = ((f * g.in_channels + ch) * k + ky) * k + kx;
                                    theta[o] += c.planes.theta[w] * v;
                                    tau[o] += c.planes.tau[w] * (1.0 - v);
                                    active[o] |= v > 0.5;
                                }
                            }
                        }
                        tau[o] /= (g.in_channels * k * k) as f64;
                    }
                }
            }
            (theta, tau, active, &c.neuron)
        }
        _ => unreachable!("not a QLIF layer"),
    }
}

pub fn cross_entropy(scores: &[f64], label: usize) -> f64 {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
    m + z.ln() - scores[label]
}

/// Central-difference gradient of the soft loss for every parameter, in
/// `Layer::parameters` order.
pub fn finite_difference(model: &Model, input: &[Vec<f64>], label: usize, h: f64) -> Vec<f64> {
    let frozen = run(model, input, None).frozen;
    let mut work = model.clone();
    let mut out = Vec::new();
    for l in 0..model.layers.len() {
        let bufs = model.layers[l].parameters().len();
        for b in 0..bufs {
            let len = model.layers[l].parameters()[b].len();
            for i in 0..len {
                let orig = work.layers[l].parameters()[b][i];
                work.layers[l].parameters_mut()[b][i] = orig + h;
                let up = cross_entropy(&run(&work, input, Some(&frozen)).counts, label);
                work.layers[l].parameters_mut()[b][i] = orig - h;
                let down = cross_entropy(&run(&work, input, Some(&frozen)).counts, label);
                work.layers[l].parameters_mut()[b][i] = orig;
                out.push((up - down) / (2.0 * h));
            }
        }
    }
    out
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// One random gradient-check problem.
pub struct Case {
    pub model: Model,
    pub input: Vec<Vec<f64>>,
    pub label: usize,
}

/// Random dense network with at most two QLIF layers, at most five
/// neurons per layer and at most five timesteps. Draws are repeated until
/// [`well_conditioned`] holds.
pub fn random_dense_case(rng: &mut impl rand::Rng, mode: DecayMode) -> Case {
    loop {
        let case = draw_dense_case(rng, mode);
        if well_conditioned(&case) {
            return case;
        }
    }
}

/// No carried population within `1e-4` of the ends of `[0, 1]` (other than
/// an exact reset to zero) and no delay drive within `1e-4` of its clamp.
/// Near those points the backward pass's epsilon clamp and the kink of
/// `max(tau, 0)` make central differences meaningless.
pub fn well_conditioned(case: &Case) -> bool {
    use qlif_core::network::LayerTrace;
    let trace = case.model.forward_sample(&flat_spikes(&case.input), case.input.len()).unwrap();
    trace.layers.iter().all(|l| match l {
        LayerTrace::Qlif(q) => {
            q.alpha_prev.iter().all(|&a| a == 0.0 || (1e-4..=1.0 - 1e-4).contains(&a))
                && q.tau_raw.iter().zip(&q.x_eff).all(|(t, &x)| x != 0 || t.abs() > 1e-4)
        }
        _ => true,
    })
}

fn draw_dense_case(rng: &mut impl rand::Rng, mode: DecayMode) -> Case {
    use qlif_core::network::{DenseLayer, WeightPlanes};
    let n_in = rng.random_range(2..=5);
    let depth = rng.random_range(1..=2);
    let timesteps = rng.random_range(2..=5);
    let cfg = QlifConfig {
        threshold: rng.random_range(0.3..0.9),
        t1: rng.random_range(0.5..2.0),
        decay_mode: mode,
        ..QlifConfig::default()
    };
    let mut layers = Vec::new();
    let mut fan_in = n_in;
    for d in 0..depth {
        let fan_out = if d + 1 == depth { rng.random_range(2..=5) } else { rng.random_range(1..=5) };
        let len = fan_in * fan_out;
        let theta = (0..len).map(|_| rng.random_range(0.2..2.5)).collect();
        let tau = (0..len).map(|_| rng.random_range(0.1..1.5)).collect();
        let planes = WeightPlanes::new(&[fan_in, fan_out], theta, tau).unwrap();
        layers.push(Layer::Dense(DenseLayer::new(fan_in, fan_out, planes, cfg).unwrap()));
        fan_in = fan_out;
    }
    let model = Model::new(vec![n_in], layers).unwrap();
    let input = (0..timesteps).map(|_| (0..n_in).map(|_| rng.random_bool(0.5) as u8 as f64).collect()).collect();
    let label = rng.random_range(0..model.output_len());
    Case { model, input, label }
}

/// Input as the flat `[t][feature]` byte buffer the model consumes.
pub fn flat_spikes(input: &[Vec<f64>]) -> Vec<u8> {
    input.iter().flatten().map(|&v| (v > 0.5) as u8).collect()
}

/// Largest relative error between BPTT and finite differences over all
/// parameters of `case`, and the number of parameters.
pub fn max_gradient_error(case: &Case) -> (f64, usize) {
    let trace = case.model.forward_sample(&flat_spikes(&case.input), case.input.len()).unwrap();
    let loss = qlif_core::training::cross_entropy_loss(&trace.counts, case.label).unwrap();
    let analytic = qlif_core::training::bptt(&case.model, &trace, &loss.d_scores).unwrap().flatten();
    let numeric = finite_difference(&case.model, &case.input, case.label, 1e-5);
    assert_eq!(analytic.len(), numeric.len());
    let worst = analytic.iter().zip(&numeric).map(|(&a, &b)| relative_error(a, b)).fold(0.0, f64::max);
    (worst, analytic.len())
}
