use alloc::vec;
use alloc::vec::Vec;

use super::bptt::Gradients;
use crate::error::{shape_err, Error, Result};
use crate::network::Model;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 5e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment estimates for every parameter buffer of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(model: &Model, config: AdamConfig) -> Self {
        let sizes: Vec<usize> = model.layers.iter().flat_map(|l| l.parameters()).map(|p| p.len()).collect();
        Self {
            config,
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One bias-corrected Adam step. Non-finite gradients abort the step
/// before any parameter is touched.
pub fn adam_update(model: &mut Model, grads: &Gradients, opt: &mut OptimizerState) -> Result<()> {
    if grads.layers.len() != model.layers.len() {
        return Err(shape_err(model.layers.len(), grads.layers.len()));
    }
    let mut total = 0;
    for (l, (layer, g)) in model.layers.iter().zip(&grads.layers).enumerate() {
        let params = layer.parameters();
        let bufs = g.buffers();
        if params.len() != bufs.len() || params.iter().zip(&bufs).any(|(p, b)| p.len() != b.len()) {
            return Err(shape_err(alloc::format!("gradients shaped like layer {l}"), "mismatched buffers"));
        }
        for buf in bufs {
            if let Some(index) = buf.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { layer: l, index });
            }
        }
        total += params.len();
    }
    if total != opt.first.len() {
        return Err(shape_err(opt.first.len(), total));
    }

    opt.step += 1;
    let c = opt.config;
    let bias1 = 1.0 - libm::pow(c.beta1, opt.step as f64);
    let bias2 = 1.0 - libm::pow(c.beta2, opt.step as f64);
    let mut k = 0;
    for (layer, g) in model.layers.iter_mut().zip(&grads.layers) {
        for (param, grad) in layer.parameters_mut().into_iter().zip(g.buffers()) {
            let (m, v) = (&mut opt.first[k], &mut opt.second[k]);
            for i in 0..param.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                param[i] -= c.lr * m_hat / (libm::sqrt(v_hat) + c.eps);
            }
            k += 1;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{DenseLayer, Layer, WeightPlanes};
    use crate::neuron::QlifConfig;
    use crate::training::LayerGrads;

    fn model(theta: f64) -> Model {
        let planes = WeightPlanes::new(&[1, 1], vec![theta], vec![0.5]).unwrap();
        Model::new(vec![1], vec![Layer::Dense(DenseLayer::new(1, 1, planes, QlifConfig::default()).unwrap())]).unwrap()
    }

    fn grads(m: &Model, theta: f64, tau: f64) -> Gradients {
        let mut g = Gradients::zeros_like(m);
        if let LayerGrads::Planes(p) = &mut g.layers[0] {
            p.d_theta[0] = theta;
            p.d_tau[0] = tau;
        }
        g
    }

    fn theta_of(m: &Model) -> f64 {
        m.layers[0].parameters()[0][0]
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut m = model(1.0);
        let before = m.clone();
        let mut opt = OptimizerState::new(&m, AdamConfig::default());
        for _ in 0..10 {
            adam_update(&mut m, &Gradients::zeros_like(&before), &mut opt).unwrap();
        }
        assert_eq!(m, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut m = model(1.0);
        let mut opt = OptimizerState::new(&m, AdamConfig { lr: 0.01, ..AdamConfig::default() });
        let g = grads(&m, 1.0, 0.0);
        adam_update(&mut m, &g, &mut opt).unwrap();
        assert!((theta_of(&m) - (1.0 - 0.01)).abs() < 1e-9);
    }

    #[test]
    fn constant_gradient_steps_approach_lr_sign() {
        let mut m = model(0.0);
        let mut opt = OptimizerState::new(&m, AdamConfig { lr: 0.01, ..AdamConfig::default() });
        let g = grads(&m, -3.0, 0.0);
        let mut last = theta_of(&m);
        for _ in 0..500 {
            adam_update(&mut m, &g, &mut opt).unwrap();
            let now = theta_of(&m);
            assert!(((now - last) - 0.01).abs() < 1e-6);
            last = now;
        }
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let mut m = model(1.0);
        let before = m.clone();
        let mut opt = OptimizerState::new(&m, AdamConfig::default());
        let g = grads(&m, 0.5, f64::NAN);
        assert!(matches!(adam_update(&mut m, &g, &mut opt), Err(Error::NonFiniteGradient { layer: 0, index: 0 })));
        assert_eq!(m, before);
        assert_eq!(opt.step, 0);
    }
}
