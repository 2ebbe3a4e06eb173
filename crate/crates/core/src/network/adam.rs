use serde::{Deserialize, Serialize};

use super::{Gradients, Model};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers for every weight and bias.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: AdamConfig,
    step: u64,
    m: Gradients,
    v: Gradients,
}

impl OptimizerState {
    pub fn new(model: &Model, config: AdamConfig) -> Self {
        OptimizerState {
            config,
            step: 0,
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update, followed by mask enforcement.
pub fn adam_step(model: &mut Model, state: &mut OptimizerState, grads: &Gradients) -> Result<()> {
    if grads.weights.len() != model.layers.len() || grads.biases.len() != model.layers.len() {
        return Err(Error::Contract(
            "gradient layer count does not match model".into(),
        ));
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let update = |params: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for i in 0..params.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + eps);
        }
    };
    for (i, layer) in model.layers.iter_mut().enumerate() {
        if grads.weights[i].len() != layer.len() || grads.biases[i].len() != layer.bias().len() {
            return Err(Error::dim(
                "adam_step",
                &[layer.len(), layer.bias().len()],
                &[grads.weights[i].len(), grads.biases[i].len()],
            ));
        }
        update(
            layer.weights_mut(),
            &grads.weights[i],
            &mut state.m.weights[i],
            &mut state.v.weights[i],
        );
        update(
            layer.bias_mut(),
            &grads.biases[i],
            &mut state.m.biases[i],
            &mut state.v.biases[i],
        );
    }
    model.apply_masks();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Architecture;
    use crate::tensor::Tensor;

    fn single_weight() -> Model {
        let arch = Architecture::Mlp {
            input: 1,
            hidden: vec![],
            classes: 1,
        };
        let mut m = Model::new(&arch, 0).unwrap();
        m.layer_mut(0).set_weights(&[1.0]).unwrap();
        m.layer_mut(0).set_bias(&[0.0]).unwrap();
        m
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut m = Model::new(&Architecture::default_mlp(4, 2), 3).unwrap();
        let before = m.clone();
        let mut state = OptimizerState::new(&m, AdamConfig::default());
        let zeros = Gradients::zeros_like(&m);
        adam_step(&mut m, &mut state, &zeros).unwrap();
        assert_eq!(m, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn quadratic_step_descends() {
        // L = w², g = 2w
        let mut m = single_weight();
        let mut state = OptimizerState::new(
            &m,
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
        );
        let grads = Gradients {
            weights: vec![vec![2.0]],
            biases: vec![vec![0.0]],
        };
        adam_step(&mut m, &mut state, &grads).unwrap();
        let w = m.layers()[0].weights().data()[0];
        assert!(w.abs() < 1.0);
    }

    #[test]
    fn least_squares_converges_to_closed_form() {
        // y = 2x - 1 + small deterministic perturbation; fit w, b with squared loss
        let xs: Vec<f64> = (0..20).map(|i| i as f64 / 10.0 - 1.0).collect();
        let ys: Vec<f64> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| 2.0 * x - 1.0 + 0.05 * ((i % 3) as f64 - 1.0))
            .collect();
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let w_opt = sxy / sxx;
        let b_opt = my - w_opt * mx;
        let loss = |w: f64, b: f64| {
            xs.iter()
                .zip(&ys)
                .map(|(x, y)| (w * x + b - y).powi(2))
                .sum::<f64>()
                / n
        };
        let optimum = loss(w_opt, b_opt);

        let mut m = single_weight();
        let mut state = OptimizerState::new(
            &m,
            AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            },
        );
        for _ in 0..200 {
            let x = Tensor::matrix(xs.len(), 1, xs.clone()).unwrap();
            let pred = m.forward(&x).unwrap();
            let (mut gw, mut gb) = (0.0, 0.0);
            for i in 0..xs.len() {
                let r = pred.data()[i] - ys[i];
                gw += 2.0 * r * xs[i] / n;
                gb += 2.0 * r / n;
            }
            let grads = Gradients {
                weights: vec![vec![gw]],
                biases: vec![vec![gb]],
            };
            adam_step(&mut m, &mut state, &grads).unwrap();
        }
        let w = m.layers()[0].weights().data()[0];
        let b = m.layers()[0].bias().data()[0];
        assert!(loss(w, b) - optimum < 1e-3, "{} vs {}", loss(w, b), optimum);
    }

    #[test]
    fn masked_weights_stay_zero_after_step() {
        let mut m = Model::new(&Architecture::default_mlp(3, 2), 1).unwrap();
        let mut mask = vec![1u8; m.layers()[0].len()];
        mask[0] = 0;
        m.layer_mut(0).set_mask(mask).unwrap();
        let mut state = OptimizerState::new(&m, AdamConfig::default());
        let mut grads = Gradients::zeros_like(&m);
        grads.weights[0][0] = 5.0;
        adam_step(&mut m, &mut state, &grads).unwrap();
        assert_eq!(m.layers()[0].weights().data()[0], 0.0);
    }
}
