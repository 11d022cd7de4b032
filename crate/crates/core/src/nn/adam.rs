use super::{FcnModel, Gradients, Layer};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, shaped like the model.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Layer>,
    v: Vec<Layer>,
    pub t: u64,
}

impl AdamState {
    pub fn new(model: &FcnModel) -> Self {
        let zeros: Vec<Layer> = model.layers.iter().map(Layer::zeros_like).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

fn update(theta: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], cfg: &AdamConfig, c1: f64, c2: f64) {
    for (((th, &g), m), v) in theta.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        *th -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step(model: &mut FcnModel, grads: &Gradients, state: &mut AdamState, cfg: &AdamConfig) {
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powf(state.t as f64);
    let c2 = 1.0 - cfg.beta2.powf(state.t as f64);
    for (((layer, g), m), v) in model
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        update(
            layer.weights.as_mut_slice(),
            g.weights.as_slice(),
            m.weights.as_mut_slice(),
            v.weights.as_mut_slice(),
            cfg,
            c1,
            c2,
        );
        update(
            layer.bias.as_mut_slice(),
            g.bias.as_slice(),
            m.bias.as_mut_slice(),
            v.bias.as_mut_slice(),
            cfg,
            c1,
            c2,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::super::Activation;
    use super::*;

    fn model_and_grads() -> (FcnModel, Gradients) {
        let model = FcnModel::initialized(&[3, 4, 2], Activation::Selu, 1).unwrap();
        let grads = Gradients {
            layers: model.layers.iter().map(Layer::zeros_like).collect(),
        };
        (model, grads)
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let (mut model, grads) = model_and_grads();
        let before = model.clone();
        let mut st = AdamState::new(&model);
        adam_step(&mut model, &grads, &mut st, &AdamConfig::default());
        assert_eq!(model, before);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // bias correction makes the first step -lr * g / (|g| + eps')
        let (mut model, mut grads) = model_and_grads();
        let before = model.clone();
        grads.layers[0].weights[(1, 2)] = 0.5;
        grads.layers[1].bias[0] = -2.0;
        let mut st = AdamState::new(&model);
        let cfg = AdamConfig::default();
        adam_step(&mut model, &grads, &mut st, &cfg);
        let dw = model.layers[0].weights[(1, 2)] - before.layers[0].weights[(1, 2)];
        let db = model.layers[1].bias[0] - before.layers[1].bias[0];
        assert!((dw + cfg.lr * 0.5 / (0.5 + cfg.eps)).abs() <= 1e-15);
        assert!((db - cfg.lr * 2.0 / (2.0 + cfg.eps)).abs() <= 1e-15);
        let changed = model
            .parameters_flat()
            .iter()
            .zip(before.parameters_flat())
            .filter(|(a, b)| **a != *b)
            .count();
        assert_eq!(changed, 2);
    }

    #[test]
    fn constant_gradient_steps_stay_near_learning_rate() {
        let (mut model, mut grads) = model_and_grads();
        grads.layers[1].bias[1] = 3.0;
        let start = model.layers[1].bias[1];
        let mut st = AdamState::new(&model);
        let cfg = AdamConfig::default();
        for _ in 0..10 {
            adam_step(&mut model, &grads, &mut st, &cfg);
        }
        let moved = start - model.layers[1].bias[1];
        assert!((moved - 10.0 * cfg.lr).abs() <= 1e-9, "{moved}");
    }
}
