use crate::error::{Error, Result};
use crate::mlp::{HeadGradients, MlpHead};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::InvalidConfig(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(head: &MlpHead) -> Self {
        let shapes: Vec<usize> = head
            .layers()
            .iter()
            .flat_map(|l| [l.weight().len(), l.bias().len()])
            .collect();
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// One bias-corrected Adam update.
pub fn adam_step(head: &mut MlpHead, grads: &HeadGradients, state: &mut AdamState, params: &AdamParams) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - params.beta1.powi(t);
    let bc2 = 1.0 - params.beta2.powi(t);
    let tensors = head
        .layers_mut()
        .iter_mut()
        .zip(grads.weights.iter().zip(&grads.biases))
        .flat_map(|(layer, (gw, gb))| {
            let (w, b) = layer.params_mut();
            [(w, gw.as_slice()), (b, gb.as_slice())]
        });
    for ((param, grad), (m, v)) in tensors.zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = params.beta1 * m[i] + (1.0 - params.beta1) * g;
            v[i] = params.beta2 * v[i] + (1.0 - params.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            let update = params.learning_rate * m_hat / (v_hat.sqrt() + params.eps);
            param[i] = (param[i] as f64 - update) as f32;
        }
    }
}

/// Plain gradient descent.
pub fn sgd_step(head: &mut MlpHead, grads: &HeadGradients, learning_rate: f64) {
    for (layer, (gw, gb)) in head.layers_mut().iter_mut().zip(grads.weights.iter().zip(&grads.biases)) {
        let (w, b) = layer.params_mut();
        for (p, g) in w.iter_mut().zip(gw).chain(b.iter_mut().zip(gb)) {
            *p = (*p as f64 - learning_rate * g) as f32;
        }
    }
}
