use serde::{Deserialize, Serialize};

use super::mlp::MlpParams;
use super::NumericsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam moments for one [`MlpParams`], flattened in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    label: String,
    config: AdamConfig,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
}

impl OptimizerState {
    pub fn new(label: impl Into<String>, params: &MlpParams, config: AdamConfig) -> Self {
        let n = params.num_params();
        Self {
            label: label.into(),
            config,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    /// One bias-corrected Adam update. A nonfinite gradient leaves both the
    /// parameters and the state untouched.
    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpParams) -> Result<(), NumericsError> {
        if params.num_params() != self.first_moment.len() || grads.num_params() != self.first_moment.len() {
            return Err(NumericsError::Dimension(format!(
                "{}: optimizer tracks {} parameters, got params {} / grads {}",
                self.label,
                self.first_moment.len(),
                params.num_params(),
                grads.num_params()
            )));
        }
        for (k, layer) in grads.layers().iter().enumerate() {
            if !layer.weight.all_finite() {
                return Err(NumericsError::NonFinite(format!(
                    "{}.layers[{k}].weight gradient",
                    self.label
                )));
            }
            if !layer.bias.all_finite() {
                return Err(NumericsError::NonFinite(format!(
                    "{}.layers[{k}].bias gradient",
                    self.label
                )));
            }
        }
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let t = (self.step_count + 1) as f64;
        let c1 = 1.0 - beta1.powf(t);
        let c2 = 1.0 - beta2.powf(t);
        let g = grads.flat();
        let mut p = params.flat();
        for i in 0..p.len() {
            let m = beta1 * self.first_moment[i] + (1.0 - beta1) * g[i];
            let v = beta2 * self.second_moment[i] + (1.0 - beta2) * g[i] * g[i];
            self.first_moment[i] = m;
            self.second_moment[i] = v;
            p[i] -= learning_rate * (m / c1) / ((v / c2).sqrt() + epsilon);
        }
        params.set_flat(&p);
        self.step_count += 1;
        Ok(())
    }
}

/// Functional form of [`OptimizerState::step`].
pub fn adam_step(
    params: &MlpParams,
    grads: &MlpParams,
    state: &OptimizerState,
) -> Result<(MlpParams, OptimizerState), NumericsError> {
    let mut p = params.clone();
    let mut s = state.clone();
    s.step(&mut p, grads)?;
    Ok((p, s))
}
