//! Adam optimizer with bias correction.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::matrix::Matrix;
use super::store::ParameterStore;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    moments: BTreeMap<String, (Matrix, Matrix)>,
}

impl OptimizerState {
    pub fn new(params: &ParameterStore, learning_rate: f64) -> Self {
        let moments = params
            .iter()
            .map(|(name, entry)| {
                let z = Matrix::zeros(entry.value.rows(), entry.value.cols());
                (name.to_string(), (z.clone(), z))
            })
            .collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            moments,
        }
    }

    pub fn moment_names(&self) -> impl Iterator<Item = &str> {
        self.moments.keys().map(|s| s.as_str())
    }

    pub fn moments(&self, name: &str) -> Option<&(Matrix, Matrix)> {
        self.moments.get(name)
    }

    pub fn set_moments(&mut self, name: &str, first: Matrix, second: Matrix) {
        self.moments.insert(name.to_string(), (first, second));
    }
}

/// One Adam update over every parameter in the store. Gradients must be
/// populated for every named parameter and are cleared afterward.
pub fn adam_step(params: &mut ParameterStore, state: &mut OptimizerState) -> Result<()> {
    state.step += 1;
    let t = state.step as f64;
    let bias1 = 1.0 - state.beta1.powf(t);
    let bias2 = 1.0 - state.beta2.powf(t);

    let names: Vec<String> = params.names().map(|s| s.to_string()).collect();
    for name in names {
        let (m, v) = state
            .moments
            .get_mut(&name)
            .ok_or_else(|| Error::Config(format!("optimizer has no moment slot for '{name}'")))?;
        let grad = params.gradient(&name)?.clone();
        if grad.shape() != m.shape() {
            return Err(Error::Shape(format!(
                "moment shape {:?} does not match gradient {:?} for '{name}'",
                m.shape(),
                grad.shape()
            )));
        }
        let value = params.value_mut(&name)?;
        for i in 0..grad.len() {
            let g = grad.data()[i];
            let mi = state.beta1 * m.data()[i] + (1.0 - state.beta1) * g;
            let vi = state.beta2 * v.data()[i] + (1.0 - state.beta2) * g * g;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bias1;
            let v_hat = vi / bias2;
            value.data_mut()[i] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    params.zero_gradients();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut params = ParameterStore::new();
        params
            .insert("w", Matrix::from_vec(2, 2, vec![1.0, -2.0, 3.0, 0.5]))
            .unwrap();
        let before = params.value("w").unwrap().clone();
        let mut state = OptimizerState::new(&params, 1e-3);
        adam_step(&mut params, &mut state).unwrap();
        assert_eq!(params.value("w").unwrap(), &before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // Single scalar, g = 1, lr = 0.1: bias-corrected first step is
        // lr * 1 / (1 + eps) (hand evaluation of the recurrence).
        let mut params = ParameterStore::new();
        params.insert("x", Matrix::from_vec(1, 1, vec![2.0])).unwrap();
        params
            .add_to_gradient("x", &Matrix::from_vec(1, 1, vec![1.0]))
            .unwrap();
        let mut state = OptimizerState::new(&params, 0.1);
        adam_step(&mut params, &mut state).unwrap();
        let x = params.value("x").unwrap().scalar();
        assert!((x - (2.0 - 0.1)).abs() < 1e-6, "x = {x}");
        // Gradients cleared afterward.
        assert_eq!(params.gradient("x").unwrap().scalar(), 0.0);
    }

    #[test]
    fn missing_moment_slot_is_a_configuration_error() {
        let mut params = ParameterStore::new();
        params.insert("a", Matrix::zeros(1, 1)).unwrap();
        let mut state = OptimizerState::new(&params, 1e-3);
        params.insert("late", Matrix::zeros(1, 1)).unwrap();
        assert!(adam_step(&mut params, &mut state).is_err());
    }
}
