//! Adam with bias correction, plus global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Real;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zeroed moments sized to `params`, with the standard β and ε defaults.
    pub fn new<F: Real>(params: &ParamStore<F>, learning_rate: f64) -> Self {
        let sizes: Vec<usize> = params.iter().map(|p| p.value.len()).collect();
        AdamState {
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Applies one update from the gradients stored on `params`.
    ///
    /// Parameters without a gradient still have their moments decayed, which
    /// is what the dense update does with a zero gradient.
    pub fn step<F: Real>(&mut self, params: &mut ParamStore<F>) -> Result<()> {
        if params.len() != self.first_moment.len()
            || params
                .iter()
                .zip(&self.first_moment)
                .any(|(p, m)| p.value.len() != m.len())
        {
            return Err(Error::invalid("optimizer state does not match parameters"));
        }
        for p in params.iter() {
            if let Some(g) = &p.grad {
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of {}", p.name)));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in params
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            let data = p.value.data_mut();
            for i in 0..data.len() {
                let g = p.grad.as_ref().map_or(0.0, |g| g[i].as_f64());
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let delta = self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
                if delta != 0.0 {
                    data[i] = F::of(data[i].as_f64() - delta);
                }
            }
        }
        Ok(())
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm<F: Real>(params: &mut ParamStore<F>, max_norm: f64) -> f64 {
    let sq: f64 = params
        .iter()
        .filter_map(|p| p.grad.as_ref())
        .flat_map(|g| g.iter())
        .map(|x| x.as_f64() * x.as_f64())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = F::of(max_norm / norm);
        for p in params.iter_mut() {
            if let Some(g) = &mut p.grad {
                g.iter_mut().for_each(|x| *x = *x * s);
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store(x: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(vec![x]));
        s
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = store(0.7);
        let mut adam = AdamState::new(&p, 1e-5);
        p.get_mut(crate::params::ParamId(0)).grad = Some(vec![0.0]);
        adam.step(&mut p).unwrap();
        assert_eq!(p.value(crate::params::ParamId(0)).data(), &[0.7]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = store(1.0);
        let mut adam = AdamState::new(&p, 1e-5);
        let id = crate::params::ParamId(0);
        p.get_mut(id).grad = Some(vec![1.0]);
        adam.step(&mut p).unwrap();
        let moved = 1.0 - p.value(id).data()[0];
        assert!((moved - 1e-5).abs() < 1e-12, "{moved}");
        let before = p.value(id).data()[0];
        adam.step(&mut p).unwrap();
        assert!(p.value(id).data()[0] < before);
        assert_eq!(adam.step, 2);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut p = store(1.0);
        let mut adam = AdamState::new(&p, 1e-3);
        p.get_mut(crate::params::ParamId(0)).grad = Some(vec![f64::NAN]);
        let err = adam.step(&mut p).unwrap_err();
        assert!(err.to_string().contains('w'));
        assert_eq!(adam.step, 0);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut s = ParamStore::<f64>::new();
        let a = s.add("a", Tensor::vector(vec![0.0, 0.0]));
        s.get_mut(a).grad = Some(vec![3.0, 4.0]);
        let n = clip_global_norm(&mut s, 1.0);
        assert_eq!(n, 5.0);
        let g = s.get(a).grad.as_ref().unwrap();
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
    }
}
