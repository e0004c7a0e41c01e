//! Adam with decoupled weight decay.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::network::ParameterStore;
use crate::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Per-parameter moment estimates and step counters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    moments: Vec<(String, Vec<f64>, Vec<f64>, u64)>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    fn slot(&mut self, name: &str, len: usize) -> &mut (String, Vec<f64>, Vec<f64>, u64) {
        let i = match self.moments.iter().position(|m| m.0 == name) {
            Some(i) => i,
            None => {
                self.moments.push((name.to_string(), vec![0.0; len], vec![0.0; len], 0));
                self.moments.len() - 1
            }
        };
        &mut self.moments[i]
    }
}

/// Log-variance parameters are not decayed.
fn decays(name: &str) -> bool {
    !name.starts_with("loss.")
}

/// One Adam step over every parameter that has a gradient. Parameters without
/// a gradient are left untouched, weight decay included.
pub fn adam_step(
    store: &mut ParameterStore,
    grads: &[(String, Vec<f64>)],
    lr: f64,
    weight_decay: f64,
    state: &mut AdamState,
) -> Result<()> {
    for (name, g) in grads {
        if let Some(k) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(format!("`{name}` has gradient {} at index {k}", g[k])));
        }
        let len = store
            .get(name)
            .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter `{name}`")))?
            .numel();
        if len != g.len() {
            return Err(Error::Dimension {
                op: "adam_step",
                left: vec![len],
                right: vec![g.len()],
            });
        }
    }
    for (name, g) in grads {
        let (_, m, v, t) = state.slot(name, g.len());
        *t += 1;
        let c1 = 1.0 - math::powi(BETA1, *t);
        let c2 = 1.0 - math::powi(BETA2, *t);
        let wd = if decays(name) { weight_decay } else { 0.0 };
        let theta = store.get_mut(name).expect("checked above").data_mut();
        for k in 0..g.len() {
            m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
            v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            theta[k] -= lr * (m_hat / (math::sqrt(v_hat) + EPSILON) + wd * theta[k]);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single(name: &str, v: f64) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert(name, Tensor::scalar(v)).unwrap();
        s
    }

    #[test]
    fn constant_gradient_descends() {
        let mut s = single("w", 0.0);
        let mut st = AdamState::new();
        for _ in 0..50 {
            adam_step(&mut s, &[("w".into(), vec![2.5])], 1e-2, 0.0, &mut st).unwrap();
        }
        assert!(s.get("w").unwrap().data()[0] < -0.4);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut s = single("w", 0.7);
        let mut st = AdamState::new();
        adam_step(&mut s, &[("w".into(), vec![1.0])], 0.0, 3e-4, &mut st).unwrap();
        assert_eq!(s.get("w").unwrap().data()[0], 0.7);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // scalar reference recurrence written out by hand
        let (mut th, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut s = single("w", 1.0);
        let mut st = AdamState::new();
        for t in 1..=250 {
            let cur = s.get("w").unwrap().data()[0];
            adam_step(&mut s, &[("w".into(), vec![cur])], 1e-2, 0.0, &mut st).unwrap();
            m = 0.9 * m + 0.1 * th;
            v = 0.999 * v + 0.001 * th * th;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            th -= 1e-2 * mh / (vh.sqrt() + 1e-8);
            let got = s.get("w").unwrap().data()[0];
            assert!((got - th).abs() < 1e-12, "step {t}: {got} vs {th}");
            if t == 200 {
                assert!(got.abs() < 2e-2);
            }
        }
        assert!(s.get("w").unwrap().data()[0].abs() < 1e-2);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = single("enc.w", 1.0);
        let mut st = AdamState::new();
        let err = adam_step(&mut s, &[("enc.w".into(), vec![f64::NAN])], 1e-3, 0.0, &mut st).unwrap_err();
        assert!(matches!(&err, Error::NonFiniteGradient(m) if m.contains("enc.w")));
        assert_eq!(s.get("enc.w").unwrap().data()[0], 1.0);
    }

    #[test]
    fn log_sigma_exempt_from_decay() {
        let mut s = single("loss.log_sigma_c", 1.0);
        s.insert("w", Tensor::scalar(1.0)).unwrap();
        let mut st = AdamState::new();
        let g = vec![("loss.log_sigma_c".into(), vec![0.0]), ("w".into(), vec![0.0])];
        adam_step(&mut s, &g, 0.1, 0.5, &mut st).unwrap();
        assert_eq!(s.get("loss.log_sigma_c").unwrap().data()[0], 1.0);
        assert!((s.get("w").unwrap().data()[0] - 0.95).abs() < 1e-15);
    }
}
