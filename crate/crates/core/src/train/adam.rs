use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with per-parameter moment buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    /// First and second moments keyed by parameter name.
    pub moments: BTreeMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// One update of every trainable parameter in `params`. A parameter
    /// without an entry in `grads` is treated as having zero gradient.
    pub fn step(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &BTreeMap<String, Tensor<T>>,
    ) -> Result<()> {
        for (name, g) in grads {
            let p = params.get(name).map_err(|_| {
                Error::InvalidArgument(format!("gradient for unknown parameter `{name}`"))
            })?;
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!(
                        "`{name}`: parameter {:?} vs gradient {:?}",
                        p.shape(),
                        g.shape()
                    ),
                ));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite { op: "adam_step" });
            }
        }
        for (name, p) in params.trainable() {
            if let Some((m, _)) = self.moments.get(name) {
                if m.shape() != p.shape() {
                    return Err(Error::shape(
                        "adam_step",
                        format!(
                            "`{name}`: moment {:?} vs parameter {:?}",
                            m.shape(),
                            p.shape()
                        ),
                    ));
                }
            }
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = T::lit(1.0 - c.beta1.powi(t));
        let bc2 = T::lit(1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        let names: Vec<String> = params.trainable().map(|(n, _)| n.clone()).collect();
        for name in names {
            let p = params.get_mut(&name).expect("listed above");
            let (m, v) = self.moments.entry(name.clone()).or_insert_with(|| {
                (
                    Tensor::zeros(p.shape().to_vec()),
                    Tensor::zeros(p.shape().to_vec()),
                )
            });
            let g = grads.get(&name);
            let (md, vd, pd) = (m.data_mut(), v.data_mut(), p.data_mut());
            for i in 0..pd.len() {
                let gi = g.map_or(T::zero(), |g| g.data()[i]);
                md[i] = b1 * md[i] + (T::one() - b1) * gi;
                vd[i] = b2 * vd[i] + (T::one() - b2) * gi * gi;
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                pd[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> ParamStore<f64> {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::full(vec![1], v));
        p
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = one_param(0.3);
        let mut s = AdamState::new(AdamConfig::default());
        let g = BTreeMap::from([("w".to_string(), Tensor::zeros(vec![1]))]);
        s.step(&mut p, &g).unwrap();
        s.step(&mut p, &BTreeMap::new()).unwrap();
        assert_eq!(p.get("w").unwrap().data()[0], 0.3);
        assert_eq!(s.step, 2);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [2.5, -0.01] {
            let mut p = one_param(0.0);
            let mut s = AdamState::new(AdamConfig::default());
            let grads = BTreeMap::from([("w".to_string(), Tensor::full(vec![1], g))]);
            s.step(&mut p, &grads).unwrap();
            let moved = p.get("w").unwrap().data()[0];
            assert!((moved + 5e-4 * f64::signum(g)).abs() < 1e-9, "{moved}");
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut p = one_param(0.0);
        let mut s = AdamState::new(AdamConfig::default());
        let grads = BTreeMap::from([("w".to_string(), Tensor::zeros(vec![2]))]);
        assert!(s.step(&mut p, &grads).is_err());
        assert_eq!(s.step, 0);
    }
}
