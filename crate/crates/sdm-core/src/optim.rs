//! AdamW with decoupled weight decay and optional global-norm clipping.

use crate::num::Scalar;
use crate::params::ParamStore;
use ndarray::ArrayD;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub grad_norm: f64,
    pub clipped: bool,
}

pub struct AdamW<T: Scalar> {
    cfg: AdamWConfig,
    step: u64,
    first_moment: BTreeMap<String, ArrayD<T>>,
    second_moment: BTreeMap<String, ArrayD<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(cfg: AdamWConfig) -> Self {
        Self {
            cfg,
            step: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> AdamWConfig {
        self.cfg
    }

    /// Apply one update. Only trainable parameters with a gradient entry
    /// are touched. Returns the pre-clip global gradient norm.
    pub fn step(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &BTreeMap<String, ArrayD<T>>,
        clip_norm: Option<f64>,
    ) -> StepStats {
        self.step += 1;
        let names = params.trainable_names();

        let mut sq_sum = 0.0f64;
        for name in &names {
            if let Some(g) = grads.get(name) {
                for &v in g.iter() {
                    let f = v.to_f64x();
                    sq_sum += f * f;
                }
            }
        }
        let grad_norm = sq_sum.sqrt();
        let (scale, clipped) = match clip_norm {
            Some(c) if grad_norm > c && grad_norm > 0.0 => (c / grad_norm, true),
            _ => (1.0, false),
        };

        let bc1 = 1.0 - self.cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.step as i32);
        let b1 = T::from_f(self.cfg.beta1);
        let b2 = T::from_f(self.cfg.beta2);
        let one_m_b1 = T::from_f(1.0 - self.cfg.beta1);
        let one_m_b2 = T::from_f(1.0 - self.cfg.beta2);
        let lr = T::from_f(self.cfg.lr);
        let eps = T::from_f(self.cfg.eps);
        let wd = T::from_f(self.cfg.weight_decay);
        let inv_bc1 = T::from_f(1.0 / bc1);
        let inv_bc2 = T::from_f(1.0 / bc2);
        let scale_t = T::from_f(scale);

        for name in &names {
            let Some(grad) = grads.get(name) else { continue };
            let value = params.get_mut(name);
            let m = self
                .first_moment
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(value.raw_dim()));
            let v = self
                .second_moment
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(value.raw_dim()));
            ndarray::Zip::from(value)
                .and(m)
                .and(v)
                .and(grad)
                .for_each(|p, m, v, &g| {
                    let gs = g * scale_t;
                    *m = b1 * *m + one_m_b1 * gs;
                    *v = b2 * *v + one_m_b2 * gs * gs;
                    let m_hat = *m * inv_bc1;
                    let v_hat = *v * inv_bc2;
                    *p = *p - lr * (m_hat / (v_hat.sqrt() + eps) + wd * *p);
                });
        }

        StepStats { grad_norm, clipped }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::zeros;
    use ndarray::IxDyn;

    #[test]
    fn minimizes_a_quadratic() {
        // f(p) = 0.5 * (p - 3)^2, gradient p - 3
        let mut ps = ParamStore::<f64>::new();
        ps.insert("p", zeros(&[1]), true);
        let mut opt = AdamW::new(AdamWConfig {
            lr: 0.05,
            weight_decay: 0.0,
            ..Default::default()
        });
        for _ in 0..2000 {
            let p = ps.get("p")[[0]];
            let mut grads = BTreeMap::new();
            grads.insert("p".to_string(), ArrayD::from_elem(IxDyn(&[1]), p - 3.0));
            opt.step(&mut ps, &grads, None);
        }
        assert!((ps.get("p")[[0]] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn frozen_parameters_never_move_and_clipping_reports() {
        let mut ps = ParamStore::<f64>::new();
        ps.insert("frozen/w", zeros(&[2]), false);
        ps.insert("live/w", zeros(&[2]), true);
        let before = ps.get("frozen/w").clone();
        let mut opt = AdamW::new(AdamWConfig::default());
        let mut grads = BTreeMap::new();
        grads.insert("frozen/w".to_string(), ArrayD::from_elem(IxDyn(&[2]), 100.0));
        grads.insert("live/w".to_string(), ArrayD::from_elem(IxDyn(&[2]), 100.0));
        let stats = opt.step(&mut ps, &grads, Some(1.0));
        assert!(stats.clipped);
        assert!((stats.grad_norm - (2.0f64 * 100.0 * 100.0).sqrt()).abs() < 1e-9);
        assert_eq!(&before, ps.get("frozen/w"));
        assert!(ps.get("live/w")[[0]] != 0.0);
    }
}
