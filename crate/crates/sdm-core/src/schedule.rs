//! Closed-form diffusion mathematics: the noise schedule, forward
//! corruption, posterior statistics, and the ancestral sampling step.
//!
//! Timesteps are 1-based at the API surface (`t` in `[1, T]`); the tables
//! are stored 0-based internally.

use crate::error::{Error, Result};
use crate::num::Scalar;
use ndarray::ArrayD;

/// Precomputed per-step quantities of a variance-preserving diffusion chain.
#[derive(Debug, Clone)]
pub struct DiffusionSchedule<T> {
    betas: Vec<T>,
    alphas: Vec<T>,
    alpha_bars: Vec<T>,
    posterior_variances: Vec<T>,
}

impl<T: Scalar> DiffusionSchedule<T> {
    /// Build all derived tables from an explicit beta sequence.
    pub fn from_betas(betas: Vec<T>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        for (i, &b) in betas.iter().enumerate() {
            if !(b > T::zero() && b < T::one()) {
                return Err(Error::Config(format!(
                    "beta[{}] = {} outside (0, 1)",
                    i + 1,
                    b
                )));
            }
        }
        let alphas: Vec<T> = betas.iter().map(|&b| T::one() - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut running = T::one();
        for &a in &alphas {
            running = running * a;
            alpha_bars.push(running);
        }
        // posterior variance beta_t * (1 - abar_{t-1}) / (1 - abar_t), with
        // the t = 1 boundary defined as beta_1.
        let mut posterior_variances = Vec::with_capacity(betas.len());
        posterior_variances.push(betas[0]);
        for i in 1..betas.len() {
            let v = betas[i] * (T::one() - alpha_bars[i - 1]) / (T::one() - alpha_bars[i]);
            posterior_variances.push(v);
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            posterior_variances,
        })
    }

    /// Linear beta schedule from `beta_start` (t = 1) to `beta_end` (t = T).
    pub fn linear(steps: usize, beta_start: T, beta_end: T) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("step count must be positive".into()));
        }
        if !(beta_start > T::zero() && beta_start <= beta_end && beta_end < T::one()) {
            return Err(Error::Config(format!(
                "beta endpoints ({}, {}) must satisfy 0 < start <= end < 1",
                beta_start, beta_end
            )));
        }
        let betas = if steps == 1 {
            vec![beta_start]
        } else {
            let denom = T::from_usize(steps - 1).unwrap();
            (0..steps)
                .map(|i| {
                    let f = T::from_usize(i).unwrap() / denom;
                    beta_start + (beta_end - beta_start) * f
                })
                .collect()
        };
        Self::from_betas(betas)
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::TimestepOutOfRange {
                t,
                t_max: self.steps(),
            });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> T {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> T {
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> T {
        self.alpha_bars[t - 1]
    }

    /// `alpha_bar` of the previous step, with the `t = 1` boundary equal to 1.
    pub fn alpha_bar_prev(&self, t: usize) -> T {
        if t <= 1 {
            T::one()
        } else {
            self.alpha_bars[t - 2]
        }
    }

    pub fn posterior_variance(&self, t: usize) -> T {
        self.posterior_variances[t - 1]
    }

    pub fn betas(&self) -> &[T] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[T] {
        &self.alpha_bars
    }

    /// Closed-form forward corruption:
    /// `y_t = sqrt(abar_t) * y0 + sqrt(1 - abar_t) * eps`.
    pub fn q_sample(&self, y0: &ArrayD<T>, t: usize, eps: &ArrayD<T>) -> Result<ArrayD<T>> {
        self.check_t(t)?;
        if y0.shape() != eps.shape() {
            return Err(Error::shape(
                "q_sample",
                format!("{:?}", y0.shape()),
                format!("{:?}", eps.shape()),
            ));
        }
        let ab = self.alpha_bar(t);
        let signal = ab.sqrt();
        let noise = (T::one() - ab).sqrt();
        Ok(y0 * signal + eps * noise)
    }

    /// Mean and variance of the forward-process posterior
    /// `q(y_{t-1} | y_t, y0)`. The variance is a per-step scalar.
    pub fn posterior_mean_variance(
        &self,
        y0: &ArrayD<T>,
        y_t: &ArrayD<T>,
        t: usize,
    ) -> Result<(ArrayD<T>, T)> {
        self.check_t(t)?;
        if y0.shape() != y_t.shape() {
            return Err(Error::shape(
                "posterior_mean_variance",
                format!("{:?}", y0.shape()),
                format!("{:?}", y_t.shape()),
            ));
        }
        let (c0, ct) = self.posterior_mean_coefs(t);
        Ok((y0 * c0 + y_t * ct, self.posterior_variance(t)))
    }

    /// Coefficients of `y0` and `y_t` in the posterior mean.
    pub fn posterior_mean_coefs(&self, t: usize) -> (T, T) {
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar_prev(t);
        let beta = self.beta(t);
        let alpha = self.alpha(t);
        let denom = T::one() - ab;
        let c0 = ab_prev.sqrt() * beta / denom;
        let ct = alpha.sqrt() * (T::one() - ab_prev) / denom;
        (c0, ct)
    }

    /// Model mean reconstructed from a noise prediction:
    /// `mu = (y_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t)`.
    pub fn mean_from_noise(&self, y_t: &ArrayD<T>, pred_noise: &ArrayD<T>, t: usize) -> Result<ArrayD<T>> {
        self.check_t(t)?;
        let beta = self.beta(t);
        let ab = self.alpha_bar(t);
        let coef = beta / (T::one() - ab).sqrt();
        let inv_sqrt_alpha = T::one() / self.alpha(t).sqrt();
        Ok((y_t - &(pred_noise * coef)) * inv_sqrt_alpha)
    }

    /// Per-element model variance from the learned interpolation logit:
    /// `Sigma = exp(v * ln(beta_t) + (1 - v) * ln(pv_t))` with
    /// `v = clamp((logit + 1) / 2, 0, 1)`.
    pub fn variance_from_logit(&self, logit: T, t: usize) -> T {
        let half = T::from_f(0.5);
        let v = ((logit + T::one()) * half).max(T::zero()).min(T::one());
        let log_beta = self.beta(t).ln();
        let log_pv = self.posterior_variance(t).ln();
        (v * log_beta + (T::one() - v) * log_pv).exp()
    }

    /// One ancestral sampling step `y_t -> y_{t-1}`. No noise is injected at
    /// the terminal step `t = 1`.
    pub fn p_sample_step(
        &self,
        pred_noise: &ArrayD<T>,
        pred_var_logit: &ArrayD<T>,
        y_t: &ArrayD<T>,
        t: usize,
        rng_draw: &ArrayD<T>,
    ) -> Result<ArrayD<T>> {
        self.check_t(t)?;
        for (name, arr) in [
            ("pred_noise", pred_noise),
            ("pred_var_logit", pred_var_logit),
            ("rng_draw", rng_draw),
        ] {
            if arr.shape() != y_t.shape() {
                return Err(Error::shape(
                    format!("p_sample_step/{name}"),
                    format!("{:?}", y_t.shape()),
                    format!("{:?}", arr.shape()),
                ));
            }
        }
        let mean = self.mean_from_noise(y_t, pred_noise, t)?;
        if t == 1 {
            return Ok(mean);
        }
        let mut out = mean;
        ndarray::Zip::from(&mut out)
            .and(pred_var_logit)
            .and(rng_draw)
            .for_each(|m, &l, &z| {
                *m = *m + self.variance_from_logit(l, t).sqrt() * z;
            });
        Ok(out)
    }
}
