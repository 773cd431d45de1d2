//! The four training objectives and their weighted combination: noise MSE,
//! the variational term for the learned variance, and cross-entropy plus
//! dice on the decoded silhouette.

use crate::autodiff::{ops, Graph, NodeId};
use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::schedule::DiffusionSchedule;

/// Probability floor used when clamping predicted foreground probabilities.
pub const PROB_CLAMP: f64 = 1e-7;

/// Loss weights (lambda 1..4 applied to MSE, VIB, CE, DICE in that order).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lambdas<T> {
    pub mse: T,
    pub vib: T,
    pub ce: T,
    pub dice: T,
}

impl<T: Scalar> Default for Lambdas<T> {
    fn default() -> Self {
        Self {
            mse: T::from_f(3.0),
            vib: T::one(),
            ce: T::one(),
            dice: T::one(),
        }
    }
}

/// Scalar values of one training step's loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport<T> {
    pub mse: T,
    pub vib: T,
    pub ce: T,
    pub dice: T,
    pub total: T,
    pub lambdas: Lambdas<T>,
}

impl<T: Scalar> LossReport<T> {
    /// Combine parts with weights. The summation order here is the single
    /// source of truth for the decomposition identity; the graph-side total
    /// uses the same order so both give bit-identical results.
    pub fn compose(mse: T, vib: T, ce: T, dice: T, lambdas: Lambdas<T>) -> Self {
        let total = ((lambdas.mse * mse + lambdas.vib * vib) + lambdas.ce * ce) + lambdas.dice * dice;
        Self {
            mse,
            vib,
            ce,
            dice,
            total,
            lambdas,
        }
    }
}

/// Graph node ids of the loss terms built for one step.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub mse: NodeId,
    pub vib: NodeId,
    pub ce: NodeId,
    pub dice: NodeId,
    pub total: NodeId,
}

/// Mean squared error between two same-shape fields.
pub fn mse_loss<T: Scalar>(g: &mut Graph<T>, pred: NodeId, target: NodeId) -> Result<NodeId> {
    if g.shape(pred) != g.shape(target) {
        return Err(Error::shape(
            "mse_loss",
            format!("{:?}", g.shape(target)),
            format!("{:?}", g.shape(pred)),
        ));
    }
    let d = ops::sub(g, pred, target);
    let sq = ops::mul(g, d, d);
    Ok(ops::mean_all(g, sq))
}

fn validate_binary<T: Scalar>(mask: &ndarray::ArrayD<T>, context: &str) -> Result<()> {
    for &v in mask.iter() {
        if v != T::zero() && v != T::one() {
            return Err(Error::Data(format!("{context}: mask value {v} is not binary")));
        }
    }
    Ok(())
}

/// Binary cross-entropy over foreground probabilities, mean-reduced.
/// `probs` may be any shape matching `target`; probabilities are clamped to
/// `[PROB_CLAMP, 1 - PROB_CLAMP]` before the logs.
pub fn ce_loss<T: Scalar>(
    g: &mut Graph<T>,
    probs: NodeId,
    target: &ndarray::ArrayD<T>,
) -> Result<NodeId> {
    if g.shape(probs) != target.shape() {
        return Err(Error::shape(
            "ce_loss",
            format!("{:?}", target.shape()),
            format!("{:?}", g.shape(probs)),
        ));
    }
    validate_binary(target, "ce_loss")?;
    let clamp_lo = T::from_f(PROB_CLAMP);
    let clamp_hi = T::one() - clamp_lo;
    let p = ops::clamp(g, probs, clamp_lo, clamp_hi);
    let y = g.constant(target.clone());
    let one_minus_y = g.constant(target.mapv(|v| T::one() - v));
    let ln_p = ops::ln(g, p);
    let neg_p = ops::neg(g, p);
    let one_minus_p = ops::add_scalar(g, neg_p, T::one());
    let ln_q = ops::ln(g, one_minus_p);
    let fg = ops::mul(g, y, ln_p);
    let bg = ops::mul(g, one_minus_y, ln_q);
    let s = ops::add(g, fg, bg);
    let m = ops::mean_all(g, s);
    Ok(ops::neg(g, m))
}

/// Dice loss per frame, averaged over the batch. Both-empty frames score 0
/// (perfect agreement); otherwise the raw ratio is used so that equality
/// gives exactly 0 and disjoint masks exactly 1.
pub fn dice_loss<T: Scalar>(
    g: &mut Graph<T>,
    probs: NodeId,
    target: &ndarray::ArrayD<T>,
) -> Result<NodeId> {
    if g.shape(probs) != target.shape() {
        return Err(Error::shape(
            "dice_loss",
            format!("{:?}", target.shape()),
            format!("{:?}", g.shape(probs)),
        ));
    }
    validate_binary(target, "dice_loss")?;
    let batch = g.shape(probs)[0];
    let y = g.constant(target.clone());
    let yp = ops::mul(g, y, probs);
    let inter = ops::sum_per_item(g, yp);
    let pp = ops::mul(g, probs, probs);
    let p_sq = ops::sum_per_item(g, pp);
    let yy = ops::mul(g, y, y);
    let y_sq = ops::sum_per_item(g, yy);
    let den = ops::add(g, y_sq, p_sq);

    // mask out frames where numerator and denominator are both empty
    let den_vals: Vec<T> = g.value(den).iter().cloned().collect();
    let nonempty: Vec<T> = den_vals
        .iter()
        .map(|&v| if v > T::zero() { T::one() } else { T::zero() })
        .collect();
    let guard: Vec<T> = den_vals
        .iter()
        .map(|&v| if v > T::zero() { T::zero() } else { T::one() })
        .collect();

    let two_inter = ops::mul_scalar(g, inter, T::from_f(2.0));
    let den_guarded = ops::affine_per_item(g, den, vec![T::one(); batch], guard);
    let ratio = ops::div(g, two_inter, den_guarded);
    let neg_ratio = ops::neg(g, ratio);
    let one_minus = ops::add_scalar(g, neg_ratio, T::one());
    let per_frame = ops::affine_per_item(g, one_minus, nonempty, vec![T::zero(); batch]);
    Ok(ops::mean_all(g, per_frame))
}

/// Closed-form KL divergence between two 1-D Gaussians; reference for the
/// variational term's unit checks.
pub fn gaussian_kl(mean_q: f64, var_q: f64, mean_p: f64, var_p: f64) -> f64 {
    0.5 * ((var_p / var_q).ln() + (var_q + (mean_q - mean_p).powi(2)) / var_p - 1.0)
}

/// Variational bound term training the reverse-process variance.
///
/// For items at `t >= 2`: `KL(q(y_{t-1} | y_t, y0) || p_theta)` with the
/// model mean treated as a constant; at `t = 1`: Gaussian NLL of `y0` under
/// `p_theta`. Gradient flows only into `pred_var_logit`; `y0`, `y_t`, and
/// `pred_noise` enter as detached snapshots.
pub fn vib_loss<T: Scalar>(
    g: &mut Graph<T>,
    sched: &DiffusionSchedule<T>,
    ts: &[usize],
    y0: NodeId,
    y_t: NodeId,
    pred_noise: NodeId,
    pred_var_logit: NodeId,
) -> Result<NodeId> {
    let shape = g.shape(y0).to_vec();
    if shape.len() != 4 {
        return Err(Error::shape("vib_loss", "[B, C, H, W]", format!("{shape:?}")));
    }
    let (batch, channels) = (shape[0], shape[1]);
    if ts.len() != batch {
        return Err(Error::shape(
            "vib_loss/timesteps",
            format!("[{batch}]"),
            format!("[{}]", ts.len()),
        ));
    }
    for &t in ts {
        if t == 0 || t > sched.steps() {
            return Err(Error::TimestepOutOfRange {
                t,
                t_max: sched.steps(),
            });
        }
    }
    let logit_shape = g.shape(pred_var_logit);
    if logit_shape != [batch, 1, shape[2], shape[3]] {
        return Err(Error::shape(
            "vib_loss/pred_var_logit",
            format!("[{batch}, 1, {}, {}]", shape[2], shape[3]),
            format!("{logit_shape:?}"),
        ));
    }

    // Constant per-item targets computed from detached snapshots.
    let y0_v = g.value(y0).clone();
    let yt_v = g.value(y_t).clone();
    let noise_v = g.value(pred_noise).clone();

    let mut scale = Vec::with_capacity(batch);
    let mut shift = Vec::with_capacity(batch);
    let mut term_shift = Vec::with_capacity(batch);
    let mut c_target = ndarray::ArrayD::<T>::zeros(ndarray::IxDyn(&shape));
    let ln_2pi = T::from_f((2.0 * std::f64::consts::PI).ln());
    for b in 0..batch {
        let t = ts[b];
        let pv = sched.posterior_variance(t);
        let ln_beta = sched.beta(t).ln();
        let ln_pv = pv.ln();
        scale.push(ln_beta - ln_pv);
        shift.push(ln_pv);

        let yt_b = yt_v.index_axis(ndarray::Axis(0), b);
        let noise_b = noise_v.index_axis(ndarray::Axis(0), b);
        let y0_b = y0_v.index_axis(ndarray::Axis(0), b);
        // model mean from the predicted noise (constant w.r.t. the graph)
        let beta = sched.beta(t);
        let ab = sched.alpha_bar(t);
        let coef = beta / (T::one() - ab).sqrt();
        let inv_sqrt_alpha = T::one() / sched.alpha(t).sqrt();
        let mu_theta = (&yt_b.to_owned() - &(&noise_b.to_owned() * coef)) * inv_sqrt_alpha;

        let mut c_b = c_target.index_axis_mut(ndarray::Axis(0), b);
        if t >= 2 {
            let (c0, ct) = sched.posterior_mean_coefs(t);
            let mu_q = &y0_b.to_owned() * c0 + &yt_b.to_owned() * ct;
            let d = &mu_q - &mu_theta;
            c_b.assign(&(d.mapv(|v| v * v) + pv));
            term_shift.push(-ln_pv - T::one());
        } else {
            let d = &y0_b.to_owned() - &mu_theta;
            c_b.assign(&d.mapv(|v| v * v));
            term_shift.push(ln_2pi);
        }
    }

    // log Sigma, interpolated per pixel from the variance logit
    let shifted = ops::add_scalar(g, pred_var_logit, T::one());
    let halved = ops::mul_scalar(g, shifted, T::from_f(0.5));
    let v = ops::clamp(g, halved, T::zero(), T::one());
    let log_sigma = ops::affine_per_item(g, v, scale, shift);
    let log_sigma_c = ops::broadcast_channel(g, log_sigma, channels);

    let neg_log_sigma = ops::neg(g, log_sigma_c);
    let inv_sigma = ops::exp(g, neg_log_sigma);
    let c_node = g.constant(c_target);
    let weighted = ops::mul(g, inv_sigma, c_node);
    let shifted_term = ops::affine_per_item(g, log_sigma_c, vec![T::one(); batch], term_shift);
    let term = ops::add(g, shifted_term, weighted);
    let m = ops::mean_all(g, term);
    Ok(ops::mul_scalar(g, m, T::from_f(0.5)))
}

/// Weighted total. Rejects non-finite parts, naming the offending term.
pub fn total_loss<T: Scalar>(
    g: &mut Graph<T>,
    mse: NodeId,
    vib: NodeId,
    ce: NodeId,
    dice: NodeId,
    lambdas: Lambdas<T>,
) -> Result<(LossNodes, LossReport<T>)> {
    let parts: [(&'static str, NodeId); 4] =
        [("mse", mse), ("vib", vib), ("ce", ce), ("dice", dice)];
    for (name, id) in parts {
        let v = g.value(id)[[0]];
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss {
                term: match name {
                    "mse" => "mse",
                    "vib" => "vib",
                    "ce" => "ce",
                    _ => "dice",
                },
            });
        }
    }
    let wm = ops::mul_scalar(g, mse, lambdas.mse);
    let wv = ops::mul_scalar(g, vib, lambdas.vib);
    let wc = ops::mul_scalar(g, ce, lambdas.ce);
    let wd = ops::mul_scalar(g, dice, lambdas.dice);
    let s1 = ops::add(g, wm, wv);
    let s2 = ops::add(g, s1, wc);
    let total = ops::add(g, s2, wd);
    let report = LossReport::compose(
        g.value(mse)[[0]],
        g.value(vib)[[0]],
        g.value(ce)[[0]],
        g.value(dice)[[0]],
        lambdas,
    );
    Ok((
        LossNodes {
            mse,
            vib,
            ce,
            dice,
            total,
        },
        report,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::{seeded_rng, standard_normal_array};
    use ndarray::{ArrayD, IxDyn};
    use rand::Rng;

    #[test]
    fn mse_trivial_cases_and_hand_computed_value() {
        let mut g = Graph::<f64>::new(false);
        let a = g.constant(ArrayD::from_elem(IxDyn(&[2, 2]), 0.3));
        let same = g.constant(ArrayD::from_elem(IxDyn(&[2, 2]), 0.3));
        let id = mse_loss(&mut g, a, same).unwrap();
        assert_eq!(g.value(id)[[0]], 0.0);

        let zeros = g.constant(ArrayD::zeros(IxDyn(&[2, 2])));
        let c = g.constant(ArrayD::from_elem(IxDyn(&[2, 2]), 0.5));
        let id = mse_loss(&mut g, c, zeros).unwrap();
        assert!((g.value(id)[[0]] - 0.25).abs() < 1e-15);

        // fixed 2x2 fields: mean of squared differences by hand
        let p = g.constant(ArrayD::from_shape_vec(IxDyn(&[2, 2]), vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let t = g.constant(ArrayD::from_shape_vec(IxDyn(&[2, 2]), vec![0.0, 1.0, 1.0, 1.0]).unwrap());
        let id = mse_loss(&mut g, p, t).unwrap();
        let expect = (1.0 + 1.0 + 4.0 + 9.0) / 4.0;
        assert!((g.value(id)[[0]] - expect).abs() < 1e-15);

        let bad = g.constant(ArrayD::zeros(IxDyn(&[2, 3])));
        assert!(mse_loss(&mut g, p, bad).is_err());
    }

    #[test]
    fn ce_at_half_is_ln_two_and_at_target_is_tiny() {
        let mut g = Graph::<f64>::new(false);
        let target = ArrayD::from_shape_vec(IxDyn(&[1, 2, 2]), vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let half = g.constant(ArrayD::from_elem(IxDyn(&[1, 2, 2]), 0.5));
        let id = ce_loss(&mut g, half, &target).unwrap();
        assert!((g.value(id)[[0]] - std::f64::consts::LN_2).abs() < 1e-6);

        let exact = g.constant(target.clone());
        let id = ce_loss(&mut g, exact, &target).unwrap();
        assert!(g.value(id)[[0]] < 1e-6);

        let nonbinary = ArrayD::from_elem(IxDyn(&[1, 2, 2]), 0.5);
        let p = g.constant(ArrayD::from_elem(IxDyn(&[1, 2, 2]), 0.5));
        assert!(ce_loss(&mut g, p, &nonbinary).is_err());
    }

    #[test]
    fn ce_gradient_matches_finite_differences_at_random_pixels() {
        let mut rng = seeded_rng(61, "ce-fd", 0);
        let target = ArrayD::from_shape_fn(IxDyn(&[2, 4, 8]), |_| {
            if rng.gen::<bool>() {
                1.0
            } else {
                0.0
            }
        });
        let probs = ArrayD::from_shape_fn(IxDyn(&[2, 4, 8]), |_| 0.05 + 0.9 * rng.gen::<f64>());

        let mut g = Graph::<f64>::new(true);
        let p = g.leaf(probs.clone(), true);
        let loss = ce_loss(&mut g, p, &target).unwrap();
        let mut grads = g.backward(loss);
        let analytic = grads.take(p).unwrap();

        let h = 1e-4;
        let eval = |probs: &ArrayD<f64>| {
            let mut g = Graph::<f64>::new(false);
            let p = g.constant(probs.clone());
            let id = ce_loss(&mut g, p, &target).unwrap();
            g.value(id)[[0]]
        };
        let mut checked = 0;
        while checked < 64 {
            let flat = rng.gen_range(0..probs.len());
            let mut plus = probs.clone();
            plus.as_slice_mut().unwrap()[flat] += h;
            let mut minus = probs.clone();
            minus.as_slice_mut().unwrap()[flat] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.as_slice().unwrap()[flat];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-10);
            assert!(rel < 1e-4, "pixel {flat}: {a} vs {numeric}");
            checked += 1;
        }
    }

    #[test]
    fn dice_exact_anchor_points() {
        let mut g = Graph::<f64>::new(false);
        // equality -> exactly 0
        let target = ArrayD::from_shape_vec(IxDyn(&[1, 3, 3]), vec![
            1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0,
        ])
        .unwrap();
        let p = g.constant(target.clone());
        let id = dice_loss(&mut g, p, &target).unwrap();
        assert_eq!(g.value(id)[[0]], 0.0);

        // disjoint -> exactly 1
        let pred = target.mapv(|v| 1.0 - v);
        let p = g.constant(pred);
        let id = dice_loss(&mut g, p, &target).unwrap();
        assert_eq!(g.value(id)[[0]], 1.0);

        // both empty -> 0
        let empty = ArrayD::zeros(IxDyn(&[1, 3, 3]));
        let p = g.constant(empty.clone());
        let id = dice_loss(&mut g, p, &empty).unwrap();
        assert_eq!(g.value(id)[[0]], 0.0);

        // 4 foreground pixels, probs 0.5 exactly there: 1 - 4/5
        let mut target = ArrayD::zeros(IxDyn(&[1, 4, 4]));
        for i in 0..4 {
            target[[0, 0, i]] = 1.0;
        }
        let probs = target.mapv(|v: f64| v * 0.5);
        let p = g.constant(probs);
        let id = dice_loss(&mut g, p, &target).unwrap();
        assert!((g.value(id)[[0]] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn dice_is_a_foreground_measure_not_label_symmetric() {
        // complement-relabeling both arguments changes the value: the ratio
        // only scores foreground overlap
        let mut g = Graph::<f64>::new(false);
        let target = ArrayD::from_shape_vec(IxDyn(&[1, 2, 2]), vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let pred = ArrayD::from_shape_vec(IxDyn(&[1, 2, 2]), vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        let a = {
            let p = g.constant(pred.clone());
            dice_loss(&mut g, p, &target).unwrap()
        };
        let b = {
            let p = g.constant(pred.mapv(|v| 1.0 - v));
            let flipped = target.mapv(|v| 1.0 - v);
            dice_loss(&mut g, p, &flipped).unwrap()
        };
        assert!((g.value(a)[[0]] - 1.0 / 3.0).abs() < 1e-12);
        assert!((g.value(b)[[0]] - 1.0 / 11.0).abs() < 1e-12);

        // the two argument slots carry different contracts: the target slot
        // rejects soft values
        let p = g.constant(target);
        assert!(dice_loss(&mut g, p, &pred).is_err());
    }

    #[test]
    fn dice_gradient_matches_finite_differences() {
        let mut rng = seeded_rng(62, "dice-fd", 0);
        let target = ArrayD::from_shape_fn(IxDyn(&[2, 4, 8]), |_| {
            if rng.gen::<f64>() < 0.3 {
                1.0
            } else {
                0.0
            }
        });
        let probs = ArrayD::from_shape_fn(IxDyn(&[2, 4, 8]), |_| 0.05 + 0.9 * rng.gen::<f64>());
        let mut g = Graph::<f64>::new(true);
        let p = g.leaf(probs.clone(), true);
        let loss = dice_loss(&mut g, p, &target).unwrap();
        let mut grads = g.backward(loss);
        let analytic = grads.take(p).unwrap();

        let h = 1e-4;
        let eval = |probs: &ArrayD<f64>| {
            let mut g = Graph::<f64>::new(false);
            let p = g.constant(probs.clone());
            let id = dice_loss(&mut g, p, &target).unwrap();
            g.value(id)[[0]]
        };
        for _ in 0..64 {
            let flat = rng.gen_range(0..probs.len());
            let mut plus = probs.clone();
            plus.as_slice_mut().unwrap()[flat] += h;
            let mut minus = probs.clone();
            minus.as_slice_mut().unwrap()[flat] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.as_slice().unwrap()[flat];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            assert!(rel < 1e-4, "pixel {flat}: {a} vs {numeric}");
        }
    }

    #[test]
    fn dice_stays_in_unit_interval() {
        let mut rng = seeded_rng(63, "dice-range", 0);
        for _ in 0..50 {
            let target = ArrayD::from_shape_fn(IxDyn(&[3, 5, 5]), |_| {
                if rng.gen::<f64>() < 0.4 {
                    1.0
                } else {
                    0.0
                }
            });
            let probs = ArrayD::from_shape_fn(IxDyn(&[3, 5, 5]), |_| rng.gen::<f64>());
            let mut g = Graph::<f64>::new(false);
            let p = g.constant(probs);
            let id = dice_loss(&mut g, p, &target).unwrap();
            let v = g.value(id)[[0]];
            assert!((0.0..=1.0).contains(&v), "dice {v}");
        }
    }

    fn vib_setup(
        t: usize,
        logit: f64,
    ) -> (f64, Option<ndarray::ArrayD<f64>>) {
        // builds a 1x1 field vib loss with true noise (so mu matches the
        // posterior mean); returns (loss, grad wrt pred_noise leaf)
        let sched = DiffusionSchedule::<f64>::linear(10, 0.1, 0.3).unwrap();
        let mut rng = seeded_rng(64, "vib", t as u64);
        let y0 = standard_normal_array::<f64, _>(&[1, 1, 1, 1], &mut rng);
        let eps = standard_normal_array::<f64, _>(&[1, 1, 1, 1], &mut rng);
        let yt = sched.q_sample(&y0, t, &eps).unwrap();
        let mut g = Graph::<f64>::new(true);
        let y0n = g.constant(y0);
        let ytn = g.constant(yt);
        let noise = g.leaf(eps, true);
        let logit_n = g.constant(ArrayD::from_elem(IxDyn(&[1, 1, 1, 1]), logit));
        let loss = vib_loss(&mut g, &sched, &[t], y0n, ytn, noise, logit_n).unwrap();
        let v = g.value(loss)[[0]];
        let mut grads = g.backward(loss);
        (v, grads.take(noise))
    }

    #[test]
    fn vib_is_zero_for_matched_gaussians() {
        // true noise makes mu_theta equal the posterior mean; logit -1 sets
        // Sigma to the posterior variance -> KL = 0
        let (v, _) = vib_setup(5, -1.0);
        assert!(v.abs() < 1e-9, "vib {v}");
    }

    #[test]
    fn vib_increases_as_sigma_moves_away_from_posterior() {
        let (at_pv, _) = vib_setup(5, -1.0);
        let (larger, _) = vib_setup(5, 0.0);
        let (largest, _) = vib_setup(5, 1.0);
        assert!(at_pv < larger && larger < largest);
        // closed-form oracle: KL grows monotonically in var_p beyond var_q
        let k1 = gaussian_kl(0.3, 0.02, 0.3, 0.02);
        let k2 = gaussian_kl(0.3, 0.02, 0.3, 0.04);
        let k4 = gaussian_kl(0.3, 0.02, 0.3, 0.08);
        assert!(k1.abs() < 1e-15 && k1 < k2 && k2 < k4);
    }

    #[test]
    fn vib_gradient_with_respect_to_pred_noise_is_identically_zero() {
        for t in [1, 2, 7] {
            let (_, grad) = vib_setup(t, 0.3);
            assert!(grad.is_none(), "t={t}: stop-gradient violated");
        }
    }

    #[test]
    fn vib_t1_uses_gaussian_nll() {
        let sched = DiffusionSchedule::<f64>::linear(10, 0.1, 0.3).unwrap();
        let y0 = ArrayD::from_elem(IxDyn(&[1, 1, 1, 1]), 0.7);
        let eps = ArrayD::from_elem(IxDyn(&[1, 1, 1, 1]), 0.2);
        let yt = sched.q_sample(&y0, 1, &eps).unwrap();
        let mut g = Graph::<f64>::new(false);
        let y0n = g.constant(y0.clone());
        let ytn = g.constant(yt.clone());
        let noise = g.constant(eps.clone());
        let logit = g.constant(ArrayD::from_elem(IxDyn(&[1, 1, 1, 1]), -1.0));
        let loss = vib_loss(&mut g, &sched, &[1], y0n, ytn, noise, logit).unwrap();
        let sigma = sched.posterior_variance(1);
        let mu = sched.mean_from_noise(&yt, &eps, 1).unwrap()[[0, 0, 0, 0]];
        let expect =
            0.5 * ((2.0 * std::f64::consts::PI * sigma).ln() + (y0[[0, 0, 0, 0]] - mu).powi(2) / sigma);
        assert!((g.value(loss)[[0]] - expect).abs() < 1e-12);
    }

    #[test]
    fn total_loss_weighted_sum_and_decomposition() {
        let mut g = Graph::<f64>::new(false);
        let one = g.scalar(1.0);
        let (nodes, report) = total_loss(&mut g, one, one, one, one, Lambdas::default()).unwrap();
        assert_eq!(g.value(nodes.total)[[0]], 6.0);
        assert_eq!(report.total, 6.0);
        assert_eq!(
            report.total,
            ((report.lambdas.mse * report.mse + report.lambdas.vib * report.vib)
                + report.lambdas.ce * report.ce)
                + report.lambdas.dice * report.dice
        );

        let zero = g.scalar(0.0);
        let (nodes, _) = total_loss(&mut g, zero, zero, zero, zero, Lambdas::default()).unwrap();
        assert_eq!(g.value(nodes.total)[[0]], 0.0);

        // lambda = (1, 0, 0, 0) reduces to the mse part
        let m = g.scalar(0.37);
        let other = g.scalar(5.0);
        let l = Lambdas {
            mse: 1.0,
            vib: 0.0,
            ce: 0.0,
            dice: 0.0,
        };
        let (nodes, _) = total_loss(&mut g, m, other, other, other, l).unwrap();
        assert_eq!(g.value(nodes.total)[[0]], 0.37);
    }

    #[test]
    fn total_loss_rejects_non_finite_parts_by_name() {
        let mut g = Graph::<f64>::new(false);
        let ok = g.scalar(1.0);
        let bad = g.scalar(f64::NAN);
        let err = total_loss(&mut g, ok, bad, ok, ok, Lambdas::default()).unwrap_err();
        match err {
            Error::NonFiniteLoss { term } => assert_eq!(term, "vib"),
            other => panic!("unexpected error {other}"),
        }
    }
}
