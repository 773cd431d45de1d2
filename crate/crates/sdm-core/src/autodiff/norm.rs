//! Group normalization with per-channel affine parameters.

use super::graph::{Graph, NodeId};
use super::ops::{from_vec, to_vec};
use crate::num::Scalar;

/// GroupNorm over `[B, C, H, W]`: statistics per (item, group), affine per
/// channel. `groups` must divide `C`.
pub fn group_norm<T: Scalar>(
    g: &mut Graph<T>,
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
    groups: usize,
    eps: T,
) -> NodeId {
    let xs = g.shape(x).to_vec();
    assert_eq!(xs.len(), 4, "group_norm: input rank");
    let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    assert!(groups > 0 && c % groups == 0, "group_norm: groups must divide channels");
    assert_eq!(g.shape(gamma), &[c], "group_norm: gamma shape");
    assert_eq!(g.shape(beta), &[c], "group_norm: beta shape");

    let gs = c / groups;
    let plane = h * w;
    let group_len = gs * plane;

    let xv = to_vec(g.value(x));
    let gammav = to_vec(g.value(gamma));
    let betav = to_vec(g.value(beta));

    let mut xhat = vec![T::zero(); xv.len()];
    let mut inv_stds = vec![T::zero(); b * groups];
    let mut out = vec![T::zero(); xv.len()];
    let norm = T::one() / T::from_usize(group_len).unwrap();
    for bi in 0..b {
        for gi in 0..groups {
            let start = (bi * c + gi * gs) * plane;
            let seg = &xv[start..start + group_len];
            let mut mean = T::zero();
            for &v in seg {
                mean = mean + v;
            }
            mean = mean * norm;
            let mut var = T::zero();
            for &v in seg {
                let d = v - mean;
                var = var + d * d;
            }
            var = var * norm;
            let inv_std = T::one() / (var + eps).sqrt();
            inv_stds[bi * groups + gi] = inv_std;
            for (k, &v) in seg.iter().enumerate() {
                let ch = gi * gs + k / plane;
                let xh = (v - mean) * inv_std;
                xhat[start + k] = xh;
                out[start + k] = gammav[ch] * xh + betav[ch];
            }
        }
    }
    let out = from_vec(&xs, out);

    g.push(out, &[x, gamma, beta], move |grad, sink| {
        let gv = to_vec(grad);
        if sink.wants(gamma) || sink.wants(beta) {
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for bi in 0..b {
                for ch in 0..c {
                    let start = (bi * c + ch) * plane;
                    for k in 0..plane {
                        dgamma[ch] = dgamma[ch] + gv[start + k] * xhat[start + k];
                        dbeta[ch] = dbeta[ch] + gv[start + k];
                    }
                }
            }
            sink.accumulate(gamma, from_vec(&[c], dgamma));
            sink.accumulate(beta, from_vec(&[c], dbeta));
        }
        if sink.wants(x) {
            let mut dx = vec![T::zero(); gv.len()];
            for bi in 0..b {
                for gi in 0..groups {
                    let start = (bi * c + gi * gs) * plane;
                    let inv_std = inv_stds[bi * groups + gi];
                    // dxhat = g * gamma; dx = inv_std * (dxhat - mean(dxhat)
                    //        - xhat * mean(dxhat * xhat))
                    let mut mean_dxhat = T::zero();
                    let mut mean_dxhat_xhat = T::zero();
                    for k in 0..group_len {
                        let ch = gi * gs + k / plane;
                        let dxh = gv[start + k] * gammav[ch];
                        mean_dxhat = mean_dxhat + dxh;
                        mean_dxhat_xhat = mean_dxhat_xhat + dxh * xhat[start + k];
                    }
                    mean_dxhat = mean_dxhat * norm;
                    mean_dxhat_xhat = mean_dxhat_xhat * norm;
                    for k in 0..group_len {
                        let ch = gi * gs + k / plane;
                        let dxh = gv[start + k] * gammav[ch];
                        dx[start + k] =
                            inv_std * (dxh - mean_dxhat - xhat[start + k] * mean_dxhat_xhat);
                    }
                }
            }
            sink.accumulate(x, from_vec(&[b, c, h, w], dx));
        }
    })
}

#[cfg(test)]
mod tests {
    use super::super::graph::Graph;
    use super::super::ops::{mean_all, mul, testutil::finite_difference_check};
    use super::*;
    use ndarray::{ArrayD, IxDyn};

    #[test]
    fn normalizes_each_group_to_zero_mean_unit_variance() {
        let mut g = Graph::<f64>::new(false);
        let x = g.constant(ArrayD::from_shape_fn(IxDyn(&[2, 4, 3, 3]), |ix| {
            (ix[1] as f64 + 1.0) * (ix[2] as f64 - 1.0) + 0.3 * ix[3] as f64
        }));
        let gamma = g.constant(ArrayD::from_elem(IxDyn(&[4]), 1.0));
        let beta = g.constant(ArrayD::zeros(IxDyn(&[4])));
        let y = group_norm(&mut g, x, gamma, beta, 2, 1e-6);
        let yv = g.value(y);
        for bi in 0..2 {
            for gi in 0..2 {
                let mut vals = Vec::new();
                for ch in (gi * 2)..(gi * 2 + 2) {
                    for hy in 0..3 {
                        for wx in 0..3 {
                            vals.push(yv[[bi, ch, hy, wx]]);
                        }
                    }
                }
                let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
                let var: f64 =
                    vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
                assert!(mean.abs() < 1e-9, "group mean {mean}");
                assert!((var - 1.0).abs() < 1e-4, "group var {var}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        finite_difference_check(
            &[&[2, 4, 3, 2], &[4], &[4]],
            |g, ids| {
                let y = group_norm(g, ids[0], ids[1], ids[2], 2, 1e-5);
                let sq = mul(g, y, y);
                mean_all(g, sq)
            },
            1e-6,
            1e-5,
            41,
        );
    }
}
