//! Differentiable bilinear resampling (corner-aligned).

use super::graph::{Graph, NodeId};
use super::ops::{from_vec, to_vec};
use crate::num::Scalar;

fn axis_taps<T: Scalar>(src: usize, dst: usize) -> Vec<(usize, usize, T, T)> {
    (0..dst)
        .map(|i| {
            if dst == 1 {
                let c = (src - 1) as f64 / 2.0;
                let i0 = c.floor() as usize;
                let i1 = (i0 + 1).min(src - 1);
                let f = c - i0 as f64;
                (i0, i1, T::from_f(1.0 - f), T::from_f(f))
            } else {
                let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
                let i0 = pos.floor() as usize;
                let i1 = (i0 + 1).min(src - 1);
                let f = pos - i0 as f64;
                (i0, i1, T::from_f(1.0 - f), T::from_f(f))
            }
        })
        .collect()
}

/// Resample `x [B, C, H, W]` to `(oh, ow)`. Exact identity when the size is
/// unchanged.
pub fn resize_bilinear<T: Scalar>(g: &mut Graph<T>, x: NodeId, oh: usize, ow: usize) -> NodeId {
    let xs = g.shape(x).to_vec();
    assert_eq!(xs.len(), 4, "resize_bilinear: input rank");
    let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    if oh == h && ow == w {
        // pass-through node keeps gradient routing uniform for callers
        let out = g.value(x).clone();
        return g.push(out, &[x], move |grad, sink| {
            sink.accumulate(x, grad.clone());
        });
    }
    let ys = axis_taps::<T>(h, oh);
    let xs_taps = axis_taps::<T>(w, ow);
    let xv = to_vec(g.value(x));
    let mut out = vec![T::zero(); b * c * oh * ow];
    for bc in 0..b * c {
        let src = &xv[bc * h * w..(bc + 1) * h * w];
        let dst = &mut out[bc * oh * ow..(bc + 1) * oh * ow];
        for (oy, &(y0, y1, wy0, wy1)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, wx0, wx1)) in xs_taps.iter().enumerate() {
                dst[oy * ow + ox] = wy0 * (wx0 * src[y0 * w + x0] + wx1 * src[y0 * w + x1])
                    + wy1 * (wx0 * src[y1 * w + x0] + wx1 * src[y1 * w + x1]);
            }
        }
    }
    let out = from_vec(&[b, c, oh, ow], out);
    g.push(out, &[x], move |grad, sink| {
        let gv = to_vec(grad);
        let mut dx = vec![T::zero(); b * c * h * w];
        for bc in 0..b * c {
            let src = &gv[bc * oh * ow..(bc + 1) * oh * ow];
            let dst = &mut dx[bc * h * w..(bc + 1) * h * w];
            for (oy, &(y0, y1, wy0, wy1)) in ys.iter().enumerate() {
                for (ox, &(x0, x1, wx0, wx1)) in xs_taps.iter().enumerate() {
                    let gvv = src[oy * ow + ox];
                    dst[y0 * w + x0] = dst[y0 * w + x0] + wy0 * wx0 * gvv;
                    dst[y0 * w + x1] = dst[y0 * w + x1] + wy0 * wx1 * gvv;
                    dst[y1 * w + x0] = dst[y1 * w + x0] + wy1 * wx0 * gvv;
                    dst[y1 * w + x1] = dst[y1 * w + x1] + wy1 * wx1 * gvv;
                }
            }
        }
        sink.accumulate(x, from_vec(&[b, c, h, w], dx));
    })
}
