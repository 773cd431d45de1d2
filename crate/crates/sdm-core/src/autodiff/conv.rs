//! 2-D convolution via im2col + GEMM, with full backward.

use super::graph::{Graph, NodeId};
use super::ops::{from_vec, to_vec};
use crate::num::Scalar;
use ndarray::{Array2, ArrayD, Axis, Ix1};

#[derive(Debug, Clone, Copy)]
struct ConvDims {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

pub fn conv2d_output_size(h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> (usize, usize) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    (oh, ow)
}

fn im2col<T: Scalar>(x: &[T], d: ConvDims, cols: &mut Array2<T>) {
    let plane = d.h * d.w;
    let cols_slice = cols.as_slice_mut().unwrap();
    let np = d.oh * d.ow;
    for c in 0..d.c_in {
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let base = row * np;
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + ki) as isize - d.pad as isize;
                    let out_base = base + oy * d.ow;
                    if iy < 0 || iy >= d.h as isize {
                        for ox in 0..d.ow {
                            cols_slice[out_base + ox] = T::zero();
                        }
                        continue;
                    }
                    let in_base = c * plane + iy as usize * d.w;
                    for ox in 0..d.ow {
                        let ix = (ox * d.stride + kj) as isize - d.pad as isize;
                        cols_slice[out_base + ox] = if ix < 0 || ix >= d.w as isize {
                            T::zero()
                        } else {
                            x[in_base + ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_accumulate<T: Scalar>(dcols: &Array2<T>, d: ConvDims, dx: &mut [T]) {
    let plane = d.h * d.w;
    let cols_slice = dcols.as_slice().unwrap();
    let np = d.oh * d.ow;
    for c in 0..d.c_in {
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let base = row * np;
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + ki) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let in_base = c * plane + iy as usize * d.w;
                    for ox in 0..d.ow {
                        let ix = (ox * d.stride + kj) as isize - d.pad as isize;
                        if ix >= 0 && ix < d.w as isize {
                            let i = in_base + ix as usize;
                            dx[i] = dx[i] + cols_slice[base + oy * d.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `x [B, C, H, W]` * `w [O, C, kh, kw]` (+ optional bias `[O]`).
pub fn conv2d<T: Scalar>(
    g: &mut Graph<T>,
    x: NodeId,
    w: NodeId,
    bias: Option<NodeId>,
    stride: usize,
    pad: usize,
) -> NodeId {
    let xs = g.shape(x).to_vec();
    let ws = g.shape(w).to_vec();
    assert_eq!(xs.len(), 4, "conv2d: input rank");
    assert_eq!(ws.len(), 4, "conv2d: weight rank");
    assert_eq!(xs[1], ws[1], "conv2d: channel mismatch");
    let (oh, ow) = conv2d_output_size(xs[2], xs[3], ws[2], ws[3], stride, pad);
    let d = ConvDims {
        batch: xs[0],
        c_in: xs[1],
        h: xs[2],
        w: xs[3],
        c_out: ws[0],
        kh: ws[2],
        kw: ws[3],
        stride,
        pad,
        oh,
        ow,
    };
    let ckk = d.c_in * d.kh * d.kw;
    let np = oh * ow;

    let x_val = to_vec(g.value(x));
    let w_val = to_vec(g.value(w));
    let w_mat = Array2::from_shape_vec((d.c_out, ckk), w_val.clone()).unwrap();
    let bias_val = bias.map(|b| to_vec(g.value(b)));

    let mut out = vec![T::zero(); d.batch * d.c_out * np];
    let mut cols = Array2::<T>::zeros((ckk, np));
    for b in 0..d.batch {
        im2col(&x_val[b * d.c_in * d.h * d.w..], d, &mut cols);
        let res = w_mat.dot(&cols);
        let res_s = res.as_slice().unwrap();
        let dst = &mut out[b * d.c_out * np..(b + 1) * d.c_out * np];
        dst.copy_from_slice(res_s);
        if let Some(bv) = &bias_val {
            for o in 0..d.c_out {
                let add = bv[o];
                for v in &mut dst[o * np..(o + 1) * np] {
                    *v = *v + add;
                }
            }
        }
    }
    let out = from_vec(&[d.batch, d.c_out, oh, ow], out);

    let parents: Vec<NodeId> = match bias {
        Some(b) => vec![x, w, b],
        None => vec![x, w],
    };
    g.push(out, &parents, move |grad, sink| {
        let gv = to_vec(grad);
        let w_mat = Array2::from_shape_vec((d.c_out, ckk), w_val).unwrap();
        let item = d.c_in * d.h * d.w;

        let want_x = sink.wants(x);
        let want_w = sink.wants(w);
        let want_b = bias.map(|b| sink.wants(b)).unwrap_or(false);

        let mut dx = vec![T::zero(); d.batch * item];
        let mut dw = Array2::<T>::zeros((d.c_out, ckk));
        let mut db = vec![T::zero(); d.c_out];
        let mut cols = Array2::<T>::zeros((ckk, np));
        for b in 0..d.batch {
            let g_b = Array2::from_shape_vec(
                (d.c_out, np),
                gv[b * d.c_out * np..(b + 1) * d.c_out * np].to_vec(),
            )
            .unwrap();
            if want_w {
                im2col(&x_val[b * item..], d, &mut cols);
                dw += &g_b.dot(&cols.t());
            }
            if want_b {
                for o in 0..d.c_out {
                    let mut s = T::zero();
                    for &v in g_b.row(o).iter() {
                        s = s + v;
                    }
                    db[o] = db[o] + s;
                }
            }
            if want_x {
                let dcols = w_mat.t().dot(&g_b);
                col2im_accumulate(&dcols, d, &mut dx[b * item..(b + 1) * item]);
            }
        }
        if want_x {
            sink.accumulate(x, from_vec(&[d.batch, d.c_in, d.h, d.w], dx));
        }
        if want_w {
            let (dw_vec, _) = dw.into_raw_vec_and_offset();
            sink.accumulate(w, from_vec(&[d.c_out, d.c_in, d.kh, d.kw], dw_vec));
        }
        if let Some(bn) = bias {
            if want_b {
                sink.accumulate(bn, from_vec(&[d.c_out], db));
            }
        }
    })
}

#[allow(dead_code)]
fn bias_view<T: Scalar>(arr: &ArrayD<T>) -> ndarray::ArrayView1<'_, T> {
    arr.view().into_dimensionality::<Ix1>().unwrap()
}

/// Reference convolution used by the gradient tests: direct quadruple loop,
/// no im2col. Kept independent of the production path on purpose.
#[cfg(test)]
pub fn conv2d_reference<T: Scalar>(
    x: &ArrayD<T>,
    w: &ArrayD<T>,
    bias: Option<&ArrayD<T>>,
    stride: usize,
    pad: usize,
) -> ArrayD<T> {
    let xs = x.shape();
    let ws = w.shape();
    let (oh, ow) = conv2d_output_size(xs[2], xs[3], ws[2], ws[3], stride, pad);
    let mut out = ArrayD::zeros(ndarray::IxDyn(&[xs[0], ws[0], oh, ow]));
    for b in 0..xs[0] {
        for o in 0..ws[0] {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map(|bv| bv[[o]]).unwrap_or_else(T::zero);
                    for c in 0..xs[1] {
                        for ki in 0..ws[2] {
                            for kj in 0..ws[3] {
                                let iy = (oy * stride + ki) as isize - pad as isize;
                                let ix = (ox * stride + kj) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && iy < xs[2] as isize && ix < xs[3] as isize {
                                    acc = acc
                                        + x[[b, c, iy as usize, ix as usize]] * w[[o, c, ki, kj]];
                                }
                            }
                        }
                    }
                    out[[b, o, oy, ox]] = acc;
                }
            }
        }
    }
    out
}

#[allow(unused_imports)]
use ndarray::Ix4;
