//! Differentiable primitives on the tape: elementwise math, reductions,
//! reshapes, batched matmul, softmax, embeddings.

use super::graph::{Graph, NodeId};
use crate::num::Scalar;
use ndarray::{Array2, Array3, ArrayD, Axis, Ix2, Ix3, IxDyn};

pub(crate) fn to_vec<T: Scalar>(arr: &ArrayD<T>) -> Vec<T> {
    match arr.as_slice() {
        Some(s) => s.to_vec(),
        None => arr.iter().cloned().collect(),
    }
}

pub(crate) fn from_vec<T: Scalar>(shape: &[usize], v: Vec<T>) -> ArrayD<T> {
    ArrayD::from_shape_vec(IxDyn(shape), v).expect("element count must match shape")
}

fn assert_same_shape<T: Scalar>(g: &Graph<T>, a: NodeId, b: NodeId, op: &str) {
    assert_eq!(g.shape(a), g.shape(b), "{op}: operand shapes differ");
}

pub fn add<T: Scalar>(g: &mut Graph<T>, a: NodeId, b: NodeId) -> NodeId {
    assert_same_shape(g, a, b, "add");
    let out = g.value(a) + g.value(b);
    g.push(out, &[a, b], move |grad, sink| {
        sink.accumulate(a, grad.clone());
        sink.accumulate(b, grad.clone());
    })
}

pub fn sub<T: Scalar>(g: &mut Graph<T>, a: NodeId, b: NodeId) -> NodeId {
    assert_same_shape(g, a, b, "sub");
    let out = g.value(a) - g.value(b);
    g.push(out, &[a, b], move |grad, sink| {
        sink.accumulate(a, grad.clone());
        sink.accumulate(b, grad.mapv(|v| -v));
    })
}

pub fn mul<T: Scalar>(g: &mut Graph<T>, a: NodeId, b: NodeId) -> NodeId {
    assert_same_shape(g, a, b, "mul");
    let out = g.value(a) * g.value(b);
    let a_val = if g.requires(b) { Some(g.value(a).clone()) } else { None };
    let b_val = if g.requires(a) { Some(g.value(b).clone()) } else { None };
    g.push(out, &[a, b], move |grad, sink| {
        if let Some(bv) = b_val {
            sink.accumulate(a, grad * &bv);
        }
        if let Some(av) = a_val {
            sink.accumulate(b, grad * &av);
        }
    })
}

pub fn neg<T: Scalar>(g: &mut Graph<T>, a: NodeId) -> NodeId {
    let out = g.value(a).mapv(|v| -v);
    g.push(out, &[a], move |grad, sink| {
        sink.accumulate(a, grad.mapv(|v| -v));
    })
}

pub fn add_scalar<T: Scalar>(g: &mut Graph<T>, a: NodeId, c: T) -> NodeId {
    let out = g.value(a).mapv(|v| v + c);
    g.push(out, &[a], move |grad, sink| {
        sink.accumulate(a, grad.clone());
    })
}

pub fn mul_scalar<T: Scalar>(g: &mut Graph<T>, a: NodeId, c: T) -> NodeId {
    let out = g.value(a).mapv(|v| v * c);
    g.push(out, &[a], move |grad, sink| {
        sink.accumulate(a, grad.mapv(|v| v * c));
    })
}

pub fn div<T: Scalar>(g: &mut Graph<T>, a: NodeId, b: NodeId) -> NodeId {
    assert_same_shape(g, a, b, "div");
    let out = g.value(a) / g.value(b);
    let a_val = g.value(a).clone();
    let b_val = g.value(b).clone();
    g.push(out, &[a, b], move |grad, sink| {
        if sink.wants(a) {
            sink.accumulate(a, grad / &b_val);
        }
        if sink.wants(b) {
            let gb = ndarray::Zip::from(grad)
                .and(&a_val)
                .and(&b_val)
                .map_collect(|&gv, &av, &bv| -gv * av / (bv * bv));
            sink.accumulate(b, gb);
        }
    })
}

pub fn exp<T: Scalar>(g: &mut Graph<T>, a: NodeId) -> NodeId {
    let out = g.value(a).mapv(|v| v.exp());
    let saved = out.clone();
    g.push(out, &[a], move |grad, sink| {
        sink.accumulate(a, grad * &saved);
    })
}

pub fn ln<T: Scalar>(g: &mut Graph<T>, a: NodeId) -> NodeId {
    let out = g.value(a).mapv(|v| v.ln());
    let saved = g.value(a).clone();
    g.push(out, &[a], move |grad, sink| {
        sink.accumulate(a, grad / &saved);
    })
}

pub fn sigmoid<T: Scalar>(g: &mut Graph<T>, a: NodeId) -> NodeId {
    let out = g.value(a).mapv(|v| T::one() / (T::one() + (-v).exp()));
    let saved = out.clone();
    g.push(out, &[a], move |grad, sink| {
        let gx = ndarray::Zip::from(grad)
            .and(&saved)
            .map_collect(|&gv, &s| gv * s * (T::one() - s));
        sink.accumulate(a, gx);
    })
}

pub fn silu<T: Scalar>(g: &mut Graph<T>, a: NodeId) -> NodeId {
    let x = g.value(a).clone();
    let out = x.mapv(|v| v / (T::one() + (-v).exp()));
    g.push(out, &[a], move |grad, sink| {
        let gx = ndarray::Zip::from(grad)
            .and(&x)
            .map_collect(|&gv, &xv| {
                let s = T::one() / (T::one() + (-xv).exp());
                gv * s * (T::one() + xv * (T::one() - s))
            });
        sink.accumulate(a, gx);
    })
}

/// Clamp with pass-through gradient strictly inside the interval.
pub fn clamp<T: Scalar>(g: &mut Graph<T>, a: NodeId, lo: T, hi: T) -> NodeId {
    let x = g.value(a).clone();
    let out = x.mapv(|v| v.max(lo).min(hi));
    g.push(out, &[a], move |grad, sink| {
        let gx = ndarray::Zip::from(grad)
            .and(&x)
            .map_collect(|&gv, &xv| if xv > lo && xv < hi { gv } else { T::zero() });
        sink.accumulate(a, gx);
    })
}

/// Per-item affine map over the leading (batch) axis:
/// `out[i] = scale[i] * x[i] + shift[i]`.
pub fn affine_per_item<T: Scalar>(
    g: &mut Graph<T>,
    x: NodeId,
    scale: Vec<T>,
    shift: Vec<T>,
) -> NodeId {
    let items = g.shape(x)[0];
    assert_eq!(scale.len(), items, "affine_per_item: scale length");
    assert_eq!(shift.len(), items, "affine_per_item: shift length");
    let mut out = g.value(x).clone();
    for (i, mut row) in out.outer_iter_mut().enumerate() {
        row.mapv_inplace(|v| v * scale[i] + shift[i]);
    }
    g.push(out, &[x], move |grad, sink| {
        let mut gx = grad.clone();
        for (i, mut row) in gx.outer_iter_mut().enumerate() {
            row.mapv_inplace(|v| v * scale[i]);
        }
        sink.accumulate(x, gx);
    })
}

/// Per-item linear combination over the leading axis:
/// `out[i] = ax[i] * x[i] + by[i] * y[i]`.
pub fn axpy_per_item<T: Scalar>(
    g: &mut Graph<T>,
    ax: Vec<T>,
    x: NodeId,
    by: Vec<T>,
    y: NodeId,
) -> NodeId {
    assert_same_shape(g, x, y, "axpy_per_item");
    let items = g.shape(x)[0];
    assert_eq!(ax.len(), items);
    assert_eq!(by.len(), items);
    let mut out = g.value(x).clone();
    let yv = g.value(y);
    for (i, mut row) in out.outer_iter_mut().enumerate() {
        let yr = yv.index_axis(Axis(0), i);
        ndarray::Zip::from(&mut row).and(&yr).for_each(|o, &b| {
            *o = *o * ax[i] + b * by[i];
        });
    }
    let ax_b = ax.clone();
    let by_b = by.clone();
    g.push(out, &[x, y], move |grad, sink| {
        if sink.wants(x) {
            let mut gx = grad.clone();
            for (i, mut row) in gx.outer_iter_mut().enumerate() {
                row.mapv_inplace(|v| v * ax_b[i]);
            }
            sink.accumulate(x, gx);
        }
        if sink.wants(y) {
            let mut gy = grad.clone();
            for (i, mut row) in gy.outer_iter_mut().enumerate() {
                row.mapv_inplace(|v| v * by_b[i]);
            }
            sink.accumulate(y, gy);
        }
    })
}

pub fn sum_all<T: Scalar>(g: &mut Graph<T>, a: NodeId) -> NodeId {
    let total: T = g.value(a).iter().cloned().sum();
    let shape: Vec<usize> = g.shape(a).to_vec();
    let out = ArrayD::from_elem(IxDyn(&[1]), total);
    g.push(out, &[a], move |grad, sink| {
        sink.accumulate(a, ArrayD::from_elem(IxDyn(&shape), grad[[0]]));
    })
}

pub fn mean_all<T: Scalar>(g: &mut Graph<T>, a: NodeId) -> NodeId {
    let n = T::from_usize(g.value(a).len()).unwrap();
    let s = sum_all(g, a);
    mul_scalar(g, s, T::one() / n)
}

/// Reduce all but the leading axis: `[B, ...] -> [B]`.
pub fn sum_per_item<T: Scalar>(g: &mut Graph<T>, a: NodeId) -> NodeId {
    let items = g.shape(a)[0];
    let shape: Vec<usize> = g.shape(a).to_vec();
    let mut out = Vec::with_capacity(items);
    for row in g.value(a).outer_iter() {
        out.push(row.iter().cloned().sum::<T>());
    }
    let out = from_vec(&[items], out);
    g.push(out, &[a], move |grad, sink| {
        let mut gx = ArrayD::zeros(IxDyn(&shape));
        for (i, mut row) in gx.outer_iter_mut().enumerate() {
            row.fill(grad[[i]]);
        }
        sink.accumulate(a, gx);
    })
}

pub fn reshape<T: Scalar>(g: &mut Graph<T>, a: NodeId, shape: &[usize]) -> NodeId {
    let old_shape: Vec<usize> = g.shape(a).to_vec();
    let out = from_vec(shape, to_vec(g.value(a)));
    g.push(out, &[a], move |grad, sink| {
        sink.accumulate(a, from_vec(&old_shape, to_vec(grad)));
    })
}

/// Concatenate along the channel axis (axis 1).
pub fn concat_channels<T: Scalar>(g: &mut Graph<T>, inputs: &[NodeId]) -> NodeId {
    assert!(!inputs.is_empty());
    let views: Vec<_> = inputs.iter().map(|&id| g.value(id).view()).collect();
    let out = ndarray::concatenate(Axis(1), &views).expect("concat_channels: incompatible shapes");
    let channels: Vec<usize> = inputs.iter().map(|&id| g.shape(id)[1]).collect();
    let parents: Vec<NodeId> = inputs.to_vec();
    let parents_b = parents.clone();
    g.push(out.into_dyn(), &parents, move |grad, sink| {
        let mut start = 0;
        for (&p, &c) in parents_b.iter().zip(&channels) {
            if sink.wants(p) {
                let piece = grad
                    .slice_axis(Axis(1), ndarray::Slice::from(start..start + c))
                    .to_owned();
                sink.accumulate(p, piece);
            }
            start += c;
        }
    })
}

/// Slice a half-open channel range (axis 1).
pub fn slice_channels<T: Scalar>(g: &mut Graph<T>, a: NodeId, start: usize, end: usize) -> NodeId {
    let shape: Vec<usize> = g.shape(a).to_vec();
    assert!(end <= shape[1] && start < end, "slice_channels: bad range");
    let out = g
        .value(a)
        .slice_axis(Axis(1), ndarray::Slice::from(start..end))
        .to_owned();
    g.push(out, &[a], move |grad, sink| {
        let mut gx = ArrayD::zeros(IxDyn(&shape));
        gx.slice_axis_mut(Axis(1), ndarray::Slice::from(start..end))
            .assign(grad);
        sink.accumulate(a, gx);
    })
}

fn as3<T: Scalar>(arr: &ArrayD<T>) -> ndarray::ArrayView3<'_, T> {
    arr.view().into_dimensionality::<Ix3>().expect("expected rank-3 tensor")
}

fn as2<T: Scalar>(arr: &ArrayD<T>) -> ndarray::ArrayView2<'_, T> {
    arr.view().into_dimensionality::<Ix2>().expect("expected rank-2 tensor")
}

/// Batched matrix multiply. `a` is `[B, m, k]`; `b` is `[B, k, n]`
/// (or `[B, n, k]` when `transpose_b`). Result `[B, m, n]`.
pub fn bmm<T: Scalar>(g: &mut Graph<T>, a: NodeId, b: NodeId, transpose_b: bool) -> NodeId {
    let av = as3(g.value(a));
    let bv = as3(g.value(b));
    let (batch, m, k) = av.dim();
    let (bb, n) = if transpose_b {
        (bv.dim().0, bv.dim().1)
    } else {
        (bv.dim().0, bv.dim().2)
    };
    assert_eq!(batch, bb, "bmm: batch dims differ");
    if transpose_b {
        assert_eq!(k, bv.dim().2, "bmm: inner dims differ");
    } else {
        assert_eq!(k, bv.dim().1, "bmm: inner dims differ");
    }
    let mut out = Array3::<T>::zeros((batch, m, n));
    for i in 0..batch {
        let ai = av.index_axis(Axis(0), i);
        let bi = bv.index_axis(Axis(0), i);
        let ci = if transpose_b { ai.dot(&bi.t()) } else { ai.dot(&bi) };
        out.index_axis_mut(Axis(0), i).assign(&ci);
    }
    let a_val = g.value(a).clone();
    let b_val = g.value(b).clone();
    g.push(out.into_dyn(), &[a, b], move |grad, sink| {
        let gv = as3(grad);
        let av = as3(&a_val);
        let bv = as3(&b_val);
        if sink.wants(a) {
            let mut ga = Array3::<T>::zeros(av.dim());
            for i in 0..av.dim().0 {
                let gi = gv.index_axis(Axis(0), i);
                let bi = bv.index_axis(Axis(0), i);
                let d = if transpose_b { gi.dot(&bi) } else { gi.dot(&bi.t()) };
                ga.index_axis_mut(Axis(0), i).assign(&d);
            }
            sink.accumulate(a, ga.into_dyn());
        }
        if sink.wants(b) {
            let mut gb = Array3::<T>::zeros(bv.dim());
            for i in 0..bv.dim().0 {
                let gi = gv.index_axis(Axis(0), i);
                let ai = av.index_axis(Axis(0), i);
                let d = if transpose_b { gi.t().dot(&ai) } else { ai.t().dot(&gi) };
                gb.index_axis_mut(Axis(0), i).assign(&d);
            }
            sink.accumulate(b, gb.into_dyn());
        }
    })
}

/// Numerically stable softmax over the last axis.
pub fn softmax_last<T: Scalar>(g: &mut Graph<T>, a: NodeId) -> NodeId {
    let shape: Vec<usize> = g.shape(a).to_vec();
    let n = *shape.last().expect("softmax_last: rank >= 1");
    let mut data = to_vec(g.value(a));
    for row in data.chunks_mut(n) {
        let mut mx = row[0];
        for &v in row.iter() {
            if v > mx {
                mx = v;
            }
        }
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            sum = sum + *v;
        }
        let inv = T::one() / sum;
        for v in row.iter_mut() {
            *v = *v * inv;
        }
    }
    let out = from_vec(&shape, data);
    let saved = to_vec(&out);
    g.push(out, &[a], move |grad, sink| {
        let gv = to_vec(grad);
        let mut gx = vec![T::zero(); gv.len()];
        for (r, (grow, yrow)) in gv.chunks(n).zip(saved.chunks(n)).enumerate() {
            let mut dot = T::zero();
            for i in 0..n {
                dot = dot + grow[i] * yrow[i];
            }
            for i in 0..n {
                gx[r * n + i] = yrow[i] * (grow[i] - dot);
            }
        }
        sink.accumulate(a, from_vec(&shape, gx));
    })
}

/// `[B, C, H, W] -> [B, H*W, C]` (rows are pixels).
pub fn bchw_to_bpc<T: Scalar>(g: &mut Graph<T>, a: NodeId) -> NodeId {
    let shape: Vec<usize> = g.shape(a).to_vec();
    assert_eq!(shape.len(), 4, "bchw_to_bpc: rank-4 input");
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let p = h * w;
    let xs = to_vec(g.value(a));
    let mut out = vec![T::zero(); xs.len()];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * p;
            for pi in 0..p {
                out[(bi * p + pi) * c + ci] = xs[base + pi];
            }
        }
    }
    let out = from_vec(&[b, p, c], out);
    g.push(out, &[a], move |grad, sink| {
        let gv = to_vec(grad);
        let mut gx = vec![T::zero(); gv.len()];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * p;
                for pi in 0..p {
                    gx[base + pi] = gv[(bi * p + pi) * c + ci];
                }
            }
        }
        sink.accumulate(a, from_vec(&[b, c, h, w], gx));
    })
}

/// `[B, P, C] -> [B, C, h, w]` with `P = h * w`.
pub fn bpc_to_bchw<T: Scalar>(g: &mut Graph<T>, a: NodeId, h: usize, w: usize) -> NodeId {
    let shape: Vec<usize> = g.shape(a).to_vec();
    assert_eq!(shape.len(), 3, "bpc_to_bchw: rank-3 input");
    let (b, p, c) = (shape[0], shape[1], shape[2]);
    assert_eq!(p, h * w, "bpc_to_bchw: pixel count mismatch");
    let xs = to_vec(g.value(a));
    let mut out = vec![T::zero(); xs.len()];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * p;
            for pi in 0..p {
                out[base + pi] = xs[(bi * p + pi) * c + ci];
            }
        }
    }
    let out = from_vec(&[b, c, h, w], out);
    g.push(out, &[a], move |grad, sink| {
        let gv = to_vec(grad);
        let mut gx = vec![T::zero(); gv.len()];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * p;
                for pi in 0..p {
                    gx[(bi * p + pi) * c + ci] = gv[base + pi];
                }
            }
        }
        sink.accumulate(a, from_vec(&[b, p, c], gx));
    })
}

/// Add a per-(item, channel) vector to a feature map:
/// `out[b, c, h, w] = x[b, c, h, w] + v[b, c]`.
pub fn add_channel_vec<T: Scalar>(g: &mut Graph<T>, x: NodeId, v: NodeId) -> NodeId {
    let xs: Vec<usize> = g.shape(x).to_vec();
    let vs: Vec<usize> = g.shape(v).to_vec();
    assert_eq!(xs.len(), 4);
    assert_eq!(vs, vec![xs[0], xs[1]], "add_channel_vec: vector shape");
    let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let hw = h * w;
    let mut out = to_vec(g.value(x));
    let vv = to_vec(g.value(v));
    for bi in 0..b {
        for ci in 0..c {
            let add = vv[bi * c + ci];
            let base = (bi * c + ci) * hw;
            for o in &mut out[base..base + hw] {
                *o = *o + add;
            }
        }
    }
    let out = from_vec(&xs, out);
    g.push(out, &[x, v], move |grad, sink| {
        if sink.wants(x) {
            sink.accumulate(x, grad.clone());
        }
        if sink.wants(v) {
            let gv = to_vec(grad);
            let mut acc = vec![T::zero(); b * c];
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * hw;
                    let mut s = T::zero();
                    for &gvv in &gv[base..base + hw] {
                        s = s + gvv;
                    }
                    acc[bi * c + ci] = s;
                }
            }
            sink.accumulate(v, from_vec(&[b, c], acc));
        }
    })
}

/// Repeat a single-channel map across `c` channels.
pub fn broadcast_channel<T: Scalar>(g: &mut Graph<T>, x: NodeId, c: usize) -> NodeId {
    let xs: Vec<usize> = g.shape(x).to_vec();
    assert_eq!(xs.len(), 4);
    assert_eq!(xs[1], 1, "broadcast_channel: input must have one channel");
    let (b, h, w) = (xs[0], xs[2], xs[3]);
    let hw = h * w;
    let xv = to_vec(g.value(x));
    let mut out = vec![T::zero(); b * c * hw];
    for bi in 0..b {
        for ci in 0..c {
            out[(bi * c + ci) * hw..(bi * c + ci + 1) * hw]
                .copy_from_slice(&xv[bi * hw..(bi + 1) * hw]);
        }
    }
    let out = from_vec(&[b, c, h, w], out);
    g.push(out, &[x], move |grad, sink| {
        let gv = to_vec(grad);
        let mut gx = vec![T::zero(); b * hw];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * hw;
                for (i, &gvv) in gv[base..base + hw].iter().enumerate() {
                    gx[bi * hw + i] = gx[bi * hw + i] + gvv;
                }
            }
        }
        sink.accumulate(x, from_vec(&[b, 1, h, w], gx));
    })
}

/// Per-pixel row lookup into an embedding table: labels `[B, H, W]` with
/// values in `[0, rows)`, table `[rows, d]`, output `[B, d, H, W]`.
pub fn embed_lookup<T: Scalar>(
    g: &mut Graph<T>,
    labels: ndarray::Array3<u8>,
    table: NodeId,
) -> NodeId {
    let ts: Vec<usize> = g.shape(table).to_vec();
    assert_eq!(ts.len(), 2, "embed_lookup: table is [rows, d]");
    let (rows, d) = (ts[0], ts[1]);
    let (b, h, w) = labels.dim();
    let hw = h * w;
    let tv = to_vec(g.value(table));
    let lab = labels.as_slice().expect("labels standard layout").to_vec();
    let mut out = vec![T::zero(); b * d * hw];
    for bi in 0..b {
        for pi in 0..hw {
            let k = lab[bi * hw + pi] as usize;
            assert!(k < rows, "embed_lookup: label {k} out of range");
            for ci in 0..d {
                out[(bi * d + ci) * hw + pi] = tv[k * d + ci];
            }
        }
    }
    let out = from_vec(&[b, d, h, w], out);
    g.push(out, &[table], move |grad, sink| {
        let gv = to_vec(grad);
        let mut gt = vec![T::zero(); rows * d];
        for bi in 0..b {
            for pi in 0..hw {
                let k = lab[bi * hw + pi] as usize;
                for ci in 0..d {
                    gt[k * d + ci] = gt[k * d + ci] + gv[(bi * d + ci) * hw + pi];
                }
            }
        }
        sink.accumulate(table, from_vec(&[rows, d], gt));
    })
}

/// Fully connected layer: `x [B, i] * w [i, o] + bias [o]`.
pub fn linear<T: Scalar>(g: &mut Graph<T>, x: NodeId, w: NodeId, bias: NodeId) -> NodeId {
    let xv = as2(g.value(x)).to_owned();
    let wv = as2(g.value(w)).to_owned();
    let bv = g.value(bias).clone();
    assert_eq!(xv.dim().1, wv.dim().0, "linear: inner dims differ");
    assert_eq!(bv.len(), wv.dim().1, "linear: bias length");
    let mut out = xv.dot(&wv);
    for mut row in out.rows_mut() {
        for (o, &bb) in row.iter_mut().zip(bv.iter()) {
            *o = *o + bb;
        }
    }
    g.push(out.into_dyn(), &[x, w, bias], move |grad, sink| {
        let gv: Array2<T> = as2(grad).to_owned();
        if sink.wants(x) {
            sink.accumulate(x, gv.dot(&wv.t()).into_dyn());
        }
        if sink.wants(w) {
            sink.accumulate(w, xv.t().dot(&gv).into_dyn());
        }
        if sink.wants(bias) {
            sink.accumulate(bias, gv.sum_axis(Axis(0)).into_dyn());
        }
    })
}

/// Scaled dot-product attention over pixel rows.
/// `q [B, n, d]`, `k [B, m, d]`, `v [B, m, dv]` -> `[B, n, dv]`.
pub fn attention<T: Scalar>(g: &mut Graph<T>, q: NodeId, k: NodeId, v: NodeId) -> NodeId {
    let d = g.shape(q)[2];
    let scale = T::one() / T::from_usize(d).unwrap().sqrt();
    let scores = bmm(g, q, k, true);
    let scaled = mul_scalar(g, scores, scale);
    let weights = softmax_last(g, scaled);
    bmm(g, weights, v, false)
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::num::seeded_rng;
    use rand::Rng;

    /// Central-difference gradient check of `build` (which must consume its
    /// leaves in order and return a scalar node).
    pub fn finite_difference_check(
        shapes: &[&[usize]],
        build: impl Fn(&mut Graph<f64>, &[NodeId]) -> NodeId,
        h: f64,
        tol: f64,
        seed: u64,
    ) {
        let mut rng = seeded_rng(seed, "fd-check", 0);
        let inputs: Vec<ArrayD<f64>> = shapes
            .iter()
            .map(|s| ArrayD::from_shape_fn(IxDyn(s), |_| rng.gen::<f64>() * 2.0 - 1.0))
            .collect();

        let mut g = Graph::new(true);
        let ids: Vec<NodeId> = inputs.iter().map(|v| g.leaf(v.clone(), true)).collect();
        let root = build(&mut g, &ids);
        assert_eq!(g.value(root).len(), 1, "fd check root must be scalar");
        let mut grads = g.backward(root);

        for (idx, base) in inputs.iter().enumerate() {
            let analytic = grads
                .take(ids[idx])
                .unwrap_or_else(|| ArrayD::zeros(base.raw_dim()));
            for flat in 0..base.len() {
                let eval = |delta: f64| {
                    let mut perturbed = inputs.clone();
                    perturbed[idx].as_slice_mut().unwrap()[flat] += delta;
                    let mut g2 = Graph::new(false);
                    let ids2: Vec<NodeId> =
                        perturbed.iter().map(|v| g2.leaf(v.clone(), false)).collect();
                    let r = build(&mut g2, &ids2);
                    g2.value(r)[[0]]
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let a = analytic.as_slice().unwrap()[flat];
                let denom = a.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    (a - numeric).abs() / denom < tol,
                    "input {idx} elem {flat}: analytic {a} vs numeric {numeric}"
                );
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::finite_difference_check;
    use super::*;

    #[test]
    fn elementwise_gradients_match_finite_differences() {
        finite_difference_check(
            &[&[2, 3], &[2, 3]],
            |g, ids| {
                let s = add(g, ids[0], ids[1]);
                let m = mul(g, s, ids[0]);
                let e = exp(g, m);
                let sg = sigmoid(g, e);
                let sl = silu(g, sg);
                mean_all(g, sl)
            },
            1e-5,
            1e-6,
            1,
        );
    }

    #[test]
    fn div_ln_gradients() {
        finite_difference_check(
            &[&[5], &[5]],
            |g, ids| {
                let shifted = add_scalar(g, ids[0], 3.0);
                let den = add_scalar(g, ids[1], 3.0);
                let q = div(g, shifted, den);
                let l = ln(g, q);
                mean_all(g, l)
            },
            1e-6,
            1e-6,
            2,
        );
    }

    #[test]
    fn per_item_ops_gradients() {
        finite_difference_check(
            &[&[3, 4], &[3, 4]],
            |g, ids| {
                let a = affine_per_item(g, ids[0], vec![0.5, -1.5, 2.0], vec![0.1, 0.2, 0.3]);
                let z = axpy_per_item(g, vec![1.5, 0.5, -0.25], a, vec![0.2, -0.7, 1.1], ids[1]);
                let s = sum_per_item(g, z);
                mean_all(g, s)
            },
            1e-6,
            1e-6,
            3,
        );
    }

    #[test]
    fn softmax_bmm_attention_gradients() {
        finite_difference_check(
            &[&[2, 3, 4], &[2, 5, 4], &[2, 5, 4]],
            |g, ids| {
                let o = attention(g, ids[0], ids[1], ids[2]);
                mean_all(g, o)
            },
            1e-6,
            1e-5,
            4,
        );
    }

    #[test]
    fn reshape_concat_slice_gradients() {
        finite_difference_check(
            &[&[2, 3, 2, 2], &[2, 2, 2, 2]],
            |g, ids| {
                let c = concat_channels(g, &[ids[0], ids[1]]);
                let s = slice_channels(g, c, 1, 4);
                let r = reshape(g, s, &[2, 12]);
                mean_all(g, r)
            },
            1e-6,
            1e-6,
            5,
        );
    }

    #[test]
    fn pixel_rows_roundtrip_gradients() {
        finite_difference_check(
            &[&[2, 3, 2, 4]],
            |g, ids| {
                let p = bchw_to_bpc(g, ids[0]);
                let b = bpc_to_bchw(g, p, 2, 4);
                let m = mul(g, b, ids[0]);
                mean_all(g, m)
            },
            1e-6,
            1e-6,
            6,
        );
    }

    #[test]
    fn channel_vec_broadcast_embed_gradients() {
        let labels = ndarray::Array3::<u8>::from_shape_fn((2, 3, 3), |(b, h, w)| {
            ((b + h + w) % 2) as u8
        });
        finite_difference_check(
            &[&[2, 4, 3, 3], &[2, 4], &[2, 4]],
            move |g, ids| {
                let x = add_channel_vec(g, ids[0], ids[1]);
                let emb = embed_lookup(g, labels.clone(), ids[2]);
                let s = mul(g, x, emb);
                let one = slice_channels(g, s, 0, 1);
                let b = broadcast_channel(g, one, 4);
                mean_all(g, b)
            },
            1e-6,
            1e-6,
            7,
        );
    }

    #[test]
    fn linear_clamp_gradients() {
        finite_difference_check(
            &[&[3, 4], &[4, 2], &[2]],
            |g, ids| {
                let y = linear(g, ids[0], ids[1], ids[2]);
                let c = clamp(g, y, -0.4, 0.4);
                mean_all(g, c)
            },
            1e-6,
            1e-5,
            8,
        );
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::<f64>::new(false);
        let x = g.constant(ArrayD::from_shape_fn(IxDyn(&[4, 7]), |ix| {
            (ix[0] as f64) * 0.3 - (ix[1] as f64) * 0.9
        }));
        let s = softmax_last(&mut g, x);
        for row in g.value(s).rows() {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_with_constant_keys_is_uniform_average() {
        // constant K rows make softmax uniform, so the output is the mean of V
        let mut g = Graph::<f64>::new(false);
        let q = g.constant(ArrayD::from_shape_fn(IxDyn(&[1, 3, 2]), |ix| ix[1] as f64));
        let k = g.constant(ArrayD::from_elem(IxDyn(&[1, 4, 2]), 0.7));
        let v = g.constant(ArrayD::from_shape_fn(IxDyn(&[1, 4, 2]), |ix| ix[1] as f64 + ix[2] as f64));
        let o = attention(&mut g, q, k, v);
        let mean0 = (0.0 + 1.0 + 2.0 + 3.0) / 4.0;
        for p in 0..3 {
            assert!((g.value(o)[[0, p, 0]] - mean0).abs() < 1e-12);
            assert!((g.value(o)[[0, p, 1]] - (mean0 + 1.0)).abs() < 1e-12);
        }
    }
}
