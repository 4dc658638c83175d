//! Shape-unchecked slice kernels. Callers guarantee the lengths.
//!
//! Every public kernel is compiled for the baseline target and again with AVX2
//! and with AVX-512F enabled; the widest build the CPU supports is picked at
//! runtime. No fused multiply-adds are introduced and all reductions use a
//! fixed order, so every build produces identical bits.

use std::cell::RefCell;
use std::ops::Range;

pub const K: usize = 5;
pub const P: usize = 2;

macro_rules! simd_dispatch {
    ($(#[$m:meta])* $vis:vis fn $name:ident($($arg:ident: $ty:ty),* $(,)?) $(-> $ret:ty)? => $body:ident) => {
        $(#[$m])*
        $vis fn $name($($arg: $ty),*) $(-> $ret)? {
            #[cfg(target_arch = "x86_64")]
            {
                if std::is_x86_feature_detected!("avx512f") {
                    #[target_feature(enable = "avx512f")]
                    unsafe fn widest($($arg: $ty),*) $(-> $ret)? {
                        $body($($arg),*)
                    }
                    // SAFETY: AVX-512F support was detected just above.
                    return unsafe { widest($($arg),*) };
                }
                if std::is_x86_feature_detected!("avx2") {
                    #[target_feature(enable = "avx2")]
                    unsafe fn wide($($arg: $ty),*) $(-> $ret)? {
                        $body($($arg),*)
                    }
                    // SAFETY: AVX2 support was detected just above.
                    return unsafe { wide($($arg),*) };
                }
            }
            $body($($arg),*)
        }
    };
}

/// Output rows (or columns) `i` for which `i + off - P` lands inside `0..n`.
#[inline(always)]
fn valid_range(n: usize, off: usize) -> Range<usize> {
    let lo = P.saturating_sub(off);
    let hi = (n + P).saturating_sub(off).min(n);
    lo..hi.max(lo)
}

#[inline(always)]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `y = (((y + a0*x0) + a1*x1) + a2*x2) + a3*x3` elementwise: the same sums
/// as four consecutive [`axpy`] calls, in one pass over `y`.
#[inline(always)]
fn axpy4(a: [f64; 4], x: [&[f64]; 4], y: &mut [f64]) {
    let it = y.iter_mut().zip(x[0]).zip(x[1]).zip(x[2]).zip(x[3]);
    for ((((y, x0), x1), x2), x3) in it {
        *y = (((*y + a[0] * x0) + a[1] * x1) + a[2] * x2) + a[3] * x3;
    }
}

/// `y0 += sum_k a0[k] * x_k` and `y1 += sum_k a1[k] * x_k`, summed in `k`
/// order, with `x_k = src[off(k)..off(k) + y0.len()]`.
#[inline(always)]
fn axpy_many2(a0: &[f64], a1: &[f64], src: &[f64], off: impl Fn(usize) -> usize, y0: &mut [f64], y1: &mut [f64]) {
    let n = y0.len();
    let y1 = &mut y1[..n];
    let quads = a0.len() / 4;
    for q in 0..quads {
        let k = q * 4;
        let x = [k, k + 1, k + 2, k + 3].map(|j| &src[off(j)..off(j) + n]);
        let (b, c) = ([a0[k], a0[k + 1], a0[k + 2], a0[k + 3]], [a1[k], a1[k + 1], a1[k + 2], a1[k + 3]]);
        let it = y0.iter_mut().zip(y1.iter_mut()).zip(x[0]).zip(x[1]).zip(x[2]).zip(x[3]);
        for (((((y0, y1), x0), x1), x2), x3) in it {
            *y0 = (((*y0 + b[0] * x0) + b[1] * x1) + b[2] * x2) + b[3] * x3;
            *y1 = (((*y1 + c[0] * x0) + c[1] * x1) + c[2] * x2) + c[3] * x3;
        }
    }
    for k in quads * 4..a0.len() {
        let x = &src[off(k)..off(k) + n];
        axpy(a0[k], x, y0);
        axpy(a1[k], x, y1);
    }
}

#[inline(always)]
fn axpy_many(a: &[f64], src: &[f64], off: impl Fn(usize) -> usize, y: &mut [f64]) {
    let n = y.len();
    let quads = a.len() / 4;
    for q in 0..quads {
        let k = q * 4;
        let x = [k, k + 1, k + 2, k + 3].map(|j| &src[off(j)..off(j) + n]);
        axpy4([a[k], a[k + 1], a[k + 2], a[k + 3]], x, y);
    }
    for k in quads * 4..a.len() {
        axpy(a[k], &src[off(k)..off(k) + n], y);
    }
}

/// Dot product over four interleaved lanes, combined as
/// `(l0 + l1) + (l2 + l3)`, then the tail added in order.
#[inline(always)]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    for (x, y) in a.chunks_exact(4).zip(b.chunks_exact(4)) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in n / 4 * 4..n {
        s += a[i] * b[i];
    }
    s
}

/// `[a0·b0, a0·b1, a1·b0, a1·b1]`, each bit-identical to [`dot`].
#[inline(always)]
fn dot2x2(a0: &[f64], a1: &[f64], b0: &[f64], b1: &[f64]) -> [f64; 4] {
    let n = a0.len();
    let (a1, b0, b1) = (&a1[..n], &b0[..n], &b1[..n]);
    let (mut c00, mut c01, mut c10, mut c11) = ([0.0f64; 4], [0.0f64; 4], [0.0f64; 4], [0.0f64; 4]);
    let a0 = &a0[..n];
    for c in 0..n / 4 {
        let i = 4 * c;
        for l in 0..4 {
            let (x0, x1, y0, y1) = (a0[i + l], a1[i + l], b0[i + l], b1[i + l]);
            c00[l] += x0 * y0;
            c01[l] += x0 * y1;
            c10[l] += x1 * y0;
            c11[l] += x1 * y1;
        }
    }
    let acc = [c00, c01, c10, c11];
    let mut out = acc.map(|c| (c[0] + c[1]) + (c[2] + c[3]));
    for i in n / 4 * 4..n {
        out[0] += a0[i] * b0[i];
        out[1] += a0[i] * b1[i];
        out[2] += a1[i] * b0[i];
        out[3] += a1[i] * b1[i];
    }
    out
}

/// Calls `f(i, j, dot(a[i], b[j]))` for every pair, two rows of each side at
/// a time.
#[inline(always)]
fn all_dots(a: &[&[f64]], b: &[&[f64]], mut f: impl FnMut(usize, usize, f64)) {
    let (ma, mb) = (a.len(), b.len());
    let mut i = 0;
    while i + 2 <= ma {
        let mut j = 0;
        while j + 2 <= mb {
            let d = dot2x2(a[i], a[i + 1], b[j], b[j + 1]);
            f(i, j, d[0]);
            f(i, j + 1, d[1]);
            f(i + 1, j, d[2]);
            f(i + 1, j + 1, d[3]);
            j += 2;
        }
        if j < mb {
            f(i, j, dot(a[i], b[j]));
            f(i + 1, j, dot(a[i + 1], b[j]));
        }
        i += 2;
    }
    if i < ma {
        for (j, bj) in b.iter().enumerate() {
            f(i, j, dot(a[i], bj));
        }
    }
}

thread_local! {
    static COLS: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
}

/// Borrows the per-thread scratch buffer, at least `len` long. Large fresh
/// allocations would page-fault on every call. The hot loops must run in the
/// caller (not in a closure handed to the thread-local) so they are compiled
/// with the caller's target features.
fn take_scratch(len: usize) -> Vec<f64> {
    let mut buf = COLS.with(|c| c.take());
    if buf.len() < len {
        buf.resize(len, 0.0);
    }
    buf
}

fn return_scratch(buf: Vec<f64>) {
    COLS.with(|c| c.replace(buf));
}

/// Unfolds every 5x5 window into a column: row `(ci*K + u)*K + v` of the
/// `[c_in*K*K, h*w]` result holds input `(ci, i+u-P, j+v-P)` at column
/// `i*w + j`, or zero where the window hangs over the border.
#[inline(always)]
fn im2col(input: &[f64], c_in: usize, h: usize, w: usize, cols: &mut [f64]) {
    let plane = h * w;
    for ci in 0..c_in {
        let in_plane = &input[ci * plane..(ci + 1) * plane];
        for u in 0..K {
            let rows = valid_range(h, u);
            for v in 0..K {
                let cs = valid_range(w, v);
                let dst = &mut cols[((ci * K + u) * K + v) * plane..][..plane];
                if cs.is_empty() || rows.is_empty() {
                    dst.fill(0.0);
                    continue;
                }
                // only the padding border is zeroed; the rest is overwritten
                dst[..rows.start * w].fill(0.0);
                dst[rows.end * w..].fill(0.0);
                for i in rows.clone() {
                    let row = &mut dst[i * w..(i + 1) * w];
                    row[..cs.start].fill(0.0);
                    row[cs.end..].fill(0.0);
                    let src_row = (i + u - P) * w;
                    row[cs.clone()].copy_from_slice(&in_plane[src_row + cs.start + v - P..src_row + cs.end + v - P]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
#[inline(always)]
fn col2im_add(d_cols: &[f64], c_in: usize, h: usize, w: usize, d_in: &mut [f64]) {
    let plane = h * w;
    for ci in 0..c_in {
        let d_plane = &mut d_in[ci * plane..(ci + 1) * plane];
        for u in 0..K {
            let rows = valid_range(h, u);
            for v in 0..K {
                let cs = valid_range(w, v);
                if cs.is_empty() {
                    continue;
                }
                let src = &d_cols[((ci * K + u) * K + v) * plane..][..plane];
                for i in rows.clone() {
                    let dst_row = (i + u - P) * w;
                    let d = &mut d_plane[dst_row + cs.start + v - P..dst_row + cs.end + v - P];
                    for (a, &b) in d.iter_mut().zip(&src[i * w + cs.start..i * w + cs.end]) {
                        *a += b;
                    }
                }
            }
        }
    }
}

/// Multiply-accumulates of one "same" convolution that touch real input,
/// i.e. excluding the taps that land on padding.
pub fn conv_same_executed_macs(c_in: usize, h: usize, w: usize, c_out: usize) -> u64 {
    let rows: usize = (0..K).map(|u| valid_range(h, u).len()).sum();
    let cols: usize = (0..K).map(|v| valid_range(w, v).len()).sum();
    (c_out * c_in * rows * cols) as u64
}

/// `out[co] = bias[co] + sum_k W[co, k] * cols[k]`, two output channels per
/// pass over the columns.
#[inline(always)]
fn conv_forward_cols(cols: &[f64], plane: usize, ck: usize, weights: &[f64], bias: &[f64], c_out: usize, out: &mut [f64]) {
    let off = |k: usize| k * plane;
    let mut co = 0;
    while co + 2 <= c_out {
        let (y0, y1) = out[co * plane..(co + 2) * plane].split_at_mut(plane);
        y0.fill(bias[co]);
        y1.fill(bias[co + 1]);
        axpy_many2(&weights[co * ck..(co + 1) * ck], &weights[(co + 1) * ck..(co + 2) * ck], cols, off, y0, y1);
        co += 2;
    }
    if co < c_out {
        let y = &mut out[co * plane..(co + 1) * plane];
        y.fill(bias[co]);
        axpy_many(&weights[co * ck..(co + 1) * ck], cols, off, y);
    }
}

#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn conv_same_forward_impl(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    bias: &[f64],
    c_out: usize,
    out: &mut [f64],
) -> u64 {
    let plane = h * w;
    let ck = c_in * K * K;
    let mut buf = take_scratch(ck * plane);
    let cols = &mut buf[..ck * plane];
    im2col(input, c_in, h, w, cols);
    conv_forward_cols(cols, plane, ck, weights, bias, c_out, out);
    return_scratch(buf);
    conv_same_executed_macs(c_in, h, w, c_out)
}

simd_dispatch! {
    /// 5x5 convolution, stride 1, zero padding 2. Returns the number of
    /// multiply-accumulates that touch real input (see
    /// [`conv_same_executed_macs`]).
    #[allow(clippy::too_many_arguments)]
    pub fn conv_same_forward(
        input: &[f64],
        c_in: usize,
        h: usize,
        w: usize,
        weights: &[f64],
        bias: &[f64],
        c_out: usize,
        out: &mut [f64],
    ) -> u64 => conv_same_forward_impl
}

#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn conv_same_backward_impl(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    c_out: usize,
    d_out: &[f64],
    d_w: &mut [f64],
    d_b: &mut [f64],
    d_in: Option<&mut [f64]>,
) {
    let plane = h * w;
    let ck = c_in * K * K;
    let mut buf = take_scratch(ck * plane);
    let cols = &mut buf[..ck * plane];
    im2col(input, c_in, h, w, cols);
    let g_rows: Vec<&[f64]> = d_out.chunks_exact(plane).take(c_out).collect();
    for (co, g) in g_rows.iter().enumerate() {
        d_b[co] += g.iter().sum::<f64>();
    }
    let col_rows: Vec<&[f64]> = cols.chunks_exact(plane).collect();
    all_dots(&g_rows, &col_rows, |co, k, d| d_w[co * ck + k] += d);

    if let Some(d_in) = d_in {
        // d_cols[k] = sum_co W[co, k] * d_out[co], written over the columns
        let wt: Vec<f64> = (0..ck).flat_map(|k| (0..c_out).map(move |co| (k, co))).map(|(k, co)| weights[co * ck + k]).collect();
        let off = |co: usize| co * plane;
        let mut k = 0;
        while k + 2 <= ck {
            let (c0, c1) = cols[k * plane..(k + 2) * plane].split_at_mut(plane);
            c0.fill(0.0);
            c1.fill(0.0);
            axpy_many2(&wt[k * c_out..(k + 1) * c_out], &wt[(k + 1) * c_out..(k + 2) * c_out], d_out, off, c0, c1);
            k += 2;
        }
        if k < ck {
            let c = &mut cols[k * plane..(k + 1) * plane];
            c.fill(0.0);
            axpy_many(&wt[k * c_out..(k + 1) * c_out], d_out, off, c);
        }
        col2im_add(cols, c_in, h, w, d_in);
    }
    return_scratch(buf);
}

simd_dispatch! {
    /// Accumulates weight and bias gradients into `d_w`/`d_b`, and the input
    /// gradient into `d_in` when requested.
    #[allow(clippy::too_many_arguments)]
    pub fn conv_same_backward(
        input: &[f64],
        c_in: usize,
        h: usize,
        w: usize,
        weights: &[f64],
        c_out: usize,
        d_out: &[f64],
        d_w: &mut [f64],
        d_b: &mut [f64],
        d_in: Option<&mut [f64]>,
    ) => conv_same_backward_impl
}

/// 2x2 max pooling, stride 2, trailing odd row/column dropped. `idx` receives
/// the flat input offset of each winner; ties go to the first in row-major order.
pub fn maxpool2_forward(input: &[f64], c: usize, h: usize, w: usize, out: &mut [f64], idx: &mut [usize]) {
    let (oh, ow) = (h / 2, w / 2);
    for ch in 0..c {
        let base = ch * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let r0 = base + 2 * i * w + 2 * j;
                let cand = [r0, r0 + 1, r0 + w, r0 + w + 1];
                let mut best = cand[0];
                for &p in &cand[1..] {
                    if input[p] > input[best] {
                        best = p;
                    }
                }
                let o = ch * oh * ow + i * ow + j;
                out[o] = input[best];
                idx[o] = best;
            }
        }
    }
}

pub fn maxpool2_backward(idx: &[usize], d_out: &[f64], d_in: &mut [f64]) {
    for (&p, &g) in idx.iter().zip(d_out) {
        d_in[p] += g;
    }
}

/// `out = weights · input + bias` with `weights` of shape `[m, n]`.
pub fn dense_forward(input: &[f64], weights: &[f64], bias: &[f64], m: usize, n: usize, out: &mut [f64]) {
    let mut outs = [vec![0.0; m]];
    dense_forward_batch(&[input], weights, bias, m, n, &mut outs);
    out.copy_from_slice(&outs[0]);
}

#[allow(clippy::too_many_arguments)]
pub fn dense_backward(
    input: &[f64],
    weights: &[f64],
    m: usize,
    n: usize,
    d_out: &[f64],
    d_w: &mut [f64],
    d_b: &mut [f64],
    d_in: Option<&mut [f64]>,
) {
    match d_in {
        Some(d_in) => {
            let mut d_ins = [d_in.to_vec()];
            dense_backward_batch(&[input], weights, m, n, &[d_out], d_w, d_b, Some(&mut d_ins));
            d_in.copy_from_slice(&d_ins[0]);
        }
        None => dense_backward_batch(&[input], weights, m, n, &[d_out], d_w, d_b, None),
    }
}

#[inline(always)]
fn dense_forward_batch_impl(inputs: &[&[f64]], weights: &[f64], bias: &[f64], m: usize, n: usize, outs: &mut [Vec<f64>]) {
    let rows: Vec<&[f64]> = weights.chunks_exact(n).take(m).collect();
    all_dots(&rows, inputs, |r, s, d| outs[s][r] = bias[r] + d);
}

simd_dispatch! {
    /// [`dense_forward`] over a batch. Each weight row is read once for all
    /// inputs; every output is bit-identical to the single-input kernel.
    pub fn dense_forward_batch(inputs: &[&[f64]], weights: &[f64], bias: &[f64], m: usize, n: usize, outs: &mut [Vec<f64>])
        => dense_forward_batch_impl
}

#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn dense_backward_batch_impl(
    inputs: &[&[f64]],
    weights: &[f64],
    m: usize,
    n: usize,
    d_outs: &[&[f64]],
    d_w: &mut [f64],
    d_b: &mut [f64],
    d_ins: Option<&mut [Vec<f64>]>,
) {
    let batch = inputs.len();
    for r in 0..m {
        let d_row = &mut d_w[r * n..(r + 1) * n];
        let mut s = 0;
        while s + 4 <= batch {
            let g = [d_outs[s][r], d_outs[s + 1][r], d_outs[s + 2][r], d_outs[s + 3][r]];
            if g != [0.0; 4] {
                d_b[r] = (((d_b[r] + g[0]) + g[1]) + g[2]) + g[3];
                axpy4(g, [inputs[s], inputs[s + 1], inputs[s + 2], inputs[s + 3]], d_row);
            }
            s += 4;
        }
        for s in s..batch {
            let g = d_outs[s][r];
            if g != 0.0 {
                d_b[r] += g;
                axpy(g, inputs[s], d_row);
            }
        }
    }
    if let Some(d_ins) = d_ins {
        // blocks of four weight rows stay in cache while every input visits them
        let row = |r: usize| &weights[r * n..(r + 1) * n];
        let mut r = 0;
        while r + 4 <= m {
            let rows = [row(r), row(r + 1), row(r + 2), row(r + 3)];
            for (d_in, d_out) in d_ins.iter_mut().zip(d_outs) {
                let g = [d_out[r], d_out[r + 1], d_out[r + 2], d_out[r + 3]];
                if g != [0.0; 4] {
                    axpy4(g, rows, d_in);
                }
            }
            r += 4;
        }
        for r in r..m {
            for (d_in, d_out) in d_ins.iter_mut().zip(d_outs) {
                if d_out[r] != 0.0 {
                    axpy(d_out[r], row(r), d_in);
                }
            }
        }
    }
}

simd_dispatch! {
    /// [`dense_backward`] over a batch. Gradients are summed in input order, so
    /// the result equals one single-input call per input, in sequence.
    #[allow(clippy::too_many_arguments)]
    pub fn dense_backward_batch(
        inputs: &[&[f64]],
        weights: &[f64],
        m: usize,
        n: usize,
        d_outs: &[&[f64]],
        d_w: &mut [f64],
        d_b: &mut [f64],
        d_ins: Option<&mut [Vec<f64>]>,
    ) => dense_backward_batch_impl
}
