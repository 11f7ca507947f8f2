//! Raw array kernels behind the tape ops. All loops are written so the hot
//! inner dimension runs over contiguous slices.

use super::Scalar;

/// C[m,n] = A[m,k] * B[k,n]
pub(crate) fn matmul<E: Scalar>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut c = vec![E::zero(); m * n];
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let w = a[i * k + p];
            if w == E::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv = *cv + w * *bv;
            }
        }
    }
    c
}

/// dA[i,p] += sum_j G[i,j] B[p,j];  dB[p,j] += sum_i A[i,p] G[i,j]
pub(crate) fn matmul_backward<E: Scalar>(
    a: &[E],
    b: &[E],
    g: &[E],
    m: usize,
    k: usize,
    n: usize,
) -> (Vec<E>, Vec<E>) {
    let mut da = vec![E::zero(); m * k];
    let mut db = vec![E::zero(); k * n];
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = E::zero();
            for (gv, bv) in g_row.iter().zip(b_row) {
                acc = acc + *gv * *bv;
            }
            da[i * k + p] = acc;
            let w = a[i * k + p];
            let db_row = &mut db[p * n..(p + 1) * n];
            for (dv, gv) in db_row.iter_mut().zip(g_row) {
                *dv = *dv + w * *gv;
            }
        }
    }
    (da, db)
}

/// y[n] = W[n,d] x[d]
pub(crate) fn matvec<E: Scalar>(w: &[E], x: &[E], n: usize, d: usize) -> Vec<E> {
    (0..n)
        .map(|i| {
            let row = &w[i * d..(i + 1) * d];
            row.iter().zip(x).map(|(a, b)| *a * *b).sum()
        })
        .collect()
}

/// dW[i,:] = g[i] x;  dx = W^T g
pub(crate) fn matvec_backward<E: Scalar>(
    w: &[E],
    x: &[E],
    g: &[E],
    n: usize,
    d: usize,
) -> (Vec<E>, Vec<E>) {
    let mut dw = vec![E::zero(); n * d];
    let mut dx = vec![E::zero(); d];
    for i in 0..n {
        let gi = g[i];
        let dw_row = &mut dw[i * d..(i + 1) * d];
        for (dv, xv) in dw_row.iter_mut().zip(x) {
            *dv = gi * *xv;
        }
        let w_row = &w[i * d..(i + 1) * d];
        for (dv, wv) in dx.iter_mut().zip(w_row) {
            *dv = *dv + gi * *wv;
        }
    }
    (dw, dx)
}

/// Geometry of one 2-d convolution / pooling application.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

/// Cross-correlation: out[f,oy,ox] = bias[f] + sum_{c,ky,kx} k[f,c,ky,kx] * in[c, oy*s+ky-pt, ox*s+kx-pl]
pub(crate) fn conv2d_forward<E: Scalar>(
    input: &[E],
    kernel: &[E],
    bias: &[E],
    g: ConvGeom,
) -> Vec<E> {
    let mut out = vec![E::zero(); g.out_ch * g.out_h * g.out_w];
    let out_plane = g.out_h * g.out_w;
    for f in 0..g.out_ch {
        let b = bias[f];
        out[f * out_plane..(f + 1) * out_plane]
            .iter_mut()
            .for_each(|v| *v = b);
    }
    let in_plane = g.in_h * g.in_w;
    for c in 0..g.in_ch {
        let in_c = &input[c * in_plane..(c + 1) * in_plane];
        for f in 0..g.out_ch {
            let out_f = f * out_plane;
            let k_base = (f * g.in_ch + c) * g.kh * g.kw;
            for ky in 0..g.kh {
                // valid output rows: 0 <= oy*s + ky - pad_top < in_h
                let (oy0, oy1) = valid_range(g.out_h, g.in_h, g.stride, ky, g.pad_top);
                for kx in 0..g.kw {
                    let w = kernel[k_base + ky * g.kw + kx];
                    if w == E::zero() {
                        continue;
                    }
                    let (ox0, ox1) = valid_range(g.out_w, g.in_w, g.stride, kx, g.pad_left);
                    if ox0 >= ox1 {
                        continue;
                    }
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad_top;
                        let in_row = iy * g.in_w;
                        let out_row = out_f + oy * g.out_w;
                        if g.stride == 1 {
                            let ix0 = ox0 + kx - g.pad_left;
                            let src = &in_c[in_row + ix0..in_row + ix0 + (ox1 - ox0)];
                            let dst = &mut out[out_row + ox0..out_row + ox1];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d = *d + w * *s;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                let ix = ox * g.stride + kx - g.pad_left;
                                out[out_row + ox] = out[out_row + ox] + w * in_c[in_row + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Output index range on one axis for which the tap (k, pad) stays in bounds.
fn valid_range(out_dim: usize, in_dim: usize, stride: usize, k: usize, pad: usize) -> (usize, usize) {
    // o*s + k - pad >= 0  =>  o >= ceil((pad - k) / s)
    let lo = if pad > k { (pad - k + stride - 1) / stride } else { 0 };
    // o*s + k - pad <= in_dim - 1  =>  o <= (in_dim - 1 + pad - k) / s
    let hi_incl = in_dim + pad;
    let hi = if hi_incl > k {
        ((hi_incl - 1 - k) / stride + 1).min(out_dim)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Gradients for conv2d: input, kernel, and bias, all in one sweep.
pub(crate) fn conv2d_backward<E: Scalar>(
    input: &[E],
    kernel: &[E],
    gout: &[E],
    g: ConvGeom,
    want_dinput: bool,
) -> (Option<Vec<E>>, Vec<E>, Vec<E>) {
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    let mut dinput = if want_dinput {
        Some(vec![E::zero(); g.in_ch * in_plane])
    } else {
        None
    };
    let mut dkernel = vec![E::zero(); g.out_ch * g.in_ch * g.kh * g.kw];
    let mut dbias = vec![E::zero(); g.out_ch];

    for f in 0..g.out_ch {
        let gf = &gout[f * out_plane..(f + 1) * out_plane];
        dbias[f] = gf.iter().copied().sum();
    }

    for c in 0..g.in_ch {
        let in_c = &input[c * in_plane..(c + 1) * in_plane];
        for f in 0..g.out_ch {
            let gf = &gout[f * out_plane..(f + 1) * out_plane];
            let k_base = (f * g.in_ch + c) * g.kh * g.kw;
            for ky in 0..g.kh {
                let (oy0, oy1) = valid_range(g.out_h, g.in_h, g.stride, ky, g.pad_top);
                for kx in 0..g.kw {
                    let (ox0, ox1) = valid_range(g.out_w, g.in_w, g.stride, kx, g.pad_left);
                    if ox0 >= ox1 {
                        continue;
                    }
                    let w = kernel[k_base + ky * g.kw + kx];
                    let mut wg = E::zero();
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad_top;
                        let in_row = iy * g.in_w;
                        let g_row = &gf[oy * g.out_w + ox0..oy * g.out_w + ox1];
                        if g.stride == 1 {
                            let ix0 = ox0 + kx - g.pad_left;
                            let src = &in_c[in_row + ix0..in_row + ix0 + (ox1 - ox0)];
                            for (gv, sv) in g_row.iter().zip(src) {
                                wg = wg + *gv * *sv;
                            }
                            if let Some(di) = dinput.as_mut() {
                                let dst = &mut di[c * in_plane + in_row + ix0
                                    ..c * in_plane + in_row + ix0 + (ox1 - ox0)];
                                for (dv, gv) in dst.iter_mut().zip(g_row) {
                                    *dv = *dv + w * *gv;
                                }
                            }
                        } else {
                            for (j, gv) in g_row.iter().enumerate() {
                                let ox = ox0 + j;
                                let ix = ox * g.stride + kx - g.pad_left;
                                wg = wg + *gv * in_c[in_row + ix];
                                if let Some(di) = dinput.as_mut() {
                                    di[c * in_plane + in_row + ix] =
                                        di[c * in_plane + in_row + ix] + w * *gv;
                                }
                            }
                        }
                    }
                    dkernel[k_base + ky * g.kw + kx] = dkernel[k_base + ky * g.kw + kx] + wg;
                }
            }
        }
    }
    (dinput, dkernel, dbias)
}

/// Max pooling; returns the pooled values and the flat input index of each
/// window maximum (first occurrence in row-major scan order wins ties).
pub(crate) fn maxpool2d_forward<E: Scalar>(
    input: &[E],
    channels: usize,
    in_h: usize,
    in_w: usize,
    window: usize,
    stride: usize,
) -> (Vec<E>, Vec<u32>, usize, usize) {
    let out_h = (in_h - window) / stride + 1;
    let out_w = (in_w - window) / stride + 1;
    let in_plane = in_h * in_w;
    let mut out = Vec::with_capacity(channels * out_h * out_w);
    let mut argmax = Vec::with_capacity(channels * out_h * out_w);
    for c in 0..channels {
        let base = c * in_plane;
        for oy in 0..out_h {
            for ox in 0..out_w {
                let iy0 = oy * stride;
                let ix0 = ox * stride;
                let mut best = input[base + iy0 * in_w + ix0];
                let mut best_idx = (base + iy0 * in_w + ix0) as u32;
                for wy in 0..window {
                    let row = base + (iy0 + wy) * in_w + ix0;
                    for wx in 0..window {
                        let v = input[row + wx];
                        if v > best {
                            best = v;
                            best_idx = (row + wx) as u32;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    (out, argmax, out_h, out_w)
}
