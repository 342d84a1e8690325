//! Convolution kernels: im2col + GEMM, parallel over the batch dimension.
//!
//! Each sample's output is produced by exactly one task with a fixed
//! accumulation order, so results are bitwise reproducible regardless of
//! thread scheduling.

use rayon::prelude::*;

use super::element::Element;

pub(crate) fn out_extent(input: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < k || input == 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Row-partitioned GEMM: `c[M,N] += a[M,K] . b[K,N]` with explicit strides
/// on `a` and `b`; `c` is a contiguous row-major buffer. Chunks of rows go
/// to separate threads; each output element is still accumulated in a single
/// task, keeping the result deterministic.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_rowpar<E: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[E],
    rsa: isize,
    csa: isize,
    b: &[E],
    rsb: isize,
    csb: isize,
    c: &mut [E],
) {
    debug_assert_eq!(c.len(), m * n);
    let threads = rayon::current_num_threads().max(1);
    let chunk = m.div_ceil(threads);
    if threads == 1 || m < 64 || chunk == 0 {
        unsafe {
            E::gemm(
                m,
                k,
                n,
                E::ONE,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                E::ONE,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        return;
    }
    let a_addr = a.as_ptr() as usize;
    c.par_chunks_mut(chunk * n).enumerate().for_each(|(ci, cc)| {
        let row0 = ci * chunk;
        let rows = cc.len() / n;
        unsafe {
            let a_ptr = (a_addr as *const E).offset(row0 as isize * rsa);
            E::gemm(
                rows,
                k,
                n,
                E::ONE,
                a_ptr,
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                E::ONE,
                cc.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    });
}

/// Unfold one sample `[C,H,W]` into `col[C*k*k, OH*OW]` (zero padding).
#[allow(clippy::too_many_arguments)]
fn im2col<E: Element>(
    input: &[E],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    col: &mut [E],
) {
    let ospatial = oh * ow;
    debug_assert_eq!(col.len(), c * k * k * ospatial);
    for ci in 0..c {
        let chan = &input[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * ospatial;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let dst = &mut col[row + oy * ow..row + (oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(E::ZERO);
                        continue;
                    }
                    let src_row = &chan[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            E::ZERO
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Fold `col[C*k*k, OH*OW]` gradients back into a `[C,H,W]` buffer.
#[allow(clippy::too_many_arguments)]
fn col2im_add<E: Element>(
    col: &[E],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    out: &mut [E],
) {
    let ospatial = oh * ow;
    for ci in 0..c {
        let chan = &mut out[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * ospatial;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &col[row + oy * ow..row + (oy + 1) * ow];
                    let dst_row = &mut chan[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && (ix as usize) < w {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn forward<E: Element>(
    input: &[E],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    weight: &[E],
    o: usize,
    k: usize,
    bias: Option<&[E]>,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<E> {
    let ospatial = oh * ow;
    let kk = c * k * k;
    let mut out = vec![E::ZERO; n * o * ospatial];
    let in_plane = c * h * w;
    out.par_chunks_mut(o * ospatial)
        .enumerate()
        .for_each(|(s, out_s)| {
            let mut col = vec![E::ZERO; kk * ospatial];
            im2col(
                &input[s * in_plane..(s + 1) * in_plane],
                c,
                h,
                w,
                k,
                stride,
                pad,
                oh,
                ow,
                &mut col,
            );
            unsafe {
                // out_s[O, OS] = weight[O, KK] . col[KK, OS]
                E::gemm(
                    o,
                    kk,
                    ospatial,
                    E::ONE,
                    weight.as_ptr(),
                    kk as isize,
                    1,
                    col.as_ptr(),
                    ospatial as isize,
                    1,
                    E::ZERO,
                    out_s.as_mut_ptr(),
                    ospatial as isize,
                    1,
                );
            }
            if let Some(b) = bias {
                for (oi, row) in out_s.chunks_exact_mut(ospatial).enumerate() {
                    let bv = b[oi];
                    for v in row {
                        *v += bv;
                    }
                }
            }
        });
    out
}

pub(crate) struct ConvGrads<E> {
    pub input: Option<Vec<E>>,
    pub weight: Option<Vec<E>>,
    pub bias: Option<Vec<E>>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<E: Element>(
    input: &[E],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    weight: &[E],
    o: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    out_grad: &[E],
    need_input: bool,
    need_weight: bool,
    need_bias: bool,
) -> ConvGrads<E> {
    let ospatial = oh * ow;
    let kk = c * k * k;
    let in_plane = c * h * w;
    let out_plane = o * ospatial;

    struct SampleGrads<E> {
        input: Option<Vec<E>>,
        weight: Option<Vec<E>>,
        bias: Option<Vec<E>>,
    }

    let per_sample: Vec<SampleGrads<E>> = (0..n)
        .into_par_iter()
        .map(|s| {
            let g_s = &out_grad[s * out_plane..(s + 1) * out_plane];
            let mut col = vec![E::ZERO; kk * ospatial];
            im2col(
                &input[s * in_plane..(s + 1) * in_plane],
                c,
                h,
                w,
                k,
                stride,
                pad,
                oh,
                ow,
                &mut col,
            );

            let weight_g = need_weight.then(|| {
                let mut gw = vec![E::ZERO; o * kk];
                unsafe {
                    // gW[O, KK] = g[O, OS] . col^T[OS, KK]
                    E::gemm(
                        o,
                        ospatial,
                        kk,
                        E::ONE,
                        g_s.as_ptr(),
                        ospatial as isize,
                        1,
                        col.as_ptr(),
                        1,
                        ospatial as isize,
                        E::ZERO,
                        gw.as_mut_ptr(),
                        kk as isize,
                        1,
                    );
                }
                gw
            });

            let input_g = need_input.then(|| {
                let mut gcol = vec![E::ZERO; kk * ospatial];
                unsafe {
                    // gcol[KK, OS] = weight^T[KK, O] . g[O, OS]
                    E::gemm(
                        kk,
                        o,
                        ospatial,
                        E::ONE,
                        weight.as_ptr(),
                        1,
                        kk as isize,
                        g_s.as_ptr(),
                        ospatial as isize,
                        1,
                        E::ZERO,
                        gcol.as_mut_ptr(),
                        ospatial as isize,
                        1,
                    );
                }
                let mut gi = vec![E::ZERO; in_plane];
                col2im_add(&gcol, c, h, w, k, stride, pad, oh, ow, &mut gi);
                gi
            });

            let bias_g = need_bias.then(|| {
                let mut gb = vec![E::ZERO; o];
                for (oi, row) in g_s.chunks_exact(ospatial).enumerate() {
                    let mut sum = E::ZERO;
                    for &v in row {
                        sum += v;
                    }
                    gb[oi] = sum;
                }
                gb
            });

            SampleGrads {
                input: input_g,
                weight: weight_g,
                bias: bias_g,
            }
        })
        .collect();

    // Reduce across samples in index order so the sum is deterministic.
    let mut grads = ConvGrads {
        input: need_input.then(|| vec![E::ZERO; n * in_plane]),
        weight: need_weight.then(|| vec![E::ZERO; o * kk]),
        bias: need_bias.then(|| vec![E::ZERO; o]),
    };
    for (s, sg) in per_sample.into_iter().enumerate() {
        if let (Some(acc), Some(gi)) = (grads.input.as_mut(), sg.input) {
            acc[s * in_plane..(s + 1) * in_plane].copy_from_slice(&gi);
        }
        if let (Some(acc), Some(gw)) = (grads.weight.as_mut(), sg.weight) {
            for (a, v) in acc.iter_mut().zip(gw) {
                *a += v;
            }
        }
        if let (Some(acc), Some(gb)) = (grads.bias.as_mut(), sg.bias) {
            for (a, v) in acc.iter_mut().zip(gb) {
                *a += v;
            }
        }
    }
    grads
}
