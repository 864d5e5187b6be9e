//! Raw f64 kernels shared by the tape ops.
//!
//! Parallel loops hand each worker a disjoint slice of the output and keep
//! every per-element reduction in a fixed order, so results are bit-identical
//! regardless of thread count or scheduling.

use rayon::prelude::*;

/// Work threshold (in multiply-adds) below which a kernel stays serial.
const PAR_THRESHOLD: usize = 1 << 15;

/// Rows per parallel task, sized so a task is at least ~256k flops.
fn rows_per_task(m: usize, k: usize, n: usize) -> usize {
    (1 + (1 << 17) / (k * n).max(1)).min(m).max(1)
}

fn matmul_rows(a: &[f64], b: &[f64], k: usize, n: usize, i0: usize, out: &mut [f64]) {
    let rows = out.len() / n;
    let mut r = 0;
    // Four rows at a time keeps eight independent FMA chains in flight.
    while r + 4 <= rows {
        let i = i0 + r;
        let a0 = &a[i * k..(i + 1) * k];
        let a1 = &a[(i + 1) * k..(i + 2) * k];
        let a2 = &a[(i + 2) * k..(i + 3) * k];
        let a3 = &a[(i + 3) * k..(i + 4) * k];
        let (r0, rest) = out[r * n..].split_at_mut(n);
        let (r1, rest) = rest.split_at_mut(n);
        let (r2, rest) = rest.split_at_mut(n);
        let r3 = &mut rest[..n];
        for kk in 0..k {
            let b_row = &b[kk * n..kk * n + n];
            let (v0, v1, v2, v3) = (a0[kk], a1[kk], a2[kk], a3[kk]);
            for j in 0..n {
                let bv = b_row[j];
                r0[j] += v0 * bv;
                r1[j] += v1 * bv;
                r2[j] += v2 * bv;
                r3[j] += v3 * bv;
            }
        }
        r += 4;
    }
    while r < rows {
        let i = i0 + r;
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[r * n..r * n + n];
        for (kk, &aik) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..kk * n + n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
        r += 1;
    }
}

/// C[m,n] = A[m,k] * B[k,n], row-major.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    if m * k * n >= PAR_THRESHOLD {
        let rpt = rows_per_task(m, k, n);
        out.par_chunks_mut(rpt * n)
            .enumerate()
            .for_each(|(t, chunk)| matmul_rows(a, b, k, n, t * rpt, chunk));
    } else {
        matmul_rows(a, b, k, n, 0, &mut out);
    }
    out
}

/// B[cols,rows] = A[rows,cols]^T, tiled for cache locality.
pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), rows * cols);
    const TILE: usize = 32;
    let mut out = vec![0.0; rows * cols];
    for rt in (0..rows).step_by(TILE) {
        let r_end = (rt + TILE).min(rows);
        for ct in (0..cols).step_by(TILE) {
            let c_end = (ct + TILE).min(cols);
            for r in rt..r_end {
                for c in ct..c_end {
                    out[c * rows + r] = a[r * cols + c];
                }
            }
        }
    }
    out
}

/// exp with near-ulp accuracy over the softmax range, fully branch-free so
/// the row loops vectorize. Values below the normal f64 range flush to zero
/// (their softmax contribution is indistinguishable from zero anyway).
#[inline(always)]
pub fn fast_exp(x: f64) -> f64 {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    let x = x.clamp(-745.0, 709.0);
    let kf = (x * LOG2E + f64::from_bits(0x4338000000000000)) - f64::from_bits(0x4338000000000000);
    let r = (x - kf * LN2_HI) - kf * LN2_LO;
    // Estrin-style degree-11 Taylor polynomial of exp on |r| <= ln(2)/2;
    // max relative error is below 1e-16 on that interval.
    let r2 = r * r;
    let r4 = r2 * r2;
    let p01 = 1.0 + r;
    let p23 = 0.5 + r * (1.0 / 6.0);
    let p45 = 1.0 / 24.0 + r * (1.0 / 120.0);
    let p67 = 1.0 / 720.0 + r * (1.0 / 5_040.0);
    let p89 = 1.0 / 40_320.0 + r * (1.0 / 362_880.0);
    let pab = 1.0 / 3_628_800.0 + r * (1.0 / 39_916_800.0);
    let lo = p01 + r2 * p23;
    let mid = p45 + r2 * p67;
    let hi = p89 + r2 * pab;
    let p = lo + r4 * (mid + r4 * hi);
    // Scale by 2^k through the exponent bits; a clamped-to-zero exponent
    // produces exactly 0.0 for the deep-underflow range.
    let k = kf as i64;
    let e = (k + 1023).max(0) as u64;
    f64::from_bits(e << 52) * p
}

/// Row-wise softmax with max-subtraction for stability.
pub fn softmax_rows(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    debug_assert_eq!(x.len(), rows * cols);
    let mut out = vec![0.0; rows * cols];
    let run_row = |i: usize, out_row: &mut [f64]| {
        let row = &x[i * cols..(i + 1) * cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        // Separate map and reduce passes so the exp loop vectorizes.
        for (o, &v) in out_row.iter_mut().zip(row) {
            *o = fast_exp(v - max);
        }
        let mut acc = [0.0f64; 4];
        let mut chunks = out_row.chunks_exact(4);
        for c in &mut chunks {
            acc[0] += c[0];
            acc[1] += c[1];
            acc[2] += c[2];
            acc[3] += c[3];
        }
        let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
        for &v in chunks.remainder() {
            sum += v;
        }
        let inv = 1.0 / sum;
        for o in out_row.iter_mut() {
            *o *= inv;
        }
    };
    if rows * cols >= PAR_THRESHOLD && rows > 1 {
        let rpt = rows_per_task(rows, cols, 4);
        out.par_chunks_mut(rpt * cols).enumerate().for_each(|(t, chunk)| {
            for (r, row) in chunk.chunks_mut(cols).enumerate() {
                run_row(t * rpt + r, row);
            }
        });
    } else {
        for (i, row) in out.chunks_mut(cols).enumerate() {
            run_row(i, row);
        }
    }
    out
}

/// dL/dx for row-wise softmax, given the softmax output y and dL/dy.
pub fn softmax_rows_backward(y: &[f64], gy: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut gx = vec![0.0; rows * cols];
    let run_row = |i: usize, gx_row: &mut [f64]| {
        let y_row = &y[i * cols..(i + 1) * cols];
        let g_row = &gy[i * cols..(i + 1) * cols];
        let dot: f64 = y_row.iter().zip(g_row).map(|(a, b)| a * b).sum();
        for ((o, &yv), &gv) in gx_row.iter_mut().zip(y_row).zip(g_row) {
            *o = yv * (gv - dot);
        }
    };
    if rows * cols >= PAR_THRESHOLD && rows > 1 {
        let rpt = rows_per_task(rows, cols, 4);
        gx.par_chunks_mut(rpt * cols).enumerate().for_each(|(t, chunk)| {
            for (r, row) in chunk.chunks_mut(cols).enumerate() {
                run_row(t * rpt + r, row);
            }
        });
    } else {
        for (i, row) in gx.chunks_mut(cols).enumerate() {
            run_row(i, row);
        }
    }
    gx
}

/// Conv geometry helper: output extent for one spatial dimension.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize, dil: usize) -> usize {
    let eff = dil * (kernel - 1) + 1;
    (input + 2 * pad - eff) / stride + 1
}

/// Unfold one image [c,h,w] into columns [c*kh*kw, oh*ow].
#[allow(clippy::too_many_arguments)]
pub fn im2col(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    dil: usize,
) -> Vec<f64> {
    let oh = conv_out_extent(h, kh, stride, pad, dil);
    let ow = conv_out_extent(w, kw, stride, pad, dil);
    let mut col = vec![0.0; c * kh * kw * oh * ow];
    let plane = oh * ow;
    for ci in 0..c {
        let x_plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &mut col[((ci * kh + ki) * kw + kj) * plane..][..plane];
                let di = ki * dil;
                let dj = kj * dil;
                for oy in 0..oh {
                    let iy = (oy * stride + di) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let x_row = &x_plane[iy as usize * w..iy as usize * w + w];
                    let out_row = &mut row[oy * ow..oy * ow + ow];
                    if stride == 1 {
                        // Contiguous copy of the valid span.
                        let lo = dj as isize - pad as isize;
                        let start = (-lo).max(0) as usize;
                        let end = ow.min((w as isize - lo).max(0) as usize);
                        if start < end {
                            let src0 = (lo + start as isize) as usize;
                            out_row[start..end].copy_from_slice(&x_row[src0..src0 + end - start]);
                        }
                    } else {
                        for (ox, o) in out_row.iter_mut().enumerate() {
                            let ix = (ox * stride + dj) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *o = x_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Fold columns [c*kh*kw, oh*ow] back onto an image [c,h,w], accumulating
/// overlapping contributions (the adjoint of `im2col`).
#[allow(clippy::too_many_arguments)]
pub fn col2im(
    col: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    dil: usize,
) -> Vec<f64> {
    let oh = conv_out_extent(h, kh, stride, pad, dil);
    let ow = conv_out_extent(w, kw, stride, pad, dil);
    let plane = oh * ow;
    let mut x = vec![0.0; c * h * w];
    // Channels are independent, so scattering per channel is race-free and
    // keeps a fixed accumulation order.
    let run_channel = |ci: usize, x_plane: &mut [f64]| {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &col[((ci * kh + ki) * kw + kj) * plane..][..plane];
                let di = ki * dil;
                let dj = kj * dil;
                for oy in 0..oh {
                    let iy = (oy * stride + di) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let x_row = &mut x_plane[iy as usize * w..iy as usize * w + w];
                    let in_row = &row[oy * ow..oy * ow + ow];
                    for (ox, &v) in in_row.iter().enumerate() {
                        let ix = (ox * stride + dj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            x_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    };
    if c * kh * kw * plane >= PAR_THRESHOLD && c > 1 {
        x.par_chunks_mut(h * w)
            .enumerate()
            .for_each(|(ci, x_plane)| run_channel(ci, x_plane));
    } else {
        for (ci, x_plane) in x.chunks_mut(h * w).enumerate() {
            run_channel(ci, x_plane);
        }
    }
    x
}

/// Source coordinate and blend weights for one output index under the
/// align-corners=false convention.
#[inline]
pub fn bilinear_coeffs(dst: usize, scale: f64, in_extent: usize) -> (usize, usize, f64) {
    let s = (dst as f64 + 0.5) * scale - 0.5;
    let i0f = s.floor();
    let frac = s - i0f;
    let i0 = (i0f as isize).clamp(0, in_extent as isize - 1) as usize;
    let i1 = ((i0f as isize) + 1).clamp(0, in_extent as isize - 1) as usize;
    (i0, i1, frac)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        // [[1,2],[3,4]] * [[1],[1]] = [[3],[7]]
        let out = matmul(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0], 2, 2, 1);
        assert_eq!(out, vec![3.0, 7.0]);
    }

    #[test]
    fn matmul_matches_naive_on_odd_shapes() {
        for (m, k, n) in [(5, 3, 7), (9, 4, 1), (6, 6, 6), (33, 17, 9)] {
            let a: Vec<f64> = (0..m * k).map(|i| ((i * 31 % 13) as f64) - 6.0).collect();
            let b: Vec<f64> = (0..k * n).map(|i| ((i * 17 % 11) as f64) - 5.0).collect();
            let got = matmul(&a, &b, m, k, n);
            for i in 0..m {
                for j in 0..n {
                    let want: f64 = (0..k).map(|kk| a[i * k + kk] * b[kk * n + j]).sum();
                    assert_eq!(got[i * n + j], want, "({m},{k},{n}) at ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn transpose_roundtrip() {
        let a: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let t = transpose(&a, 3, 4);
        let back = transpose(&t, 4, 3);
        assert_eq!(a, back);
        let big: Vec<f64> = (0..70 * 41).map(|v| (v as f64).sin()).collect();
        let t = transpose(&big, 70, 41);
        for r in 0..70 {
            for c in 0..41 {
                assert_eq!(t[c * 70 + r], big[r * 41 + c]);
            }
        }
    }

    #[test]
    fn fast_exp_agrees_with_libm() {
        let mut worst = 0.0f64;
        let mut x: f64 = -700.0;
        while x <= 50.0 {
            let want = x.exp();
            let got = fast_exp(x);
            let err = if want == 0.0 {
                got.abs()
            } else {
                ((got - want) / want).abs()
            };
            worst = worst.max(err);
            x += 0.0137;
        }
        assert!(worst < 1e-13, "max rel err {worst}");
        assert_eq!(fast_exp(0.0), 1.0);
    }

    #[test]
    fn im2col_identity_kernel() {
        let x: Vec<f64> = (0..9).map(|v| v as f64).collect();
        let col = im2col(&x, 1, 3, 3, 1, 1, 1, 0, 1);
        assert_eq!(col, x);
    }

    #[test]
    fn im2col_col2im_adjoint_identity() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y.
        let (c, h, w, kh, kw, stride, pad, dil) = (2, 5, 6, 3, 3, 2, 1, 1);
        let oh = conv_out_extent(h, kh, stride, pad, dil);
        let ow = conv_out_extent(w, kw, stride, pad, dil);
        let x: Vec<f64> = (0..c * h * w).map(|i| ((i * 29 % 23) as f64) - 11.0).collect();
        let y: Vec<f64> = (0..c * kh * kw * oh * ow)
            .map(|i| ((i * 37 % 19) as f64) - 9.0)
            .collect();
        let cx = im2col(&x, c, h, w, kh, kw, stride, pad, dil);
        let cy = col2im(&y, c, h, w, kh, kw, stride, pad, dil);
        let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&cy).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn conv_extent_stride2_same_pad() {
        assert_eq!(conv_out_extent(64, 3, 2, 1, 1), 32);
        assert_eq!(conv_out_extent(7, 3, 2, 1, 1), 4); // ceil(7/2)
    }
}
