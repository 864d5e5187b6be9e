//! 2-d cross-correlation (im2col + GEMM) with stride, padding, and dilation.
//! 1x1 stride-1 convolutions skip the unfold and multiply in place.

use super::kernels::{self, conv_out_extent};
use super::ops::dims4;
use super::{Result, Tape, Tensor, TensorError};

impl Tape {
    /// `x`: [N,C,H,W], `w`: [O,C,kh,kw], `bias`: optional [O].
    /// Odd kernels with pad=(k-1)/2·dil and stride 1 preserve geometry.
    pub fn conv2d(
        &self,
        x: &Tensor,
        w: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        pad: usize,
        dilation: usize,
    ) -> Result<Tensor> {
        let (n, c, h, wid) = dims4(x)?;
        let (o, cw, kh, kw) = dims4(w)?;
        if cw != c {
            return Err(TensorError::Dimension(format!(
                "conv2d channel mismatch: input C={c}, kernel C={cw}"
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(TensorError::Dimension(format!(
                "conv2d kernel extents must be odd, got {kh}x{kw}"
            )));
        }
        if let Some(b) = bias {
            if b.shape() != [o] {
                return Err(TensorError::ShapeMismatch {
                    expected: vec![o],
                    got: b.shape().to_vec(),
                });
            }
        }
        let oh = conv_out_extent(h, kh, stride, pad, dilation);
        let ow = conv_out_extent(wid, kw, stride, pad, dilation);
        let out_plane = oh * ow;
        let ck2 = c * kh * kw;
        let in_plane = h * wid;
        let pointwise = kh == 1 && kw == 1 && stride == 1 && pad == 0;

        let mut out = vec![0.0; n * o * out_plane];
        {
            let xd = x.data();
            let wd = w.data();
            for ni in 0..n {
                let x_n = &xd[ni * c * in_plane..(ni + 1) * c * in_plane];
                let y = if pointwise {
                    kernels::matmul(&wd, x_n, o, c, in_plane)
                } else {
                    let col = kernels::im2col(x_n, c, h, wid, kh, kw, stride, pad, dilation);
                    kernels::matmul(&wd, &col, o, ck2, out_plane)
                };
                out[ni * o * out_plane..(ni + 1) * o * out_plane].copy_from_slice(&y);
            }
            if let Some(b) = bias {
                let bd = b.data();
                for ni in 0..n {
                    for oi in 0..o {
                        let base = (ni * o + oi) * out_plane;
                        let bv = bd[oi];
                        for v in &mut out[base..base + out_plane] {
                            *v += bv;
                        }
                    }
                }
            }
        }
        let out = Tensor::new(out, &[n, o, oh, ow])?;

        let mut tracked: Vec<&Tensor> = vec![x, w];
        if let Some(b) = bias {
            tracked.push(b);
        }
        if self.should_record(&tracked) {
            let (x2, w2, o2) = (x.clone(), w.clone(), out.clone());
            let b2 = bias.cloned();
            self.record("conv2d", &tracked, &out, Box::new(move || {
                o2.with_grad(|g| {
                    let xd = x2.data();
                    let wd = w2.data();
                    let mut dw = if w2.requires_grad() {
                        Some(vec![0.0; o * ck2])
                    } else {
                        None
                    };
                    let mut dx = if x2.requires_grad() {
                        Some(vec![0.0; n * c * h * wid])
                    } else {
                        None
                    };
                    let wt = if dx.is_some() {
                        kernels::transpose(&wd, o, ck2)
                    } else {
                        Vec::new()
                    };
                    for ni in 0..n {
                        let g_n = &g[ni * o * out_plane..(ni + 1) * o * out_plane];
                        let x_n = &xd[ni * c * in_plane..(ni + 1) * c * in_plane];
                        if let Some(dw) = dw.as_mut() {
                            // dW += g_n · col^T (col recomputed; cheaper than
                            // keeping it alive through the forward pass)
                            let col_t = if pointwise {
                                kernels::transpose(x_n, c, in_plane)
                            } else {
                                let col = kernels::im2col(
                                    x_n, c, h, wid, kh, kw, stride, pad, dilation,
                                );
                                kernels::transpose(&col, ck2, out_plane)
                            };
                            let contrib = kernels::matmul(g_n, &col_t, o, out_plane, ck2);
                            for (a, b) in dw.iter_mut().zip(&contrib) {
                                *a += b;
                            }
                        }
                        if let Some(dx) = dx.as_mut() {
                            let dcol = kernels::matmul(&wt, g_n, ck2, o, out_plane);
                            let slot = &mut dx[ni * c * in_plane..(ni + 1) * c * in_plane];
                            if pointwise {
                                slot.copy_from_slice(&dcol);
                            } else {
                                let dxn = kernels::col2im(
                                    &dcol, c, h, wid, kh, kw, stride, pad, dilation,
                                );
                                slot.copy_from_slice(&dxn);
                            }
                        }
                    }
                    drop(xd);
                    drop(wd);
                    if let Some(dw) = dw {
                        w2.accumulate_grad(&dw);
                    }
                    if let Some(dx) = dx {
                        x2.accumulate_grad(&dx);
                    }
                    if let Some(b) = &b2 {
                        if b.requires_grad() {
                            let mut db = vec![0.0; o];
                            for ni in 0..n {
                                for oi in 0..o {
                                    let base = (ni * o + oi) * out_plane;
                                    db[oi] += g[base..base + out_plane].iter().sum::<f64>();
                                }
                            }
                            b.accumulate_grad(&db);
                        }
                    }
                });
            }));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::super::Tape;
    use super::*;

    #[test]
    fn ones_kernel_sums_neighborhood() {
        // 3x3 input of ones, 3x3 kernel of ones, pad 1 -> center value 9.
        let tape = Tape::inference();
        let x = Tensor::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = tape.conv2d(&x, &w, None, 1, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y.to_vec()[4], 9.0);
        assert_eq!(y.to_vec()[0], 4.0); // corner sees a 2x2 patch
    }

    #[test]
    fn identity_1x1_kernel_is_bit_exact_identity() {
        let tape = Tape::inference();
        let vals: Vec<f64> = (0..2 * 3 * 4 * 4).map(|i| (i as f64).sin()).collect();
        let x = Tensor::new(vals.clone(), &[2, 3, 4, 4]).unwrap();
        // kernel that copies channel c -> channel c
        let mut w = vec![0.0; 3 * 3];
        for c in 0..3 {
            w[c * 3 + c] = 1.0;
        }
        let w = Tensor::new(w, &[3, 3, 1, 1]).unwrap();
        let y = tape.conv2d(&x, &w, None, 1, 0, 1).unwrap();
        assert_eq!(y.to_vec(), vals);
    }

    #[test]
    fn dilated_conv_matches_naive_loop() {
        let tape = Tape::inference();
        let x_vals: Vec<f64> = (0..2 * 8 * 8).map(|i| ((i * 13 % 23) as f64) - 11.0).collect();
        let w_vals: Vec<f64> = (0..3 * 2 * 9).map(|i| ((i * 7 % 5) as f64) - 2.0).collect();
        let x = Tensor::new(x_vals.clone(), &[1, 2, 8, 8]).unwrap();
        let w = Tensor::new(w_vals.clone(), &[3, 2, 3, 3]).unwrap();
        let (dil, pad) = (2usize, 2usize);
        let y = tape.conv2d(&x, &w, None, 1, pad, dil).unwrap();
        assert_eq!(y.shape(), &[1, 3, 8, 8]);
        let yd = y.to_vec();
        for oc in 0..3 {
            for oy in 0..8usize {
                for ox in 0..8usize {
                    let mut want = 0.0;
                    for ic in 0..2 {
                        for ky in 0..3usize {
                            for kx in 0..3usize {
                                let iy = oy as isize + (ky * dil) as isize - pad as isize;
                                let ix = ox as isize + (kx * dil) as isize - pad as isize;
                                if iy >= 0 && iy < 8 && ix >= 0 && ix < 8 {
                                    want += x_vals[(ic * 8 + iy as usize) * 8 + ix as usize]
                                        * w_vals[((oc * 2 + ic) * 3 + ky) * 3 + kx];
                                }
                            }
                        }
                    }
                    let got = yd[(oc * 8 + oy) * 8 + ox];
                    assert!((want - got).abs() < 1e-9, "({oc},{oy},{ox}): {want} vs {got}");
                }
            }
        }
    }

    #[test]
    fn channel_mismatch_errors() {
        let tape = Tape::inference();
        let x = Tensor::zeros(&[1, 3, 4, 4]);
        let w = Tensor::zeros(&[2, 4, 3, 3]);
        assert!(tape.conv2d(&x, &w, None, 1, 1, 1).is_err());
    }
}
