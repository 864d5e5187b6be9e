//! Normalization, pooling, and resampling ops.

use super::kernels::bilinear_coeffs;
use super::ops::dims4;
use super::{Result, Tape, Tensor, TensorError};

/// Running statistics for one batch-norm layer, stored as plain tensors so
/// checkpoints can carry them alongside parameters.
pub struct BatchNormState {
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BatchNormState {
    pub fn new(channels: usize) -> BatchNormState {
        BatchNormState {
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
        }
    }
}

impl Tape {
    /// Batch normalization over (N,H,W) per channel.
    ///
    /// Training mode normalizes by batch statistics (biased variance) and
    /// updates the running statistics in `state`; eval mode normalizes by the
    /// running statistics and leaves them untouched.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &self,
        x: &Tensor,
        gamma: &Tensor,
        beta: &Tensor,
        state: &BatchNormState,
        training: bool,
        eps: f64,
        momentum: f64,
    ) -> Result<Tensor> {
        let (n, c, h, w) = dims4(x)?;
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                expected: vec![c],
                got: gamma.shape().to_vec(),
            });
        }
        let plane = h * w;
        let m = n * plane;

        let (mean, var) = if training {
            let xd = x.data();
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ci in 0..c {
                let mut sum = 0.0;
                for ni in 0..n {
                    let base = (ni * c + ci) * plane;
                    sum += xd[base..base + plane].iter().sum::<f64>();
                }
                let mu = sum / m as f64;
                let mut sq = 0.0;
                for ni in 0..n {
                    let base = (ni * c + ci) * plane;
                    for &v in &xd[base..base + plane] {
                        let d = v - mu;
                        sq += d * d;
                    }
                }
                mean[ci] = mu;
                var[ci] = sq / m as f64;
            }
            drop(xd);
            // running <- (1 - momentum) * running + momentum * batch
            {
                let mut rm = state.running_mean.to_vec();
                let mut rv = state.running_var.to_vec();
                for ci in 0..c {
                    rm[ci] = (1.0 - momentum) * rm[ci] + momentum * mean[ci];
                    rv[ci] = (1.0 - momentum) * rv[ci] + momentum * var[ci];
                }
                state.running_mean.set_data(&rm);
                state.running_var.set_data(&rv);
            }
            (mean, var)
        } else {
            (state.running_mean.to_vec(), state.running_var.to_vec())
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let gd = gamma.data();
        let bd = beta.data();
        let mut out = vec![0.0; n * c * plane];
        {
            let xd = x.data();
            for ni in 0..n {
                for ci in 0..c {
                    let base = (ni * c + ci) * plane;
                    let (mu, is, ga, be) = (mean[ci], inv_std[ci], gd[ci], bd[ci]);
                    for (o, &v) in out[base..base + plane].iter_mut().zip(&xd[base..base + plane]) {
                        *o = ga * (v - mu) * is + be;
                    }
                }
            }
        }
        drop(gd);
        drop(bd);
        let out = Tensor::new(out, &[n, c, h, w])?;

        if self.should_record(&[x, gamma, beta]) {
            let (x2, g2, b2, o2) = (x.clone(), gamma.clone(), beta.clone(), out.clone());
            self.record("batch_norm", &[x, gamma, beta], &out, Box::new(move || {
                o2.with_grad(|g| {
                    let xd = x2.data();
                    let gd = g2.data();
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    let mut dx = if x2.requires_grad() {
                        Some(vec![0.0; n * c * plane])
                    } else {
                        None
                    };
                    for ci in 0..c {
                        let (mu, is) = (mean[ci], inv_std[ci]);
                        let mut sum_g = 0.0;
                        let mut sum_gx = 0.0;
                        for ni in 0..n {
                            let base = (ni * c + ci) * plane;
                            for i in 0..plane {
                                let xh = (xd[base + i] - mu) * is;
                                sum_g += g[base + i];
                                sum_gx += g[base + i] * xh;
                            }
                        }
                        dbeta[ci] = sum_g;
                        dgamma[ci] = sum_gx;
                        if let Some(dx) = dx.as_mut() {
                            let ga = gd[ci];
                            if training {
                                let inv_m = 1.0 / m as f64;
                                for ni in 0..n {
                                    let base = (ni * c + ci) * plane;
                                    for i in 0..plane {
                                        let xh = (xd[base + i] - mu) * is;
                                        dx[base + i] = ga
                                            * is
                                            * (g[base + i] - inv_m * sum_g - xh * inv_m * sum_gx);
                                    }
                                }
                            } else {
                                for ni in 0..n {
                                    let base = (ni * c + ci) * plane;
                                    for i in 0..plane {
                                        dx[base + i] = g[base + i] * ga * is;
                                    }
                                }
                            }
                        }
                    }
                    drop(xd);
                    drop(gd);
                    if g2.requires_grad() {
                        g2.accumulate_grad(&dgamma);
                    }
                    if b2.requires_grad() {
                        b2.accumulate_grad(&dbeta);
                    }
                    if let Some(dx) = dx {
                        x2.accumulate_grad(&dx);
                    }
                });
            }));
        }
        Ok(out)
    }

    /// Spatial mean: [N,C,H,W] -> [N,C,1,1].
    pub fn global_avg_pool(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = dims4(x)?;
        let plane = h * w;
        let xd = x.data();
        let mut out = vec![0.0; n * c];
        for nc in 0..n * c {
            out[nc] = xd[nc * plane..(nc + 1) * plane].iter().sum::<f64>() / plane as f64;
        }
        drop(xd);
        let out = Tensor::new(out, &[n, c, 1, 1])?;
        if self.should_record(&[x]) {
            let (x2, o2) = (x.clone(), out.clone());
            self.record("global_avg_pool", &[x], &out, Box::new(move || {
                o2.with_grad(|g| {
                    let inv = 1.0 / plane as f64;
                    let mut dx = vec![0.0; n * c * plane];
                    for nc in 0..n * c {
                        let gv = g[nc] * inv;
                        for o in &mut dx[nc * plane..(nc + 1) * plane] {
                            *o = gv;
                        }
                    }
                    x2.accumulate_grad(&dx);
                });
            }));
        }
        Ok(out)
    }

    /// Bilinear resize with the align-corners=false convention. Resizing to
    /// the input extent reproduces the input bit-exactly.
    pub fn upsample_bilinear(&self, x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
        let (n, c, h, w) = dims4(x)?;
        if out_h == 0 || out_w == 0 {
            return Err(TensorError::Dimension("upsample to zero extent".into()));
        }
        let scale_h = h as f64 / out_h as f64;
        let scale_w = w as f64 / out_w as f64;
        let rows: Vec<(usize, usize, f64)> =
            (0..out_h).map(|i| bilinear_coeffs(i, scale_h, h)).collect();
        let cols: Vec<(usize, usize, f64)> =
            (0..out_w).map(|j| bilinear_coeffs(j, scale_w, w)).collect();

        let xd = x.data();
        let mut out = vec![0.0; n * c * out_h * out_w];
        for nc in 0..n * c {
            let src = &xd[nc * h * w..(nc + 1) * h * w];
            let dst = &mut out[nc * out_h * out_w..(nc + 1) * out_h * out_w];
            for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                    let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                    dst[oy * out_w + ox] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
        drop(xd);
        let out = Tensor::new(out, &[n, c, out_h, out_w])?;
        if self.should_record(&[x]) {
            let (x2, o2) = (x.clone(), out.clone());
            self.record("upsample_bilinear", &[x], &out, Box::new(move || {
                o2.with_grad(|g| {
                    let rows: Vec<(usize, usize, f64)> =
                        (0..out_h).map(|i| bilinear_coeffs(i, scale_h, h)).collect();
                    let cols: Vec<(usize, usize, f64)> =
                        (0..out_w).map(|j| bilinear_coeffs(j, scale_w, w)).collect();
                    let mut dx = vec![0.0; n * c * h * w];
                    for nc in 0..n * c {
                        let src = &mut dx[nc * h * w..(nc + 1) * h * w];
                        let gsl = &g[nc * out_h * out_w..(nc + 1) * out_h * out_w];
                        for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
                            for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                                let gv = gsl[oy * out_w + ox];
                                src[y0 * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                                src[y0 * w + x1] += gv * (1.0 - fy) * fx;
                                src[y1 * w + x0] += gv * fy * (1.0 - fx);
                                src[y1 * w + x1] += gv * fy * fx;
                            }
                        }
                    }
                    x2.accumulate_grad(&dx);
                });
            }));
        }
        Ok(out)
    }

    /// Per-channel spatial L2 norms: [N,C,H,W] -> [N,C,1,1],
    /// s[n,c] = sqrt(sum_{h,w} x^2 + eps).
    pub fn spatial_l2_norm(&self, x: &Tensor, eps: f64) -> Result<Tensor> {
        let (n, c, h, w) = dims4(x)?;
        let plane = h * w;
        let xd = x.data();
        let mut out = vec![0.0; n * c];
        for nc in 0..n * c {
            let sq: f64 = xd[nc * plane..(nc + 1) * plane].iter().map(|v| v * v).sum();
            out[nc] = (sq + eps).sqrt();
        }
        drop(xd);
        let out = Tensor::new(out, &[n, c, 1, 1])?;
        if self.should_record(&[x]) {
            let (x2, o2) = (x.clone(), out.clone());
            let saved = out.clone();
            self.record("spatial_l2_norm", &[x], &out, Box::new(move || {
                o2.with_grad(|g| {
                    let xd = x2.data();
                    let sd = saved.data();
                    let mut dx = vec![0.0; n * c * plane];
                    for nc in 0..n * c {
                        let coef = g[nc] / sd[nc];
                        for (o, &v) in dx[nc * plane..(nc + 1) * plane]
                            .iter_mut()
                            .zip(&xd[nc * plane..(nc + 1) * plane])
                        {
                            *o = coef * v;
                        }
                    }
                    drop(xd);
                    drop(sd);
                    x2.accumulate_grad(&dx);
                });
            }));
        }
        Ok(out)
    }

    /// Normalize the C channel scalars of [N,C,1,1] per sample:
    /// out_c = s_c * sqrt(C) / sqrt(sum_c s_c^2 + eps).
    pub fn channel_normalize(&self, s: &Tensor, eps: f64) -> Result<Tensor> {
        let (n, c, h, w) = dims4(s)?;
        if h != 1 || w != 1 {
            return Err(TensorError::Dimension(format!(
                "channel_normalize expects [N,C,1,1], got {:?}",
                s.shape()
            )));
        }
        let sd = s.data();
        let sqrt_c = (c as f64).sqrt();
        let mut norms = vec![0.0; n];
        let mut out = vec![0.0; n * c];
        for ni in 0..n {
            let row = &sd[ni * c..(ni + 1) * c];
            let t = (row.iter().map(|v| v * v).sum::<f64>() + eps).sqrt();
            norms[ni] = t;
            for (o, &v) in out[ni * c..(ni + 1) * c].iter_mut().zip(row) {
                *o = v * sqrt_c / t;
            }
        }
        drop(sd);
        let out = Tensor::new(out, &[n, c, 1, 1])?;
        if self.should_record(&[s]) {
            let (s2, o2) = (s.clone(), out.clone());
            self.record("channel_normalize", &[s], &out, Box::new(move || {
                o2.with_grad(|g| {
                    let sd = s2.data();
                    let mut ds = vec![0.0; n * c];
                    for ni in 0..n {
                        let row = &sd[ni * c..(ni + 1) * c];
                        let grow = &g[ni * c..(ni + 1) * c];
                        let t = norms[ni];
                        let dot: f64 = grow.iter().zip(row).map(|(gv, sv)| gv * sv).sum();
                        let t3 = t * t * t;
                        for (o, (&gv, &sv)) in
                            ds[ni * c..(ni + 1) * c].iter_mut().zip(grow.iter().zip(row))
                        {
                            *o = sqrt_c * (gv / t - sv * dot / t3);
                        }
                    }
                    drop(sd);
                    s2.accumulate_grad(&ds);
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
    fn train_mode_standardizes() {
        let tape = Tape::inference();
        let vals: Vec<f64> = (0..2 * 3 * 4 * 4).map(|i| ((i * 37 % 17) as f64) - 8.0).collect();
        let x = Tensor::new(vals, &[2, 3, 4, 4]).unwrap();
        let gamma = Tensor::full(&[3], 1.0);
        let beta = Tensor::zeros(&[3]);
        let state = BatchNormState::new(3);
        let y = tape.batch_norm(&x, &gamma, &beta, &state, true, 1e-5, 0.1).unwrap();
        let yd = y.to_vec();
        let plane = 16;
        for c in 0..3 {
            let mut vals = Vec::new();
            for n in 0..2 {
                vals.extend_from_slice(&yd[(n * 3 + c) * plane..(n * 3 + c + 1) * plane]);
            }
            let m: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let v: f64 = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-6, "channel mean {m}");
            assert!((v - 1.0).abs() < 1e-3, "channel var {v}");
        }
    }

    #[test]
    fn constant_input_maps_to_zero() {
        let tape = Tape::inference();
        let x = Tensor::full(&[2, 2, 3, 3], 4.2);
        let gamma = Tensor::full(&[2], 1.0);
        let beta = Tensor::zeros(&[2]);
        let state = BatchNormState::new(2);
        let y = tape.batch_norm(&x, &gamma, &beta, &state, true, 1e-5, 0.1).unwrap();
        for v in y.to_vec() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn zero_batch_is_unrepresentable() {
        // The engine rejects zero extents at construction, so a zero-size
        // batch can never reach batch_norm.
        assert!(Tensor::new(vec![], &[0, 2, 3, 3]).is_err());
    }

    #[test]
    fn gap_of_constant_and_checkerboard() {
        let tape = Tape::inference();
        let x = Tensor::full(&[1, 1, 4, 4], 5.0);
        assert_eq!(tape.global_avg_pool(&x).unwrap().to_vec(), vec![5.0]);
        let board: Vec<f64> = (0..16).map(|i| ((i / 4 + i % 4) % 2) as f64).collect();
        let x = Tensor::new(board, &[1, 1, 4, 4]).unwrap();
        assert_eq!(tape.global_avg_pool(&x).unwrap().to_vec(), vec![0.5]);
    }

    #[test]
    fn upsample_from_1x1_is_constant() {
        let tape = Tape::inference();
        let x = Tensor::full(&[1, 2, 1, 1], 3.5);
        let y = tape.upsample_bilinear(&x, 4, 4).unwrap();
        assert!(y.to_vec().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn upsample_same_size_is_identity() {
        let tape = Tape::inference();
        let vals: Vec<f64> = (0..32).map(|i| (i as f64).cos()).collect();
        let x = Tensor::new(vals.clone(), &[1, 2, 4, 4]).unwrap();
        let y = tape.upsample_bilinear(&x, 4, 4).unwrap();
        assert_eq!(y.to_vec(), vals);
    }

    #[test]
    fn upsample_2x2_to_4x4_hand_values() {
        let tape = Tape::inference();
        let x = Tensor::new(vec![0.0, 1.0, 1.0, 2.0], &[1, 1, 2, 2]).unwrap();
        let y = tape.upsample_bilinear(&x, 4, 4).unwrap();
        let expect = vec![
            0.0, 0.25, 0.75, 1.0, //
            0.25, 0.5, 1.0, 1.25, //
            0.75, 1.0, 1.5, 1.75, //
            1.0, 1.25, 1.75, 2.0,
        ];
        for (a, b) in y.to_vec().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn spatial_norm_unit_impulse_and_zeros() {
        let tape = Tape::inference();
        let mut vals = vec![0.0; 9];
        vals[4] = 1.0;
        let x = Tensor::new(vals, &[1, 1, 3, 3]).unwrap();
        let s = tape.spatial_l2_norm(&x, 1e-12).unwrap();
        assert!((s.item() - 1.0).abs() < 1e-6);
        let z = Tensor::zeros(&[1, 1, 3, 3]);
        let s = tape.spatial_l2_norm(&z, 1e-5).unwrap();
        assert!(s.is_finite());
        assert!(s.item() > 0.0 && s.item() < 1e-2);
    }

    #[test]
    fn channel_normalize_cases() {
        let tape = Tape::inference();
        // all-equal channels -> all approximately 1
        let s = Tensor::full(&[1, 4, 1, 1], 0.7);
        let n = tape.channel_normalize(&s, 1e-12).unwrap();
        for v in n.to_vec() {
            assert!((v - 1.0).abs() < 1e-6);
        }
        // single nonzero channel c -> sqrt(C) at c
        let s = Tensor::new(vec![0.0, 2.0, 0.0, 0.0], &[1, 4, 1, 1]).unwrap();
        let n = tape.channel_normalize(&s, 1e-12).unwrap();
        assert!((n.to_vec()[1] - 2.0).abs() < 1e-6);
        // zeros -> zeros, no NaN
        let s = Tensor::zeros(&[1, 4, 1, 1]);
        let n = tape.channel_normalize(&s, 1e-5).unwrap();
        assert!(n.is_finite());
        assert_eq!(n.to_vec(), vec![0.0; 4]);
    }
}
