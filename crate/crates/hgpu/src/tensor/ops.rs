//! Differentiable primitive ops recorded on the tape.

use super::kernels;
use super::{Result, Tape, Tensor, TensorError};

pub(crate) fn dims4(t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let s = t.shape();
    if s.len() != 4 {
        return Err(TensorError::Dimension(format!(
            "expected 4-d [N,C,H,W] tensor, got {s:?}"
        )));
    }
    Ok((s[0], s[1], s[2], s[3]))
}

pub(crate) fn dims2(t: &Tensor) -> Result<(usize, usize)> {
    let s = t.shape();
    if s.len() != 2 {
        return Err(TensorError::Dimension(format!(
            "expected 2-d tensor, got {s:?}"
        )));
    }
    Ok((s[0], s[1]))
}

fn check_same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            expected: a.shape().to_vec(),
            got: b.shape().to_vec(),
        });
    }
    Ok(())
}

impl Tensor {
    pub(crate) fn has_grad(&self) -> bool {
        self.inner.grad.borrow().is_some()
    }

    pub(crate) fn with_grad<R>(&self, f: impl FnOnce(&[f64]) -> R) -> Option<R> {
        self.inner.grad.borrow().as_deref().map(f)
    }
}

impl Tape {
    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        check_same_shape(a, b)?;
        let out: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(out, a.shape())?;
        if self.should_record(&[a, b]) {
            let (a2, b2, o2) = (a.clone(), b.clone(), out.clone());
            self.record("add", &[a, b], &out, Box::new(move || {
                o2.with_grad(|g| {
                    if a2.requires_grad() {
                        a2.accumulate_grad(g);
                    }
                    if b2.requires_grad() {
                        b2.accumulate_grad(g);
                    }
                });
            }));
        }
        Ok(out)
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        check_same_shape(a, b)?;
        let out: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x - y).collect();
        let out = Tensor::new(out, a.shape())?;
        if self.should_record(&[a, b]) {
            let (a2, b2, o2) = (a.clone(), b.clone(), out.clone());
            self.record("sub", &[a, b], &out, Box::new(move || {
                o2.with_grad(|g| {
                    if a2.requires_grad() {
                        a2.accumulate_grad(g);
                    }
                    if b2.requires_grad() {
                        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                        b2.accumulate_grad(&neg);
                    }
                });
            }));
        }
        Ok(out)
    }

    /// Elementwise (Hadamard) product of same-shape tensors.
    pub fn hadamard(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        check_same_shape(a, b)?;
        let out: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(out, a.shape())?;
        if self.should_record(&[a, b]) {
            let (a2, b2, o2) = (a.clone(), b.clone(), out.clone());
            self.record("hadamard", &[a, b], &out, Box::new(move || {
                o2.with_grad(|g| {
                    if a2.requires_grad() {
                        let da: Vec<f64> =
                            g.iter().zip(b2.data().iter()).map(|(gv, bv)| gv * bv).collect();
                        a2.accumulate_grad(&da);
                    }
                    if b2.requires_grad() {
                        let db: Vec<f64> =
                            g.iter().zip(a2.data().iter()).map(|(gv, av)| gv * av).collect();
                        b2.accumulate_grad(&db);
                    }
                });
            }));
        }
        Ok(out)
    }

    pub fn add_scalar(&self, x: &Tensor, s: f64) -> Result<Tensor> {
        let out: Vec<f64> = x.data().iter().map(|v| v + s).collect();
        let out = Tensor::new(out, x.shape())?;
        if self.should_record(&[x]) {
            let (x2, o2) = (x.clone(), out.clone());
            self.record("add_scalar", &[x], &out, Box::new(move || {
                o2.with_grad(|g| x2.accumulate_grad(g));
            }));
        }
        Ok(out)
    }

    pub fn mul_scalar(&self, x: &Tensor, s: f64) -> Result<Tensor> {
        let out: Vec<f64> = x.data().iter().map(|v| v * s).collect();
        let out = Tensor::new(out, x.shape())?;
        if self.should_record(&[x]) {
            let (x2, o2) = (x.clone(), out.clone());
            self.record("mul_scalar", &[x], &out, Box::new(move || {
                o2.with_grad(|g| {
                    let dx: Vec<f64> = g.iter().map(|v| v * s).collect();
                    x2.accumulate_grad(&dx);
                });
            }));
        }
        Ok(out)
    }

    pub fn sigmoid(&self, x: &Tensor) -> Result<Tensor> {
        let out: Vec<f64> = x.data().iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        let out = Tensor::new(out, x.shape())?;
        if self.should_record(&[x]) {
            let (x2, o2) = (x.clone(), out.clone());
            let saved = out.clone();
            self.record("sigmoid", &[x], &out, Box::new(move || {
                o2.with_grad(|g| {
                    let y = saved.data();
                    let dx: Vec<f64> = g.iter().zip(y.iter()).map(|(gv, yv)| gv * yv * (1.0 - yv)).collect();
                    x2.accumulate_grad(&dx);
                });
            }));
        }
        Ok(out)
    }

    pub fn tanh(&self, x: &Tensor) -> Result<Tensor> {
        let out: Vec<f64> = x.data().iter().map(|v| v.tanh()).collect();
        let out = Tensor::new(out, x.shape())?;
        if self.should_record(&[x]) {
            let (x2, o2) = (x.clone(), out.clone());
            let saved = out.clone();
            self.record("tanh", &[x], &out, Box::new(move || {
                o2.with_grad(|g| {
                    let y = saved.data();
                    let dx: Vec<f64> = g.iter().zip(y.iter()).map(|(gv, yv)| gv * (1.0 - yv * yv)).collect();
                    x2.accumulate_grad(&dx);
                });
            }));
        }
        Ok(out)
    }

    pub fn relu(&self, x: &Tensor) -> Result<Tensor> {
        let out: Vec<f64> = x.data().iter().map(|v| v.max(0.0)).collect();
        let out = Tensor::new(out, x.shape())?;
        if self.should_record(&[x]) {
            let (x2, o2) = (x.clone(), out.clone());
            self.record("relu", &[x], &out, Box::new(move || {
                o2.with_grad(|g| {
                    let xd = x2.data();
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(xd.iter())
                        .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    drop(xd);
                    x2.accumulate_grad(&dx);
                });
            }));
        }
        Ok(out)
    }

    /// Dense product of 2-d matrices: [M,K] x [K,N] -> [M,N].
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, ka) = dims2(a)?;
        let (kb, n) = dims2(b)?;
        if ka != kb {
            return Err(TensorError::Dimension(format!(
                "matmul inner mismatch: [{m},{ka}] x [{kb},{n}]"
            )));
        }
        let out = kernels::matmul(&a.data(), &b.data(), m, ka, n);
        let out = Tensor::new(out, &[m, n])?;
        if self.should_record(&[a, b]) {
            let (a2, b2, o2) = (a.clone(), b.clone(), out.clone());
            self.record("matmul", &[a, b], &out, Box::new(move || {
                o2.with_grad(|g| {
                    if a2.requires_grad() {
                        let bt = kernels::transpose(&b2.data(), ka, n);
                        let da = kernels::matmul(g, &bt, m, n, ka);
                        a2.accumulate_grad(&da);
                    }
                    if b2.requires_grad() {
                        let at = kernels::transpose(&a2.data(), m, ka);
                        let db = kernels::matmul(&at, g, ka, m, n);
                        b2.accumulate_grad(&db);
                    }
                });
            }));
        }
        Ok(out)
    }

    pub fn transpose2d(&self, x: &Tensor) -> Result<Tensor> {
        let (r, c) = dims2(x)?;
        let out = Tensor::new(kernels::transpose(&x.data(), r, c), &[c, r])?;
        if self.should_record(&[x]) {
            let (x2, o2) = (x.clone(), out.clone());
            self.record("transpose2d", &[x], &out, Box::new(move || {
                o2.with_grad(|g| {
                    let dx = kernels::transpose(g, c, r);
                    x2.accumulate_grad(&dx);
                });
            }));
        }
        Ok(out)
    }

    /// Row-wise softmax of a 2-d matrix; rows sum to 1.
    pub fn softmax_rows(&self, x: &Tensor) -> Result<Tensor> {
        let (r, c) = dims2(x)?;
        let out = Tensor::new(kernels::softmax_rows(&x.data(), r, c), &[r, c])?;
        if self.should_record(&[x]) {
            let (x2, o2) = (x.clone(), out.clone());
            let saved = out.clone();
            self.record("softmax_rows", &[x], &out, Box::new(move || {
                o2.with_grad(|g| {
                    let dx = kernels::softmax_rows_backward(&saved.data(), g, r, c);
                    x2.accumulate_grad(&dx);
                });
            }));
        }
        Ok(out)
    }

    /// Copy into a new shape with the same element count.
    pub fn reshape(&self, x: &Tensor, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != x.numel() {
            return Err(TensorError::Dimension(format!(
                "reshape {:?} -> {:?} changes element count",
                x.shape(),
                shape
            )));
        }
        let out = Tensor::new(x.to_vec(), shape)?;
        if self.should_record(&[x]) {
            let (x2, o2) = (x.clone(), out.clone());
            self.record("reshape", &[x], &out, Box::new(move || {
                o2.with_grad(|g| x2.accumulate_grad(g));
            }));
        }
        Ok(out)
    }

    /// Concatenate [N,Ci,H,W] tensors along the channel axis.
    pub fn concat_channels(&self, xs: &[&Tensor]) -> Result<Tensor> {
        if xs.is_empty() {
            return Err(TensorError::Dimension("concat of zero tensors".into()));
        }
        let (n, _, h, w) = dims4(xs[0])?;
        let mut channels = Vec::with_capacity(xs.len());
        for x in xs {
            let (ni, ci, hi, wi) = dims4(x)?;
            if (ni, hi, wi) != (n, h, w) {
                return Err(TensorError::ShapeMismatch {
                    expected: xs[0].shape().to_vec(),
                    got: x.shape().to_vec(),
                });
            }
            channels.push(ci);
        }
        let c_total: usize = channels.iter().sum();
        let plane = h * w;
        let mut out = vec![0.0; n * c_total * plane];
        for ni in 0..n {
            let mut c_off = 0;
            for (x, &ci) in xs.iter().zip(&channels) {
                let src = x.data();
                let src = &src[ni * ci * plane..(ni + 1) * ci * plane];
                out[(ni * c_total + c_off) * plane..(ni * c_total + c_off + ci) * plane]
                    .copy_from_slice(src);
                c_off += ci;
            }
        }
        let out = Tensor::new(out, &[n, c_total, h, w])?;
        if self.should_record(&(xs.to_vec())) {
            let parts: Vec<Tensor> = xs.iter().map(|x| (*x).clone()).collect();
            let o2 = out.clone();
            self.record("concat_channels", xs, &out, Box::new(move || {
                o2.with_grad(|g| {
                    let mut c_off = 0;
                    for (x, &ci) in parts.iter().zip(&channels) {
                        if x.requires_grad() {
                            let mut dx = vec![0.0; n * ci * plane];
                            for ni in 0..n {
                                dx[ni * ci * plane..(ni + 1) * ci * plane].copy_from_slice(
                                    &g[(ni * c_total + c_off) * plane
                                        ..(ni * c_total + c_off + ci) * plane],
                                );
                            }
                            x.accumulate_grad(&dx);
                        }
                        c_off += ci;
                    }
                });
            }));
        }
        Ok(out)
    }

    /// Extract one sample: [N,...] -> [1,...].
    pub fn batch_select(&self, x: &Tensor, index: usize) -> Result<Tensor> {
        let s = x.shape();
        let n = s[0];
        if index >= n {
            return Err(TensorError::Dimension(format!(
                "batch index {index} out of range for N={n}"
            )));
        }
        let per = x.numel() / n;
        let out: Vec<f64> = x.data()[index * per..(index + 1) * per].to_vec();
        let mut shape = s.to_vec();
        shape[0] = 1;
        let out = Tensor::new(out, &shape)?;
        if self.should_record(&[x]) {
            let (x2, o2) = (x.clone(), out.clone());
            self.record("batch_select", &[x], &out, Box::new(move || {
                o2.with_grad(|g| {
                    let mut dx = vec![0.0; per * n];
                    dx[index * per..(index + 1) * per].copy_from_slice(g);
                    x2.accumulate_grad(&dx);
                });
            }));
        }
        Ok(out)
    }

    /// Stack [1,...] samples into [P,...].
    pub fn batch_stack(&self, xs: &[&Tensor]) -> Result<Tensor> {
        if xs.is_empty() {
            return Err(TensorError::Dimension("stack of zero tensors".into()));
        }
        let per = xs[0].numel();
        let mut shape = xs[0].shape().to_vec();
        if shape[0] != 1 {
            return Err(TensorError::Dimension(format!(
                "batch_stack expects leading extent 1, got {:?}",
                shape
            )));
        }
        let mut out = Vec::with_capacity(per * xs.len());
        for x in xs {
            if x.shape() != xs[0].shape() {
                return Err(TensorError::ShapeMismatch {
                    expected: xs[0].shape().to_vec(),
                    got: x.shape().to_vec(),
                });
            }
            out.extend_from_slice(&x.data());
        }
        shape[0] = xs.len();
        let out = Tensor::new(out, &shape)?;
        if self.should_record(&(xs.to_vec())) {
            let parts: Vec<Tensor> = xs.iter().map(|x| (*x).clone()).collect();
            let o2 = out.clone();
            self.record("batch_stack", xs, &out, Box::new(move || {
                o2.with_grad(|g| {
                    for (i, x) in parts.iter().enumerate() {
                        if x.requires_grad() {
                            x.accumulate_grad(&g[i * per..(i + 1) * per]);
                        }
                    }
                });
            }));
        }
        Ok(out)
    }

    /// Sum of all elements -> scalar [1].
    pub fn sum_all(&self, x: &Tensor) -> Result<Tensor> {
        let s: f64 = x.data().iter().sum();
        let out = Tensor::scalar(s);
        if self.should_record(&[x]) {
            let (x2, o2) = (x.clone(), out.clone());
            let numel = x.numel();
            self.record("sum_all", &[x], &out, Box::new(move || {
                o2.with_grad(|g| {
                    x2.accumulate_grad(&vec![g[0]; numel]);
                });
            }));
        }
        Ok(out)
    }

    /// Per-sample channel gating: y[n,c,:,:] = x[n,c,:,:] * s[n,c,0,0].
    pub fn scale_channels(&self, x: &Tensor, s: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = dims4(x)?;
        let (ns, cs, hs, ws) = dims4(s)?;
        if (ns, cs, hs, ws) != (n, c, 1, 1) {
            return Err(TensorError::ShapeMismatch {
                expected: vec![n, c, 1, 1],
                got: s.shape().to_vec(),
            });
        }
        let plane = h * w;
        let sd = s.data();
        let mut out = vec![0.0; n * c * plane];
        {
            let xd = x.data();
            for nc in 0..n * c {
                let sv = sd[nc];
                for (o, &xv) in out[nc * plane..(nc + 1) * plane]
                    .iter_mut()
                    .zip(&xd[nc * plane..(nc + 1) * plane])
                {
                    *o = xv * sv;
                }
            }
        }
        drop(sd);
        let out = Tensor::new(out, &[n, c, h, w])?;
        if self.should_record(&[x, s]) {
            let (x2, s2, o2) = (x.clone(), s.clone(), out.clone());
            self.record("scale_channels", &[x, s], &out, Box::new(move || {
                o2.with_grad(|g| {
                    if x2.requires_grad() {
                        let sd = s2.data();
                        let mut dx = vec![0.0; n * c * plane];
                        for nc in 0..n * c {
                            let sv = sd[nc];
                            for (o, &gv) in dx[nc * plane..(nc + 1) * plane]
                                .iter_mut()
                                .zip(&g[nc * plane..(nc + 1) * plane])
                            {
                                *o = gv * sv;
                            }
                        }
                        drop(sd);
                        x2.accumulate_grad(&dx);
                    }
                    if s2.requires_grad() {
                        let xd = x2.data();
                        let mut ds = vec![0.0; n * c];
                        for nc in 0..n * c {
                            ds[nc] = g[nc * plane..(nc + 1) * plane]
                                .iter()
                                .zip(&xd[nc * plane..(nc + 1) * plane])
                                .map(|(gv, xv)| gv * xv)
                                .sum();
                        }
                        drop(xd);
                        s2.accumulate_grad(&ds);
                    }
                });
            }));
        }
        Ok(out)
    }

    /// Per-sample channel bias: y[n,c,:,:] = x[n,c,:,:] + s[n,c,0,0].
    pub fn add_channel_map(&self, x: &Tensor, s: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = dims4(x)?;
        let (ns, cs, hs, ws) = dims4(s)?;
        if (ns, cs, hs, ws) != (n, c, 1, 1) {
            return Err(TensorError::ShapeMismatch {
                expected: vec![n, c, 1, 1],
                got: s.shape().to_vec(),
            });
        }
        let plane = h * w;
        let sd = s.data();
        let mut out = x.to_vec();
        for nc in 0..n * c {
            let sv = sd[nc];
            for o in &mut out[nc * plane..(nc + 1) * plane] {
                *o += sv;
            }
        }
        drop(sd);
        let out = Tensor::new(out, &[n, c, h, w])?;
        if self.should_record(&[x, s]) {
            let (x2, s2, o2) = (x.clone(), s.clone(), out.clone());
            self.record("add_channel_map", &[x, s], &out, Box::new(move || {
                o2.with_grad(|g| {
                    if x2.requires_grad() {
                        x2.accumulate_grad(g);
                    }
                    if s2.requires_grad() {
                        let mut ds = vec![0.0; n * c];
                        for nc in 0..n * c {
                            ds[nc] = g[nc * plane..(nc + 1) * plane].iter().sum();
                        }
                        s2.accumulate_grad(&ds);
                    }
                });
            }));
        }
        Ok(out)
    }

    /// Spatial gating shared across channels: y[n,c,h,w] = x[n,c,h,w] * m[n,0,h,w].
    pub fn scale_spatial(&self, x: &Tensor, m: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = dims4(x)?;
        let (nm, cm, hm, wm) = dims4(m)?;
        if (nm, cm, hm, wm) != (n, 1, h, w) {
            return Err(TensorError::ShapeMismatch {
                expected: vec![n, 1, h, w],
                got: m.shape().to_vec(),
            });
        }
        let plane = h * w;
        let md = m.data();
        let mut out = vec![0.0; n * c * plane];
        {
            let xd = x.data();
            for ni in 0..n {
                let gate = &md[ni * plane..(ni + 1) * plane];
                for ci in 0..c {
                    let base = (ni * c + ci) * plane;
                    for (i, o) in out[base..base + plane].iter_mut().enumerate() {
                        *o = xd[base + i] * gate[i];
                    }
                }
            }
        }
        drop(md);
        let out = Tensor::new(out, &[n, c, h, w])?;
        if self.should_record(&[x, m]) {
            let (x2, m2, o2) = (x.clone(), m.clone(), out.clone());
            self.record("scale_spatial", &[x, m], &out, Box::new(move || {
                o2.with_grad(|g| {
                    if x2.requires_grad() {
                        let md = m2.data();
                        let mut dx = vec![0.0; n * c * plane];
                        for ni in 0..n {
                            let gate = &md[ni * plane..(ni + 1) * plane];
                            for ci in 0..c {
                                let base = (ni * c + ci) * plane;
                                for (i, o) in dx[base..base + plane].iter_mut().enumerate() {
                                    *o = g[base + i] * gate[i];
                                }
                            }
                        }
                        drop(md);
                        x2.accumulate_grad(&dx);
                    }
                    if m2.requires_grad() {
                        let xd = x2.data();
                        let mut dm = vec![0.0; n * plane];
                        for ni in 0..n {
                            for ci in 0..c {
                                let base = (ni * c + ci) * plane;
                                for i in 0..plane {
                                    dm[ni * plane + i] += g[base + i] * xd[base + i];
                                }
                            }
                        }
                        drop(xd);
                        m2.accumulate_grad(&dm);
                    }
                });
            }));
        }
        Ok(out)
    }

    /// Per-channel weights shared over batch and space: y = x * w[c].
    pub fn mul_channel_weights(&self, x: &Tensor, w: &Tensor) -> Result<Tensor> {
        let (n, c, h, wd) = dims4(x)?;
        if w.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                expected: vec![c],
                got: w.shape().to_vec(),
            });
        }
        let plane = h * wd;
        let wv = w.data();
        let mut out = vec![0.0; n * c * plane];
        {
            let xd = x.data();
            for ni in 0..n {
                for ci in 0..c {
                    let base = (ni * c + ci) * plane;
                    let wc = wv[ci];
                    for (o, &xv) in out[base..base + plane].iter_mut().zip(&xd[base..base + plane]) {
                        *o = xv * wc;
                    }
                }
            }
        }
        drop(wv);
        let out = Tensor::new(out, &[n, c, h, wd])?;
        if self.should_record(&[x, w]) {
            let (x2, w2, o2) = (x.clone(), w.clone(), out.clone());
            self.record("mul_channel_weights", &[x, w], &out, Box::new(move || {
                o2.with_grad(|g| {
                    if x2.requires_grad() {
                        let wv = w2.data();
                        let mut dx = vec![0.0; n * c * plane];
                        for ni in 0..n {
                            for ci in 0..c {
                                let base = (ni * c + ci) * plane;
                                let wc = wv[ci];
                                for (o, &gv) in
                                    dx[base..base + plane].iter_mut().zip(&g[base..base + plane])
                                {
                                    *o = gv * wc;
                                }
                            }
                        }
                        drop(wv);
                        x2.accumulate_grad(&dx);
                    }
                    if w2.requires_grad() {
                        let xd = x2.data();
                        let mut dw = vec![0.0; c];
                        for ni in 0..n {
                            for ci in 0..c {
                                let base = (ni * c + ci) * plane;
                                dw[ci] += g[base..base + plane]
                                    .iter()
                                    .zip(&xd[base..base + plane])
                                    .map(|(gv, xv)| gv * xv)
                                    .sum::<f64>();
                            }
                        }
                        drop(xd);
                        w2.accumulate_grad(&dw);
                    }
                });
            }));
        }
        Ok(out)
    }

    /// Per-channel bias shared over batch and space: y = x + w[c].
    pub fn add_channel_weights(&self, x: &Tensor, w: &Tensor) -> Result<Tensor> {
        let (n, c, h, wd) = dims4(x)?;
        if w.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                expected: vec![c],
                got: w.shape().to_vec(),
            });
        }
        let plane = h * wd;
        let wv = w.data();
        let mut out = x.to_vec();
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * plane;
                let wc = wv[ci];
                for o in &mut out[base..base + plane] {
                    *o += wc;
                }
            }
        }
        drop(wv);
        let out = Tensor::new(out, &[n, c, h, wd])?;
        if self.should_record(&[x, w]) {
            let (x2, w2, o2) = (x.clone(), w.clone(), out.clone());
            self.record("add_channel_weights", &[x, w], &out, Box::new(move || {
                o2.with_grad(|g| {
                    if x2.requires_grad() {
                        x2.accumulate_grad(g);
                    }
                    if w2.requires_grad() {
                        let mut dw = vec![0.0; c];
                        for ni in 0..n {
                            for ci in 0..c {
                                let base = (ni * c + ci) * plane;
                                dw[ci] += g[base..base + plane].iter().sum::<f64>();
                            }
                        }
                        w2.accumulate_grad(&dw);
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

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn matmul_identity() {
        let tape = Tape::inference();
        let eye = Tensor::new(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &[3, 3]).unwrap();
        let a = Tensor::new((1..=9).map(f64::from).collect(), &[3, 3]).unwrap();
        let out = tape.matmul(&eye, &a).unwrap();
        assert_eq!(out.to_vec(), a.to_vec());
    }

    #[test]
    fn matmul_hand_sum() {
        let tape = Tape::inference();
        let a = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let b = Tensor::new(vec![1.0, 1.0], &[2, 1]).unwrap();
        assert_eq!(tape.matmul(&a, &b).unwrap().to_vec(), vec![3.0, 7.0]);
    }

    #[test]
    fn matmul_inner_mismatch_errors() {
        let tape = Tape::inference();
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        assert!(tape.matmul(&a, &b).is_err());
    }

    #[test]
    fn softmax_uniform_and_closed_form() {
        let tape = Tape::inference();
        let x = Tensor::new(vec![2.5, 2.5, 2.5, 2.5], &[1, 4]).unwrap();
        for v in tape.softmax_rows(&x).unwrap().to_vec() {
            approx(v, 0.25, 1e-12);
        }
        // softmax([0, ln 3]) = [1/4, 3/4]
        let x = Tensor::new(vec![0.0, 3.0f64.ln()], &[1, 2]).unwrap();
        let y = tape.softmax_rows(&x).unwrap().to_vec();
        approx(y[0], 0.25, 1e-12);
        approx(y[1], 0.75, 1e-12);
    }

    #[test]
    fn softmax_large_magnitude_is_finite() {
        let tape = Tape::inference();
        let x = Tensor::new(vec![1e4, 0.0, -1e4], &[1, 3]).unwrap();
        let y = tape.softmax_rows(&x).unwrap();
        assert!(y.is_finite());
        approx(y.to_vec().iter().sum::<f64>(), 1.0, 1e-9);
    }

    #[test]
    fn activations_at_known_points() {
        let tape = Tape::inference();
        let x = Tensor::new(vec![0.0, -2.0, 2.0], &[3]).unwrap();
        assert_eq!(tape.sigmoid(&x).unwrap().to_vec()[0], 0.5);
        assert_eq!(tape.tanh(&x).unwrap().to_vec()[0], 0.0);
        assert_eq!(tape.relu(&x).unwrap().to_vec(), vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn concat_single_is_identity_and_counts_add() {
        let tape = Tape::inference();
        let a = Tensor::full(&[1, 2, 2, 2], 1.0);
        let b = Tensor::full(&[1, 3, 2, 2], 2.0);
        let only = tape.concat_channels(&[&a]).unwrap();
        assert_eq!(only.to_vec(), a.to_vec());
        let both = tape.concat_channels(&[&a, &b]).unwrap();
        assert_eq!(both.shape(), &[1, 5, 2, 2]);
    }

    #[test]
    fn hadamard_identity_and_annihilation() {
        let tape = Tape::inference();
        let a = Tensor::new(vec![1.5, -2.0, 0.25, 4.0], &[2, 2]).unwrap();
        let ones = Tensor::full(&[2, 2], 1.0);
        let zeros = Tensor::zeros(&[2, 2]);
        assert_eq!(tape.hadamard(&a, &ones).unwrap().to_vec(), a.to_vec());
        assert_eq!(tape.hadamard(&a, &zeros).unwrap().to_vec(), vec![0.0; 4]);
    }

    #[test]
    fn batch_select_stack_roundtrip() {
        let tape = Tape::inference();
        let x = Tensor::new((0..24).map(f64::from).collect(), &[2, 3, 2, 2]).unwrap();
        let s0 = tape.batch_select(&x, 0).unwrap();
        let s1 = tape.batch_select(&x, 1).unwrap();
        let back = tape.batch_stack(&[&s0, &s1]).unwrap();
        assert_eq!(back.to_vec(), x.to_vec());
    }
}
