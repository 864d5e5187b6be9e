//! Central-difference verification of analytic gradients.
//!
//! The numeric side only ever calls the loss closure with a non-recording
//! tape, so it is independent of the backward implementation it checks.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Result, Tape, Tensor};

#[derive(Debug, Clone)]
pub struct FdOptions {
    /// Central-difference step.
    pub step: f64,
    /// Maximum acceptable relative error.
    pub tol: f64,
    /// Total number of coordinates to sample across all parameters.
    /// Checks every coordinate when the budget covers them all.
    pub total_coords: usize,
    pub seed: u64,
    /// Test hook: name of a tape op whose backward is perturbed, so the
    /// check must fail (negative control for the reporting path).
    pub corrupt_op: Option<String>,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            step: 1e-5,
            tol: 1e-4,
            total_coords: 256,
            seed: 0,
            corrupt_op: None,
        }
    }
}

/// Per-parameter outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub op: String,
    pub per_param: Vec<(String, f64, usize)>,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

/// Collected reports for a verification run.
#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub items: Vec<GradReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.items.iter().all(|r| r.passed())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for item in &self.items {
            out.push_str(&format!(
                "{} {:<22} max_rel_err {:.3e} (tol {:.1e}, {} coords)\n",
                if item.passed() { "PASS" } else { "FAIL" },
                item.op,
                item.max_rel_err,
                item.tol,
                item.per_param.iter().map(|p| p.2).sum::<usize>(),
            ));
        }
        out
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Compare analytic gradients of `loss_fn` against central differences at
/// sampled coordinates of `params`. `loss_fn` must be a pure function of the
/// current parameter values (data-dependent state such as batch-norm running
/// statistics may drift; the loss must not read it).
pub fn finite_diff_check(
    op: &str,
    params: &[(&str, &Tensor)],
    loss_fn: impl Fn(&Tape) -> Result<Tensor>,
    opts: &FdOptions,
) -> Result<GradReport> {
    for (_, p) in params {
        p.zero_grad();
    }
    let tape = match &opts.corrupt_op {
        Some(name) => Tape::with_corrupted_op(name),
        None => Tape::new(),
    };
    let loss = loss_fn(&tape)?;
    tape.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|(_, p)| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    // Sample coordinates over the concatenated parameter space.
    let total: usize = params.iter().map(|(_, p)| p.numel()).sum();
    let mut all: Vec<(usize, usize)> = Vec::with_capacity(total);
    for (pi, (_, p)) in params.iter().enumerate() {
        for ei in 0..p.numel() {
            all.push((pi, ei));
        }
    }
    let coords: Vec<(usize, usize)> = if opts.total_coords >= total {
        all
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        all.shuffle(&mut rng);
        all.truncate(opts.total_coords);
        all
    };

    let mut per_param: Vec<(String, f64, usize)> = params
        .iter()
        .map(|(name, _)| (name.to_string(), 0.0, 0))
        .collect();
    for (pi, ei) in coords {
        let p = params[pi].1;
        let orig = p.data()[ei];
        let eval = |v: f64| -> Result<f64> {
            {
                let mut d = p.inner.data.borrow_mut();
                d[ei] = v;
            }
            let t = Tape::inference();
            let l = loss_fn(&t)?;
            Ok(l.item())
        };
        let plus = eval(orig + opts.step)?;
        let minus = eval(orig - opts.step)?;
        {
            let mut d = p.inner.data.borrow_mut();
            d[ei] = orig;
        }
        let numeric = (plus - minus) / (2.0 * opts.step);
        let err = rel_err(analytic[pi][ei], numeric);
        let slot = &mut per_param[pi];
        slot.1 = slot.1.max(err);
        slot.2 += 1;
    }
    let max_rel_err = per_param.iter().map(|p| p.1).fold(0.0, f64::max);
    Ok(GradReport {
        op: op.to_string(),
        per_param,
        max_rel_err,
        tol: opts.tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::param(data, shape).unwrap()
    }

    #[test]
    fn matmul_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = rand_tensor(&mut rng, &[4, 5]);
        let b = rand_tensor(&mut rng, &[5, 3]);
        let w = Tensor::new((0..12).map(|i| ((i * 13 % 7) as f64) - 3.0).collect(), &[4, 3]).unwrap();
        let report = finite_diff_check(
            "matmul",
            &[("a", &a), ("b", &b)],
            |tape| {
                let y = tape.matmul(&a, &b)?;
                let yw = tape.hadamard(&y, &w)?;
                tape.sum_all(&yw)
            },
            &FdOptions::default(),
        )
        .unwrap();
        assert!(report.passed(), "{}", report.max_rel_err);
    }

    #[test]
    fn conv2d_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rand_tensor(&mut rng, &[2, 3, 8, 8]);
        let w = rand_tensor(&mut rng, &[4, 3, 3, 3]);
        let b = rand_tensor(&mut rng, &[4]);
        let proj = {
            let n = 2 * 4 * 8 * 8;
            let data: Vec<f64> = (0..n).map(|i| ((i * 31 % 11) as f64) / 11.0 - 0.5).collect();
            Tensor::new(data, &[2, 4, 8, 8]).unwrap()
        };
        let report = finite_diff_check(
            "conv2d",
            &[("x", &x), ("w", &w), ("b", &b)],
            |tape| {
                let y = tape.conv2d(&x, &w, Some(&b), 1, 1, 1)?;
                let yw = tape.hadamard(&y, &proj)?;
                tape.sum_all(&yw)
            },
            &FdOptions {
                total_coords: 160,
                ..FdOptions::default()
            },
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn softmax_hadamard_bilinear_gap_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = rand_tensor(&mut rng, &[1, 2, 4, 4]);
        let m = rand_tensor(&mut rng, &[6, 5]);
        let report = finite_diff_check(
            "mixed",
            &[("x", &x), ("m", &m)],
            |tape| {
                let up = tape.upsample_bilinear(&x, 7, 7)?;
                let pooled = tape.global_avg_pool(&up)?;
                let sm = tape.softmax_rows(&m)?;
                let a = tape.sum_all(&pooled)?;
                let b = tape.sum_all(&tape.hadamard(&sm, &sm)?)?;
                tape.add(&a, &b)
            },
            &FdOptions::default(),
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn gap_gradient_is_inverse_area() {
        let x = Tensor::param(vec![0.3; 16], &[1, 1, 4, 4]).unwrap();
        let tape = Tape::new();
        let y = tape.global_avg_pool(&x).unwrap();
        let s = tape.sum_all(&y).unwrap();
        tape.backward(&s).unwrap();
        for g in x.grad().unwrap() {
            assert!((g - 1.0 / 16.0).abs() < 1e-15);
        }
    }

    #[test]
    fn batch_norm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = rand_tensor(&mut rng, &[2, 3, 4, 4]);
        let gamma = rand_tensor(&mut rng, &[3]);
        let beta = rand_tensor(&mut rng, &[3]);
        let state = super::super::BatchNormState::new(3);
        let proj = Tensor::new(
            (0..96).map(|i| ((i * 29 % 13) as f64) / 13.0 - 0.4).collect(),
            &[2, 3, 4, 4],
        )
        .unwrap();
        let report = finite_diff_check(
            "batch_norm",
            &[("x", &x), ("gamma", &gamma), ("beta", &beta)],
            |tape| {
                let y = tape.batch_norm(&x, &gamma, &beta, &state, true, 1e-5, 0.1)?;
                let yw = tape.hadamard(&y, &proj)?;
                tape.sum_all(&yw)
            },
            &FdOptions::default(),
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn concat_backward_splits_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let a = rand_tensor(&mut rng, &[1, 2, 3, 3]);
        let b = rand_tensor(&mut rng, &[1, 3, 3, 3]);
        let proj = rand_tensor(&mut rng, &[1, 5, 3, 3]);
        proj.inner.requires_grad.set(false);
        let report = finite_diff_check(
            "concat_channels",
            &[("a", &a), ("b", &b)],
            |tape| {
                let y = tape.concat_channels(&[&a, &b])?;
                let yw = tape.hadamard(&y, &proj)?;
                tape.sum_all(&yw)
            },
            &FdOptions::default(),
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn norm_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = rand_tensor(&mut rng, &[2, 4, 3, 3]);
        let proj = Tensor::new(
            (0..8).map(|i| ((i * 7 % 5) as f64) - 2.0).collect(),
            &[2, 4, 1, 1],
        )
        .unwrap();
        let report = finite_diff_check(
            "spatial_l2+channel_norm",
            &[("x", &x)],
            |tape| {
                let s = tape.spatial_l2_norm(&x, 1e-5)?;
                let n = tape.channel_normalize(&s, 1e-5)?;
                let nw = tape.hadamard(&n, &proj)?;
                tape.sum_all(&nw)
            },
            &FdOptions::default(),
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn corrupted_op_fails_the_check() {
        let a = Tensor::param(vec![0.4, -0.2, 0.9, 0.1], &[2, 2]).unwrap();
        let b = Tensor::param(vec![0.3, 0.8, -0.5, 0.6], &[2, 2]).unwrap();
        let report = finite_diff_check(
            "matmul",
            &[("a", &a), ("b", &b)],
            |tape| {
                let y = tape.matmul(&a, &b)?;
                tape.sum_all(&y)
            },
            &FdOptions {
                corrupt_op: Some("matmul".into()),
                ..FdOptions::default()
            },
        )
        .unwrap();
        assert!(!report.passed());
    }
}
