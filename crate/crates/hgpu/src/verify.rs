//! Gradient verification over every layer type plus an end-to-end toy model,
//! used by the `gradcheck` command and the acceptance suite.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decoder::{macu, Aspp, MacuParams};
use crate::encoder::{aggregate_message, edge_affinity, ConvGru, EdgeWeights};
use crate::model::{HgpuModel, ModelConfig};
use crate::nn::{BatchNorm2d, Phase};
use crate::tensor::{
    finite_diff_check, FdOptions, GradCheckReport, Result as TensorResult, Tensor,
};

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Coordinates sampled for the end-to-end model check.
    pub e2e_coords: usize,
    /// Test hook: perturb the named op's backward so its check fails.
    pub corrupt_op: Option<String>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 0,
            e2e_coords: 200,
            corrupt_op: None,
        }
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), shape).unwrap()
}

fn rand_param(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::param((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), shape).unwrap()
}

fn fd_options(opts: &VerifyOptions, coords: usize) -> FdOptions {
    FdOptions {
        step: 1e-5,
        tol: 1e-4,
        total_coords: coords,
        seed: opts.seed,
        corrupt_op: opts.corrupt_op.clone(),
    }
}

/// Run finite-difference checks for conv, batch norm, the ConvGRU update,
/// affinity + message aggregation, the channel-gating transform, ASPP, the
/// loss, and the full model on one 32x32 pair.
pub fn run_gradcheck(opts: &VerifyOptions) -> TensorResult<GradCheckReport> {
    let mut report = GradCheckReport::default();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(0xC0FFEE));

    // conv2d
    {
        let x = rand_param(&mut rng, &[2, 3, 8, 8]);
        let w = rand_param(&mut rng, &[4, 3, 3, 3]);
        let b = rand_param(&mut rng, &[4]);
        let proj = rand_tensor(&mut rng, &[2, 4, 8, 8]);
        report.items.push(finite_diff_check(
            "conv2d",
            &[("x", &x), ("w", &w), ("b", &b)],
            |tape| {
                let y = tape.conv2d(&x, &w, Some(&b), 1, 1, 1)?;
                tape.sum_all(&tape.hadamard(&y, &proj)?)
            },
            &fd_options(opts, 128),
        )?);
    }

    // batch norm (train mode)
    {
        let x = rand_param(&mut rng, &[3, 4, 5, 5]);
        let bn = BatchNorm2d::new(4);
        let proj = rand_tensor(&mut rng, &[3, 4, 5, 5]);
        report.items.push(finite_diff_check(
            "batch_norm",
            &[("x", &x), ("gamma", &bn.gamma), ("beta", &bn.beta)],
            |tape| {
                let y = bn.forward(tape, &x, Phase::Train)?;
                tape.sum_all(&tape.hadamard(&y, &proj)?)
            },
            &fd_options(opts, 128),
        )?);
    }

    // ConvGRU
    {
        let gru = ConvGru::new(&mut rng, 3);
        let h = rand_param(&mut rng, &[1, 3, 6, 6]);
        let m = rand_param(&mut rng, &[1, 3, 6, 6]);
        let proj = rand_tensor(&mut rng, &[1, 3, 6, 6]);
        let params: Vec<(&str, &Tensor)> = vec![
            ("h", &h),
            ("m", &m),
            ("w_z", &gru.conv_z.weight),
            ("w_r", &gru.conv_r.weight),
            ("w_c", &gru.conv_c.weight),
        ];
        report.items.push(finite_diff_check(
            "conv_gru",
            &params,
            |tape| {
                let u = gru.forward(tape, &h, &m)?;
                tape.sum_all(&tape.hadamard(&u, &proj)?)
            },
            &fd_options(opts, 128),
        )?);
    }

    // affinity + softmax message aggregation
    {
        let weights = EdgeWeights::new(&mut rng, 6, 4);
        let ht = rand_param(&mut rng, &[9, 6]);
        let hu = rand_param(&mut rng, &[9, 6]);
        let proj = rand_tensor(&mut rng, &[9, 6]);
        report.items.push(finite_diff_check(
            "affinity_message",
            &[("h_t", &ht), ("h_u", &hu), ("factor", &weights.factor)],
            |tape| {
                let (e_tu, e_ut) = edge_affinity(tape, &ht, &hu, &weights)?;
                let m_t = aggregate_message(tape, &hu, &e_tu)?;
                let m_u = aggregate_message(tape, &ht, &e_ut)?;
                let a = tape.sum_all(&tape.hadamard(&m_t, &proj)?)?;
                let b = tape.sum_all(&tape.hadamard(&m_u, &proj)?)?;
                tape.add(&a, &b)
            },
            &fd_options(opts, 128),
        )?);
    }

    // channel-gating transform
    {
        let q = rand_param(&mut rng, &[2, 4, 5, 5]);
        let p = MacuParams::new(4);
        // Move off the identity initialization so every branch is live.
        p.w_a.set_data(&(0..4).map(|i| 0.8 + 0.1 * i as f64).collect::<Vec<_>>());
        p.w_b.set_data(&(0..4).map(|i| 0.3 - 0.15 * i as f64).collect::<Vec<_>>());
        p.w_c.set_data(&(0..4).map(|i| -0.2 + 0.1 * i as f64).collect::<Vec<_>>());
        let proj = rand_tensor(&mut rng, &[2, 4, 5, 5]);
        report.items.push(finite_diff_check(
            "macu",
            &[("q", &q), ("w_a", &p.w_a), ("w_b", &p.w_b), ("w_c", &p.w_c)],
            |tape| {
                let y = macu(tape, &q, &p)?;
                tape.sum_all(&tape.hadamard(&y, &proj)?)
            },
            &fd_options(opts, 128),
        )?);
    }

    // ASPP head
    {
        let aspp = Aspp::new(&mut rng, 5, 8);
        let x = rand_param(&mut rng, &[1, 5, 8, 8]);
        let proj = rand_tensor(&mut rng, &[1, 1, 8, 8]);
        report.items.push(finite_diff_check(
            "aspp",
            &[("x", &x)],
            |tape| {
                let y = aspp.forward(tape, &x)?;
                tape.sum_all(&tape.hadamard(&y, &proj)?)
            },
            &fd_options(opts, 96),
        )?);
    }

    // class-balanced BCE loss
    {
        let logits = rand_param(&mut rng, &[2, 1, 6, 6]);
        let target = Tensor::new(
            (0..72).map(|_| f64::from(rng.gen_bool(0.3))).collect(),
            &[2, 1, 6, 6],
        )
        .unwrap();
        report.items.push(finite_diff_check(
            "weighted_bce",
            &[("logits", &logits)],
            |tape| {
                let p = tape.sigmoid(&logits)?;
                tape.weighted_bce(&p, &target)
            },
            &fd_options(opts, 72),
        )?);
    }

    // end-to-end toy model: one pair at 32x32
    {
        let model = HgpuModel::new(
            ModelConfig {
                base_width: 8,
                ..ModelConfig::default()
            },
            opts.seed.wrapping_add(7),
        )?;
        let image = |rng: &mut ChaCha8Rng| {
            Tensor::new(
                (0..3 * 32 * 32).map(|_| rng.gen_range(0.0..1.0)).collect(),
                &[1, 3, 32, 32],
            )
            .unwrap()
        };
        let inputs = [image(&mut rng), image(&mut rng), image(&mut rng)];
        let target = Tensor::new(
            (0..32 * 32)
                .map(|i| f64::from((i / 32 > 8 && i / 32 < 20) && (i % 32 > 10 && i % 32 < 24)))
                .collect(),
            &[1, 1, 32, 32],
        )
        .unwrap();
        let set = model.params();
        let params: Vec<(&str, &Tensor)> = set
            .params
            .iter()
            .map(|p| (p.name.as_str(), &p.tensor))
            .collect();
        report.items.push(finite_diff_check(
            "end_to_end",
            &params,
            |tape| {
                let out = model.forward(tape, &inputs, Phase::Train)?;
                let l0 = tape.weighted_bce(&out.refined[0], &target)?;
                let l1 = tape.weighted_bce(&out.refined[1], &target)?;
                tape.add(&l0, &l1)
            },
            &fd_options(opts, opts.e2e_coords),
        )?);
    }

    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_build_passes_all_checks() {
        let report = run_gradcheck(&VerifyOptions {
            e2e_coords: 24,
            ..VerifyOptions::default()
        })
        .unwrap();
        assert!(report.passed(), "\n{}", report.render());
        assert_eq!(report.items.len(), 8);
    }

    #[test]
    fn corrupted_op_is_reported_by_name() {
        let report = run_gradcheck(&VerifyOptions {
            e2e_coords: 8,
            corrupt_op: Some("conv2d".into()),
            ..VerifyOptions::default()
        })
        .unwrap();
        assert!(!report.passed());
        let conv = report.items.iter().find(|i| i.op == "conv2d").unwrap();
        assert!(!conv.passed());
        assert!(report.render().contains("FAIL conv2d"));
    }

    #[test]
    fn report_bytes_are_deterministic() {
        let run = || {
            run_gradcheck(&VerifyOptions {
                e2e_coords: 12,
                seed: 3,
                ..VerifyOptions::default()
            })
            .unwrap()
            .render()
        };
        assert_eq!(run(), run());
    }
}
