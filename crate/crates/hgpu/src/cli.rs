//! Command implementations behind the `hgpu` binary: data generation,
//! training, inference, evaluation, and gradient verification.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::metrics::{self, AggregateReport, FrameScore};
use crate::model::HgpuModel;
use crate::synthdata::{self, LoadedSequence};
use crate::train::{self, TrainOutcome};
use crate::verify::{run_gradcheck, VerifyOptions};

/// Validation sequences draw seeds from a disjoint range above this offset.
pub const VAL_SEED_OFFSET: u64 = 1_000_000;

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration: exit code 2.
    Usage(String),
    /// Anything that fails at run time (including a failed verification or
    /// evaluation): exit code 1.
    Run(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Run(m) => write!(f, "{m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

fn run_err(e: impl std::fmt::Display) -> CliError {
    CliError::Run(e.to_string())
}

/// Read HGPU_THREADS and size the global worker pool; safe to call more than
/// once (later calls are ignored).
pub fn init_thread_pool() {
    let threads = std::env::var("HGPU_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path)
        .map_err(|e| CliError::Run(format!("cannot create {}: {e}", path.display())))
}

fn write_resolved_config(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    fs::write(dir.join("config.txt"), cfg.to_text())
        .map_err(|e| CliError::Run(format!("cannot write resolved config: {e}")))
}

/// Generate the train and validation splits under `data_root`.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<(), CliError> {
    let template = cfg.scene_template();
    template.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let train_dir = cfg.data_root.join("train");
    let val_dir = cfg.data_root.join("val");
    synthdata::generate_split(&train_dir, cfg.train_sequences, cfg.seed, &template)
        .map_err(run_err)?;
    synthdata::generate_split(
        &val_dir,
        cfg.val_sequences,
        cfg.seed + VAL_SEED_OFFSET,
        &template,
    )
    .map_err(run_err)?;
    ensure_dir(&cfg.data_root)?;
    write_resolved_config(cfg, &cfg.data_root)?;
    println!(
        "wrote {} train and {} val sequences under {}",
        cfg.train_sequences,
        cfg.val_sequences,
        cfg.data_root.display()
    );
    Ok(())
}

fn load_split_checked(dir: &Path) -> Result<Vec<LoadedSequence>, CliError> {
    if !dir.join("manifest.txt").is_file() {
        return Err(CliError::Usage(format!(
            "{} is not a dataset split (no manifest.txt)",
            dir.display()
        )));
    }
    synthdata::load_split(dir).map_err(run_err)
}

/// Train a model; writes the resolved config, per-epoch loss curve, and the
/// checkpoint with the best validation J under `out_dir`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome, CliError> {
    let train_data = load_split_checked(&cfg.data_root.join("train"))?;
    let val_data = load_split_checked(&cfg.data_root.join("val"))?;
    ensure_dir(&cfg.out_dir)?;
    write_resolved_config(cfg, &cfg.out_dir)?;

    let model = HgpuModel::new(cfg.model_config(), cfg.seed).map_err(run_err)?;
    let start = Instant::now();
    let mut curve = String::from("epoch,train_loss,val_j_mean,val_f_mean\n");
    let outcome = train::train_loop(
        &model,
        &train_data,
        &val_data,
        &cfg.train_config(),
        cfg.zero_flow,
        Some(&cfg.out_dir.join("best.ckpt")),
        |s| {
            println!(
                "epoch {:>3}  train_loss {:.6}  val_J {:.4}  val_F {:.4}",
                s.epoch, s.train_loss, s.val_j_mean, s.val_f_mean
            );
            curve.push_str(&format!(
                "{},{:.9},{:.6},{:.6}\n",
                s.epoch, s.train_loss, s.val_j_mean, s.val_f_mean
            ));
        },
    )
    .map_err(run_err)?;
    fs::write(cfg.out_dir.join("loss_curve.csv"), curve).map_err(run_err)?;
    println!(
        "best val J {:.4} at epoch {} ({:.1}s total)",
        outcome.best_val_j,
        outcome.best_epoch,
        start.elapsed().as_secs_f64()
    );
    Ok(outcome)
}

fn count_frames(dir: &Path) -> Result<usize, CliError> {
    let mut frames = 0;
    let entries = fs::read_dir(dir)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", dir.display())))?;
    for entry in entries.flatten() {
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if name.starts_with("frame_") && name.ends_with(".ppm") {
            frames += 1;
        }
    }
    if frames < 2 {
        return Err(CliError::Usage(format!(
            "{} holds fewer than 2 frames",
            dir.display()
        )));
    }
    Ok(frames)
}

/// Segment sequences with a trained checkpoint. `data` may be a split
/// directory (with manifest.txt) or a single sequence directory; predictions
/// land in `out/<seq_id>/` as binary masks plus probability maps.
pub fn cmd_infer(
    cfg: &RunConfig,
    checkpoint_path: &Path,
    data: &Path,
    out: &Path,
) -> Result<(), CliError> {
    if !checkpoint_path.is_file() {
        return Err(CliError::Usage(format!(
            "checkpoint {} does not exist",
            checkpoint_path.display()
        )));
    }
    let model = HgpuModel::new(cfg.model_config(), cfg.seed).map_err(run_err)?;
    let params = model.params();
    checkpoint::load_into(checkpoint_path, &params.named_tensors()).map_err(run_err)?;

    let sequences = if data.join("manifest.txt").is_file() {
        synthdata::load_split(data).map_err(run_err)?
    } else {
        let frames = count_frames(data)?;
        let id = data
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "sequence".to_string());
        vec![synthdata::load_sequence(data, &id, frames).map_err(run_err)?]
    };

    for seq in &sequences {
        let maps = train::predict_sequence(&model, seq, cfg.zero_flow).map_err(run_err)?;
        let dir = out.join(&seq.id);
        ensure_dir(&dir)?;
        for (k, map) in maps.iter().enumerate() {
            let mask = metrics::binarize(map, 0.5);
            let mask_bytes: Vec<u8> = mask.iter().map(|&m| if m != 0 { 255 } else { 0 }).collect();
            let prob_bytes: Vec<u8> = map
                .iter()
                .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8)
                .collect();
            fs::write(
                dir.join(format!("mask_{k:04}.pgm")),
                synthdata::netpbm::write_pgm(seq.width, seq.height, &mask_bytes),
            )
            .map_err(run_err)?;
            fs::write(
                dir.join(format!("prob_{k:04}.pgm")),
                synthdata::netpbm::write_pgm(seq.width, seq.height, &prob_bytes),
            )
            .map_err(run_err)?;
        }
    }
    println!("segmented {} sequence(s) into {}", sequences.len(), out.display());
    Ok(())
}

/// Score predicted masks against ground truth; writes per_frame.csv and
/// summary.json under `out`.
pub fn cmd_eval(pred: &Path, gt: &Path, out: &Path) -> Result<AggregateReport, CliError> {
    let gt_rows = synthdata::read_manifest(gt)
        .map_err(|e| CliError::Usage(format!("ground-truth dir: {e}")))?;
    let mut scores: Vec<FrameScore> = Vec::new();
    for (id, frames, _) in &gt_rows {
        let gt_seq = synthdata::load_sequence(&gt.join(id), id, *frames).map_err(run_err)?;
        let tol = metrics::default_boundary_tolerance(gt_seq.width, gt_seq.height);
        for k in 0..*frames {
            let path = pred.join(id).join(format!("mask_{k:04}.pgm"));
            let bytes = fs::read(&path)
                .map_err(|e| CliError::Run(format!("missing prediction {}: {e}", path.display())))?;
            let (w, h, gray) = synthdata::netpbm::read_pgm(&bytes).map_err(run_err)?;
            if (w, h) != (gt_seq.width, gt_seq.height) {
                return Err(CliError::Run(format!(
                    "prediction {} is {w}x{h}, ground truth is {}x{}",
                    path.display(),
                    gt_seq.width,
                    gt_seq.height
                )));
            }
            let pred_mask: Vec<u8> = gray.iter().map(|&g| u8::from(g >= 128)).collect();
            scores.push(FrameScore {
                sequence: id.clone(),
                frame: k,
                j: metrics::region_j(&pred_mask, &gt_seq.masks[k]),
                f: metrics::boundary_f(&pred_mask, &gt_seq.masks[k], w, h, tol),
            });
        }
    }
    let report = metrics::aggregate(&scores);
    ensure_dir(out)?;
    fs::write(out.join("per_frame.csv"), metrics::scores_to_csv(&scores)).map_err(run_err)?;
    fs::write(out.join("summary.json"), metrics::report_to_json(&report)).map_err(run_err)?;
    println!(
        "J mean {:.4} recall {:.4} decay {:.4} | F mean {:.4} recall {:.4} decay {:.4} | J&F {:.4}",
        report.j.mean,
        report.j.recall,
        report.j.decay,
        report.f.mean,
        report.f.recall,
        report.f.decay,
        report.jf_mean
    );
    Ok(report)
}

/// Run the gradient verification suite; returns Err(Run) when any check
/// fails so the binary exits 1.
pub fn cmd_gradcheck(
    seed: u64,
    corrupt: Option<String>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let opts = VerifyOptions {
        seed,
        e2e_coords: 200,
        corrupt_op: corrupt,
    };
    let start = Instant::now();
    let report = run_gradcheck(&opts).map_err(run_err)?;
    let mut text = report.render();
    text.push_str(&format!(
        "{} in {:.1}s\n",
        if report.passed() { "ALL CHECKS PASSED" } else { "CHECKS FAILED" },
        start.elapsed().as_secs_f64()
    ));
    print!("{text}");
    if let Some(dir) = out {
        ensure_dir(dir)?;
        // The report file excludes the timing line so its bytes are
        // reproducible for a fixed seed.
        fs::write(dir.join("gradcheck.txt"), report.render()).map_err(run_err)?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Run("gradient verification failed".into()))
    }
}

/// Shared --seed / --out overrides for config-driven commands.
pub fn apply_overrides(cfg: &mut RunConfig, seed: Option<u64>, out: Option<PathBuf>) {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out_dir = o;
    }
}
