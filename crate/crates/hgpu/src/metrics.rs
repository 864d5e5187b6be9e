//! Segmentation evaluation: region similarity J (intersection over union),
//! boundary accuracy F (boundary F-measure under a pixel tolerance), and
//! Mean / Recall / Decay aggregation over sequences.

use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct FrameScore {
    pub sequence: String,
    pub frame: usize,
    pub j: f64,
    pub f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricStats {
    pub mean: f64,
    /// Fraction of scored frames above 0.5.
    pub recall: f64,
    /// Mean of the first temporal quartile minus mean of the last, averaged
    /// over sequences.
    pub decay: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct AggregateReport {
    pub j: MetricStats,
    pub f: MetricStats,
    pub jf_mean: f64,
    pub frames_scored: usize,
}

/// Threshold a probability map at 0.5 (values >= threshold are foreground).
pub fn binarize(probs: &[f64], threshold: f64) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p >= threshold)).collect()
}

/// |pred ∩ gt| / |pred ∪ gt|; two empty masks score 1 by convention.
pub fn region_j(pred: &[u8], gt: &[u8]) -> f64 {
    assert_eq!(pred.len(), gt.len(), "mask sizes differ");
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&p, &g) in pred.iter().zip(gt) {
        let p = p != 0;
        let g = g != 0;
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Default matching tolerance: 0.75% of the image diagonal, rounded up.
pub fn default_boundary_tolerance(width: usize, height: usize) -> usize {
    let diag = ((width * width + height * height) as f64).sqrt();
    (0.0075 * diag).ceil() as usize
}

/// 1-pixel boundary set: foreground pixels with a background 4-neighbor, or
/// foreground pixels on the image edge.
pub fn boundary_pixels(mask: &[u8], width: usize, height: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..height {
        for x in 0..width {
            if mask[y * width + x] == 0 {
                continue;
            }
            let on_edge = x == 0 || y == 0 || x == width - 1 || y == height - 1;
            let bg_neighbor = (x > 0 && mask[y * width + x - 1] == 0)
                || (x + 1 < width && mask[y * width + x + 1] == 0)
                || (y > 0 && mask[(y - 1) * width + x] == 0)
                || (y + 1 < height && mask[(y + 1) * width + x] == 0);
            if on_edge || bg_neighbor {
                out.push((x, y));
            }
        }
    }
    out
}

fn matched_within(a: &[(usize, usize)], b: &[(usize, usize)], tol: usize) -> usize {
    let tol2 = (tol * tol) as i64;
    a.iter()
        .filter(|&&(ax, ay)| {
            b.iter().any(|&(bx, by)| {
                let dx = ax as i64 - bx as i64;
                let dy = ay as i64 - by as i64;
                dx * dx + dy * dy <= tol2
            })
        })
        .count()
}

/// Boundary F-measure: precision/recall of boundary pixels matched within a
/// disk of radius `tolerance_px` (equivalent to matching against the other
/// boundary dilated by that disk).
pub fn boundary_f(pred: &[u8], gt: &[u8], width: usize, height: usize, tolerance_px: usize) -> f64 {
    assert_eq!(pred.len(), width * height);
    assert_eq!(gt.len(), width * height);
    let pb = boundary_pixels(pred, width, height);
    let gb = boundary_pixels(gt, width, height);
    match (pb.is_empty(), gb.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let precision = matched_within(&pb, &gb, tolerance_px) as f64 / pb.len() as f64;
    let recall = matched_within(&gb, &pb, tolerance_px) as f64 / gb.len() as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Contiguous temporal quartiles in the array_split convention: the first
/// (n mod 4) bins get one extra element.
fn quartiles(values: &[f64]) -> [Vec<f64>; 4] {
    let n = values.len();
    let base = n / 4;
    let rem = n % 4;
    let mut out: [Vec<f64>; 4] = Default::default();
    let mut idx = 0;
    for (q, slot) in out.iter_mut().enumerate() {
        let len = base + usize::from(q < rem);
        slot.extend_from_slice(&values[idx..idx + len]);
        idx += len;
    }
    out
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Aggregate frame scores: the first and last frame of every sequence are
/// excluded from scoring; Decay needs at least 4 scored frames per sequence.
pub fn aggregate(scores: &[FrameScore]) -> AggregateReport {
    let mut by_seq: BTreeMap<&str, Vec<&FrameScore>> = BTreeMap::new();
    for s in scores {
        by_seq.entry(s.sequence.as_str()).or_default().push(s);
    }
    let mut all_j = Vec::new();
    let mut all_f = Vec::new();
    let mut decay_j = Vec::new();
    let mut decay_f = Vec::new();
    for frames in by_seq.values_mut() {
        frames.sort_by_key(|s| s.frame);
        if frames.len() <= 2 {
            continue;
        }
        let scored = &frames[1..frames.len() - 1];
        let js: Vec<f64> = scored.iter().map(|s| s.j).collect();
        let fs: Vec<f64> = scored.iter().map(|s| s.f).collect();
        all_j.extend_from_slice(&js);
        all_f.extend_from_slice(&fs);
        if js.len() >= 4 {
            let qj = quartiles(&js);
            let qf = quartiles(&fs);
            decay_j.push(mean(&qj[0]) - mean(&qj[3]));
            decay_f.push(mean(&qf[0]) - mean(&qf[3]));
        }
    }
    let stats = |vals: &[f64], decays: &[f64]| MetricStats {
        mean: mean(vals),
        recall: if vals.is_empty() {
            0.0
        } else {
            vals.iter().filter(|&&v| v > 0.5).count() as f64 / vals.len() as f64
        },
        decay: mean(decays),
    };
    let j = stats(&all_j, &decay_j);
    let f = stats(&all_f, &decay_f);
    AggregateReport {
        j,
        f,
        jf_mean: (j.mean + f.mean) / 2.0,
        frames_scored: all_j.len(),
    }
}

pub fn scores_to_csv(scores: &[FrameScore]) -> String {
    let mut out = String::from("sequence,frame,J,F\n");
    for s in scores {
        out.push_str(&format!("{},{},{:.6},{:.6}\n", s.sequence, s.frame, s.j, s.f));
    }
    out
}

pub fn report_to_json(report: &AggregateReport) -> String {
    let value = serde_json::json!({
        "J": {"mean": report.j.mean, "recall": report.j.recall, "decay": report.j.decay},
        "F": {"mean": report.f.mean, "recall": report.f.recall, "decay": report.f.decay},
        "JF_mean": report.jf_mean,
    });
    serde_json::to_string_pretty(&value).expect("json encoding")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rect_mask(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Vec<u8> {
        let mut m = vec![0u8; w * h];
        for y in y0..y1 {
            for x in x0..x1 {
                m[y * w + x] = 1;
            }
        }
        m
    }

    #[test]
    fn region_j_basics() {
        let full = rect_mask(8, 8, 0, 0, 8, 8);
        let left = rect_mask(8, 8, 0, 0, 4, 8);
        assert_eq!(region_j(&full, &full), 1.0);
        assert_eq!(region_j(&left, &full), 0.5);
        assert_eq!(region_j(&[0, 0], &[0, 0]), 1.0);
    }

    #[test]
    fn region_j_matches_pixel_count_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        for _ in 0..50 {
            let a: Vec<u8> = (0..64).map(|_| rng.gen_range(0..2)).collect();
            let b: Vec<u8> = (0..64).map(|_| rng.gen_range(0..2)).collect();
            let mut inter = 0.0;
            let mut union = 0.0;
            for i in 0..64 {
                if a[i] == 1 && b[i] == 1 {
                    inter += 1.0;
                }
                if a[i] == 1 || b[i] == 1 {
                    union += 1.0;
                }
            }
            let want = if union == 0.0 { 1.0 } else { inter / union };
            assert_eq!(region_j(&a, &b), want);
            assert_eq!(region_j(&a, &b), region_j(&b, &a));
        }
    }

    #[test]
    fn boundary_f_identical_and_empty_cases() {
        let m = rect_mask(8, 8, 2, 2, 6, 6);
        assert_eq!(boundary_f(&m, &m, 8, 8, 0), 1.0);
        let empty = vec![0u8; 64];
        assert_eq!(boundary_f(&empty, &m, 8, 8, 2), 0.0);
        assert_eq!(boundary_f(&m, &empty, 8, 8, 2), 0.0);
        assert_eq!(boundary_f(&empty, &empty, 8, 8, 2), 1.0);
    }

    #[test]
    fn shift_by_exactly_tolerance_still_matches() {
        // Full-width bands shifted vertically by 2 px: every boundary pixel
        // of one mask is exactly 2 px from the other's, so F = 1 at tol 2.
        let a = rect_mask(12, 12, 0, 2, 12, 5);
        let b = rect_mask(12, 12, 0, 4, 12, 7);
        assert_eq!(boundary_f(&a, &b, 12, 12, 2), 1.0);
        assert!(boundary_f(&a, &b, 12, 12, 1) < 1.0);
    }

    #[test]
    fn boundary_f_swapping_masks_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..20 {
            let a: Vec<u8> = (0..64).map(|_| rng.gen_range(0..2)).collect();
            let b: Vec<u8> = (0..64).map(|_| rng.gen_range(0..2)).collect();
            let ab = boundary_f(&a, &b, 8, 8, 1);
            let ba = boundary_f(&b, &a, 8, 8, 1);
            assert!((ab - ba).abs() < 1e-12);
        }
    }

    #[test]
    fn default_tolerance_follows_diagonal() {
        // 64x64 diagonal is ~90.5 px; 0.75% is ~0.68 -> ceil 1.
        assert_eq!(default_boundary_tolerance(64, 64), 1);
        assert_eq!(default_boundary_tolerance(640, 480), 6);
    }

    fn constant_scores(n: usize, value: f64) -> Vec<FrameScore> {
        (0..n)
            .map(|frame| FrameScore {
                sequence: "s".into(),
                frame,
                j: value,
                f: value,
            })
            .collect()
    }

    #[test]
    fn aggregate_constant_scores() {
        let report = aggregate(&constant_scores(8, 0.8));
        assert!((report.j.mean - 0.8).abs() < 1e-12);
        assert_eq!(report.j.recall, 1.0);
        assert_eq!(report.j.decay, 0.0);
        assert_eq!(report.frames_scored, 6);
        assert!((report.jf_mean - 0.8).abs() < 1e-12);
    }

    #[test]
    fn aggregate_recall_threshold() {
        let report = aggregate(&constant_scores(8, 0.4));
        assert_eq!(report.j.recall, 0.0);
    }

    #[test]
    fn decay_of_linear_falloff_matches_quartile_oracle() {
        // Scores fall 1.0 -> 0.0 over 8 frames; frames 1..=6 are scored.
        let scores: Vec<FrameScore> = (0..8)
            .map(|frame| FrameScore {
                sequence: "s".into(),
                frame,
                j: 1.0 - frame as f64 / 7.0,
                f: 1.0 - frame as f64 / 7.0,
            })
            .collect();
        let report = aggregate(&scores);
        // Oracle by hand: scored values v_i = 1 - i/7 for i in 1..=6, split
        // [2,2,1,1]: mean(v1,v2) - mean(v6).
        let v: Vec<f64> = (1..=6).map(|i| 1.0 - i as f64 / 7.0).collect();
        let want = (v[0] + v[1]) / 2.0 - v[5];
        assert!(report.j.decay > 0.0);
        assert!((report.j.decay - want).abs() < 1e-12);
    }

    #[test]
    fn aggregate_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let mut scores = Vec::new();
        for seq in ["a", "b", "c"] {
            for frame in 0..8 {
                scores.push(FrameScore {
                    sequence: seq.into(),
                    frame,
                    j: rng.gen_range(0.0..1.0),
                    f: rng.gen_range(0.0..1.0),
                });
            }
        }
        let before = aggregate(&scores);
        let mut shuffled = scores.clone();
        shuffled.reverse();
        shuffled.swap(3, 17);
        let after = aggregate(&shuffled);
        assert_eq!(before.j, after.j);
        assert_eq!(before.f, after.f);
    }

    #[test]
    fn binarize_conventions() {
        assert_eq!(binarize(&[0.5, 0.49, 1.0, 0.0], 0.5), vec![1, 0, 1, 0]);
        let bin = binarize(&[0.0, 1.0], 0.5);
        assert_eq!(binarize(&bin.iter().map(|&b| b as f64).collect::<Vec<_>>(), 0.5), bin);
    }

    #[test]
    fn csv_and_json_shapes() {
        let scores = constant_scores(4, 0.75);
        let csv = scores_to_csv(&scores);
        assert!(csv.starts_with("sequence,frame,J,F\n"));
        assert_eq!(csv.lines().count(), 5);
        let report = aggregate(&scores);
        let json = report_to_json(&report);
        assert!(json.contains("\"JF_mean\""));
        assert!(json.contains("\"recall\""));
    }
}
