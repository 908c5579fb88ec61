//! Segmentation quality metrics: region similarity (J), boundary accuracy
//! (F), per-frame temporal curves, and dataset-level reports.
//!
//! Conventions, applied uniformly: masks binarize at 0.5; two empty masks
//! agree perfectly (score 1); an empty mask against a non-empty one scores
//! 0. Scoring starts at frame 1 because frame 0 is the seeded ground truth
//! in the one-shot protocol. Aggregates average over instances, not over
//! sequences, so a two-instance video weighs twice a one-instance one.

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::data::{InstanceMaskSet, VideoSequence};
use crate::error::{ensure, Result};
use crate::infer::{segment_video, InferConfig};
use crate::net::MainNetwork;

// ---------------------------------------------------------------------------
// Region similarity
// ---------------------------------------------------------------------------

/// Intersection over union of two soft masks, binarized at 0.5.
/// Both empty -> 1.0; exactly one empty -> 0.0.
pub fn jaccard(pred: &ArrayView2<'_, f32>, gt: &ArrayView2<'_, f32>) -> f64 {
    debug_assert_eq!(pred.dim(), gt.dim());
    let mut inter = 0u64;
    let mut union = 0u64;
    for (p, g) in pred.iter().zip(gt.iter()) {
        let p = *p >= 0.5;
        let g = *g >= 0.5;
        inter += (p && g) as u64;
        union += (p || g) as u64;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Binary mask of one instance label in a hard label map.
pub fn mask_of_label(labels: &Array2<u8>, label: u8) -> Array2<f32> {
    labels.mapv(|v| if v == label { 1.0 } else { 0.0 })
}

// ---------------------------------------------------------------------------
// Boundary accuracy
// ---------------------------------------------------------------------------

/// One-pixel boundary: mask pixels with at least one 4-neighbor outside the
/// mask, where beyond the image border counts as outside.
pub fn boundary_pixels(mask: &ArrayView2<'_, f32>) -> Vec<(usize, usize)> {
    let (h, w) = mask.dim();
    let inside = |y: isize, x: isize| -> bool {
        y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && mask[[y as usize, x as usize]] >= 0.5
    };
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if mask[[y, x]] >= 0.5 {
                let (yi, xi) = (y as isize, x as isize);
                if !inside(yi - 1, xi) || !inside(yi + 1, xi) || !inside(yi, xi - 1)
                    || !inside(yi, xi + 1)
                {
                    out.push((y, x));
                }
            }
        }
    }
    out
}

/// Default matching tolerance: 0.8% of the image diagonal, rounded up,
/// at least one pixel.
pub fn default_boundary_tolerance(h: usize, w: usize) -> f64 {
    let diag = ((h * h + w * w) as f64).sqrt();
    (0.008 * diag).ceil().max(1.0)
}

/// Fraction of `from` pixels lying within Euclidean distance `tol` of some
/// `to` pixel, computed by stamping a disk around every `to` pixel.
fn match_fraction(from: &[(usize, usize)], to: &[(usize, usize)], h: usize, w: usize, tol: f64) -> f64 {
    if from.is_empty() {
        return 0.0;
    }
    let r = tol.floor() as isize;
    let tol2 = tol * tol;
    let mut near = Array2::<bool>::default((h, w));
    for &(y, x) in to {
        for dy in -r..=r {
            for dx in -r..=r {
                if (dy * dy + dx * dx) as f64 <= tol2 {
                    let ny = y as isize + dy;
                    let nx = x as isize + dx;
                    if ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w {
                        near[[ny as usize, nx as usize]] = true;
                    }
                }
            }
        }
    }
    let hit = from.iter().filter(|&&(y, x)| near[[y, x]]).count();
    hit as f64 / from.len() as f64
}

/// Boundary F-measure: precision/recall of the 1-pixel boundaries under a
/// Euclidean matching tolerance. Both boundaries empty -> 1.0; exactly one
/// empty -> 0.0.
pub fn boundary_f(pred: &ArrayView2<'_, f32>, gt: &ArrayView2<'_, f32>, tol: f64) -> f64 {
    debug_assert_eq!(pred.dim(), gt.dim());
    let (h, w) = pred.dim();
    let bp = boundary_pixels(pred);
    let bg = boundary_pixels(gt);
    match (bp.is_empty(), bg.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        (false, false) => {
            let precision = match_fraction(&bp, &bg, h, w, tol);
            let recall = match_fraction(&bg, &bp, h, w, tol);
            if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Sequence scoring
// ---------------------------------------------------------------------------

/// Per-instance scores for one sequence, averaged over frames `1..T`.
#[derive(Debug, Clone, Serialize)]
pub struct SequenceScores {
    pub per_instance_j: Vec<f64>,
    pub per_instance_f: Vec<f64>,
}

impl SequenceScores {
    pub fn mean_j(&self) -> f64 {
        mean(&self.per_instance_j)
    }

    pub fn mean_f(&self) -> f64 {
        mean(&self.per_instance_f)
    }

    /// The combined J&F score.
    pub fn mean_jf(&self) -> f64 {
        0.5 * (self.mean_j() + self.mean_f())
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Score predicted label maps against ground truth. Frame 0 is skipped; the
/// boundary tolerance defaults from the resolution when `None`.
pub fn score_sequence(
    labels: &[Array2<u8>],
    gt: &[InstanceMaskSet],
    tol: Option<f64>,
) -> Result<SequenceScores> {
    ensure(labels.len() == gt.len(), || {
        format!("{} predicted frames for {} ground-truth frames", labels.len(), gt.len())
    })?;
    ensure(labels.len() >= 2, || "scoring needs at least two frames".into())?;
    let m = gt[0].active_count();
    let (h, w) = (gt[0].height(), gt[0].width());
    for (t, l) in labels.iter().enumerate() {
        ensure(l.dim() == (h, w), || format!("label map {t} has the wrong resolution"))?;
    }
    let tol = tol.unwrap_or_else(|| default_boundary_tolerance(h, w));

    let mut per_instance_j = Vec::with_capacity(m);
    let mut per_instance_f = Vec::with_capacity(m);
    for k in 0..m {
        let mut js = Vec::with_capacity(labels.len() - 1);
        let mut fs = Vec::with_capacity(labels.len() - 1);
        for t in 1..labels.len() {
            let pred = mask_of_label(&labels[t], (k + 1) as u8);
            let gt_k = gt[t].channel(k);
            js.push(jaccard(&pred.view(), &gt_k));
            fs.push(boundary_f(&pred.view(), &gt_k, tol));
        }
        per_instance_j.push(mean(&js));
        per_instance_f.push(mean(&fs));
    }
    Ok(SequenceScores { per_instance_j, per_instance_f })
}

// ---------------------------------------------------------------------------
// Dataset evaluation
// ---------------------------------------------------------------------------

/// Aggregate over a group of instances.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GroupScore {
    pub mean_j: f64,
    pub mean_f: f64,
    pub mean_jf: f64,
    /// Number of instances the means run over.
    pub instances: usize,
}

fn group_score(js: &[f64], fs: &[f64]) -> GroupScore {
    GroupScore {
        mean_j: mean(js),
        mean_f: mean(fs),
        mean_jf: 0.5 * (mean(js) + mean(fs)),
        instances: js.len(),
    }
}

/// Scores for one evaluated sequence.
#[derive(Debug, Clone, Serialize)]
pub struct SequenceReport {
    pub id: String,
    pub instance_count: usize,
    pub per_instance_j: Vec<f64>,
    pub per_instance_f: Vec<f64>,
    pub mean_j: f64,
    pub mean_f: f64,
}

/// Dataset-level evaluation report. Group entries are `None` when the
/// corresponding split is empty — absent data is never reported as zero.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub sequences: Vec<SequenceReport>,
    pub overall: GroupScore,
    pub seen: Option<GroupScore>,
    pub unseen: Option<GroupScore>,
}

/// Run causal inference (ground-truth flow and tubes) over both validation
/// splits and aggregate instance-level J / F.
pub fn evaluate_dataset(
    net: &MainNetwork,
    seen: &[VideoSequence],
    unseen: &[VideoSequence],
    cfg: &InferConfig,
) -> Result<EvalReport> {
    let mut sequences = Vec::with_capacity(seen.len() + unseen.len());
    let mut all_j = Vec::new();
    let mut all_f = Vec::new();
    let mut grouped: [(Vec<f64>, Vec<f64>); 2] = [(Vec::new(), Vec::new()), (Vec::new(), Vec::new())];

    for (group, seqs) in [(0usize, seen), (1usize, unseen)] {
        for seq in seqs {
            let out = segment_video(net, seq, cfg)?;
            let scores = score_sequence(&out.labels, &seq.gt_masks, None)?;
            all_j.extend_from_slice(&scores.per_instance_j);
            all_f.extend_from_slice(&scores.per_instance_f);
            grouped[group].0.extend_from_slice(&scores.per_instance_j);
            grouped[group].1.extend_from_slice(&scores.per_instance_f);
            sequences.push(SequenceReport {
                id: seq.id.clone(),
                instance_count: out.instance_count,
                mean_j: scores.mean_j(),
                mean_f: scores.mean_f(),
                per_instance_j: scores.per_instance_j,
                per_instance_f: scores.per_instance_f,
            });
        }
    }

    let to_group = |pair: &(Vec<f64>, Vec<f64>)| {
        if pair.0.is_empty() {
            None
        } else {
            Some(group_score(&pair.0, &pair.1))
        }
    };
    Ok(EvalReport {
        sequences,
        overall: group_score(&all_j, &all_f),
        seen: to_group(&grouped[0]),
        unseen: to_group(&grouped[1]),
    })
}

// ---------------------------------------------------------------------------
// Temporal stability
// ---------------------------------------------------------------------------

/// Quality at one frame index, pooled over runs.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TemporalPoint {
    pub frame: usize,
    /// Mean J over the instances alive (visible in ground truth) at this
    /// index.
    pub mean_j: f64,
    /// Fraction of alive instances with a non-empty prediction.
    pub survival: f64,
    pub alive: usize,
}

/// Per-frame-index quality curve over several (labels, ground truth) runs.
/// Starts at frame 1; indices beyond a run's length simply drop that run.
pub fn temporal_curve(runs: &[(&[Array2<u8>], &[InstanceMaskSet])]) -> Vec<TemporalPoint> {
    let max_len = runs.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
    let mut curve = Vec::new();
    for t in 1..max_len {
        let mut js = Vec::new();
        let mut survived = 0usize;
        for (labels, gt) in runs {
            if t >= labels.len() || t >= gt.len() {
                continue;
            }
            let m = gt[0].active_count();
            for k in 0..m {
                if !gt[t].channel_nonempty(k) {
                    continue; // not alive at this frame
                }
                let pred = mask_of_label(&labels[t], (k + 1) as u8);
                js.push(jaccard(&pred.view(), &gt[t].channel(k)));
                if pred.iter().any(|&v| v >= 0.5) {
                    survived += 1;
                }
            }
        }
        if js.is_empty() {
            continue;
        }
        curve.push(TemporalPoint {
            frame: t,
            mean_j: mean(&js),
            survival: survived as f64 / js.len() as f64,
            alive: js.len(),
        });
    }
    curve
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array3, ArrayView2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask_from(rows: &[&str]) -> Array2<f32> {
        let h = rows.len();
        let w = rows[0].len();
        let mut m = Array2::zeros((h, w));
        for (y, row) in rows.iter().enumerate() {
            for (x, c) in row.chars().enumerate() {
                if c == '#' {
                    m[[y, x]] = 1.0;
                }
            }
        }
        m
    }

    #[test]
    fn jaccard_follows_the_empty_mask_conventions() {
        let empty = Array2::<f32>::zeros((4, 4));
        let full = Array2::<f32>::ones((4, 4));
        assert_eq!(jaccard(&empty.view(), &empty.view()), 1.0);
        assert_eq!(jaccard(&empty.view(), &full.view()), 0.0);
        assert_eq!(jaccard(&full.view(), &empty.view()), 0.0);
        assert_eq!(jaccard(&full.view(), &full.view()), 1.0);
    }

    #[test]
    fn jaccard_counts_intersection_over_union() {
        let a = mask_from(&["##..", "##..", "....", "...."]);
        let b = mask_from(&[".##.", ".##.", "....", "...."]);
        // Intersection 2, union 6.
        assert!((jaccard(&a.view(), &b.view()) - 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn jaccard_matches_the_dice_bijection_on_random_masks() {
        // J == D / (2 - D) with the unsmoothed soft dice on binary masks.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..20 {
            let a = Array2::from_shape_fn((9, 13), |_| if rng.gen_bool(0.4) { 1.0f32 } else { 0.0 });
            let b = Array2::from_shape_fn((9, 13), |_| if rng.gen_bool(0.4) { 1.0f32 } else { 0.0 });
            if a.sum() == 0.0 && b.sum() == 0.0 {
                continue;
            }
            let af = a.mapv(|v| v as f64);
            let bf = b.mapv(|v| v as f64);
            let d = crate::loss::soft_dice(af.view(), bf.view(), 0.0);
            let j = jaccard(&a.view(), &b.view());
            assert!((j - d / (2.0 - d)).abs() < 1e-12, "trial {trial}: J={j} D={d}");
        }
    }

    #[test]
    fn boundary_of_a_solid_rectangle_is_its_ring() {
        let m = mask_from(&["......", ".####.", ".####.", ".####.", "......"]);
        let b = boundary_pixels(&m.view());
        // 4x3 rectangle: ring has 4*2 + (3-2)*2 = 10 pixels.
        assert_eq!(b.len(), 10);
        // The center pixel is interior.
        assert!(!b.contains(&(2, 2)));
        assert!(!b.contains(&(2, 3)));
    }

    #[test]
    fn image_border_counts_as_outside() {
        // A mask touching the image edge has boundary pixels there: the
        // outer ring of a full 3x3 mask borders the outside, while the
        // center is interior (all its 4-neighbors are mask pixels).
        let m = Array2::<f32>::ones((3, 3));
        let b = boundary_pixels(&m.view());
        assert_eq!(b.len(), 8, "the ring of a full 3x3 mask borders the outside");
        assert!(!b.contains(&(1, 1)), "the center pixel is interior");
    }

    #[test]
    fn boundary_f_is_one_for_identical_and_degrades_with_distance() {
        let a = mask_from(&["........", ".####...", ".####...", ".####...", "........"]);
        // Shift right by one pixel.
        let b = mask_from(&["........", "..####..", "..####..", "..####..", "........"]);
        // Shift right by three pixels.
        let c = mask_from(&["........", "....####", "....####", "....####", "........"]);

        assert_eq!(boundary_f(&a.view(), &a.view(), 1.0), 1.0);
        assert_eq!(boundary_f(&a.view(), &b.view(), 1.0), 1.0, "1-px shift within 1-px tolerance");
        let far = boundary_f(&a.view(), &c.view(), 1.0);
        assert!(far < 0.8, "3-px shift must lose: {far}");
        let relaxed = boundary_f(&a.view(), &c.view(), 3.0);
        assert!(relaxed > far, "larger tolerance cannot reduce F");
    }

    #[test]
    fn boundary_f_empty_conventions() {
        let empty = Array2::<f32>::zeros((5, 5));
        let m = mask_from(&[".....", ".###.", ".###.", ".###.", "....."]);
        assert_eq!(boundary_f(&empty.view(), &empty.view(), 1.0), 1.0);
        assert_eq!(boundary_f(&m.view(), &empty.view(), 1.0), 0.0);
        assert_eq!(boundary_f(&empty.view(), &m.view(), 1.0), 0.0);
    }

    #[test]
    fn disk_matching_agrees_with_brute_force_distances() {
        // Independent oracle: pairwise Euclidean distances.
        let brute = |from: &[(usize, usize)], to: &[(usize, usize)], tol: f64| -> f64 {
            if from.is_empty() {
                return 0.0;
            }
            let hit = from
                .iter()
                .filter(|&&(y, x)| {
                    to.iter().any(|&(ty, tx)| {
                        let dy = y as f64 - ty as f64;
                        let dx = x as f64 - tx as f64;
                        (dy * dy + dx * dx).sqrt() <= tol
                    })
                })
                .count();
            hit as f64 / from.len() as f64
        };

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..10 {
            let a = Array2::from_shape_fn((16, 20), |_| if rng.gen_bool(0.3) { 1.0f32 } else { 0.0 });
            let b = Array2::from_shape_fn((16, 20), |_| if rng.gen_bool(0.3) { 1.0f32 } else { 0.0 });
            let ba = boundary_pixels(&a.view());
            let bb = boundary_pixels(&b.view());
            for tol in [1.0, 2.0, 3.5] {
                let fast = match_fraction(&ba, &bb, 16, 20, tol);
                let slow = brute(&ba, &bb, tol);
                assert!(
                    (fast - slow).abs() < 1e-12,
                    "trial {trial} tol {tol}: {fast} vs {slow}"
                );
            }
        }
    }

    #[test]
    fn default_tolerance_is_one_pixel_at_desk_resolution() {
        assert_eq!(default_boundary_tolerance(64, 96), 1.0);
        assert_eq!(default_boundary_tolerance(256, 416), 4.0); // ceil(0.008 * 488.6)
        assert!(default_boundary_tolerance(8, 8) >= 1.0);
    }

    fn gt_frames(masks: Vec<Array3<f32>>, m: usize) -> Vec<InstanceMaskSet> {
        masks
            .into_iter()
            .map(|a| InstanceMaskSet::new(a, m).unwrap())
            .collect()
    }

    #[test]
    fn sequence_scoring_skips_the_seeded_first_frame() {
        // Ground truth: one instance occupying a 2x2 block.
        let mut gt_mask = Array3::zeros((1, 4, 4));
        for y in 1..3 {
            for x in 1..3 {
                gt_mask[[0, y, x]] = 1.0;
            }
        }
        let gt = gt_frames(vec![gt_mask.clone(), gt_mask.clone(), gt_mask], 1);

        // Predictions: frame 0 is garbage (it is the seed, never scored),
        // frames 1-2 are perfect.
        let mut perfect = Array2::zeros((4, 4));
        for y in 1..3 {
            for x in 1..3 {
                perfect[[y, x]] = 1;
            }
        }
        let garbage = Array2::zeros((4, 4));
        let labels = vec![garbage, perfect.clone(), perfect];

        let scores = score_sequence(&labels, &gt, Some(1.0)).unwrap();
        assert_eq!(scores.per_instance_j, vec![1.0]);
        assert_eq!(scores.per_instance_f, vec![1.0]);
        assert_eq!(scores.mean_jf(), 1.0);
    }

    #[test]
    fn vanished_instance_conventions_apply_per_frame() {
        // Instance present in GT frame 1 but predicted empty -> J 0 there.
        // Instance absent in GT frame 2 and predicted empty -> J 1 there.
        let mut present = Array3::zeros((1, 4, 4));
        present[[0, 1, 1]] = 1.0;
        let gt = vec![
            InstanceMaskSet::new(present.clone(), 1).unwrap(),
            InstanceMaskSet::new(present, 1).unwrap(),
            // Frame 2: the instance left the scene.
            InstanceMaskSet::empty(1, 1, 4, 4).unwrap(),
        ];
        let labels = vec![Array2::zeros((4, 4)); 3];
        let scores = score_sequence(&labels, &gt, Some(1.0)).unwrap();
        assert!((scores.per_instance_j[0] - 0.5).abs() < 1e-12, "(0 + 1) / 2");
    }

    #[test]
    fn temporal_curve_tracks_alive_instances_and_survival() {
        let mut m0 = Array3::zeros((1, 4, 4));
        m0[[0, 1, 1]] = 1.0;
        m0[[0, 1, 2]] = 1.0;
        let gt = gt_frames(vec![m0.clone(), m0.clone(), m0], 1);

        // Prediction holds the instance at frame 1, loses it at frame 2.
        let mut hold = Array2::zeros((4, 4));
        hold[[1, 1]] = 1;
        hold[[1, 2]] = 1;
        let lost = Array2::zeros((4, 4));
        let labels = vec![hold.clone(), hold, lost];

        let runs: Vec<(&[Array2<u8>], &[InstanceMaskSet])> = vec![(&labels, &gt)];
        let curve = temporal_curve(&runs);
        assert_eq!(curve.len(), 2);
        assert_eq!(curve[0].frame, 1);
        assert_eq!(curve[0].mean_j, 1.0);
        assert_eq!(curve[0].survival, 1.0);
        assert_eq!(curve[1].mean_j, 0.0);
        assert_eq!(curve[1].survival, 0.0);
        assert_eq!(curve[1].alive, 1);
    }

    #[test]
    fn dataset_report_uses_option_for_empty_splits() {
        use crate::net::{cue_input_channels, NetworkConfig};
        use crate::synth::{generate_scene, SceneSpec};

        let spec = SceneSpec {
            id: "eval-smoke".into(),
            seed: 3,
            frame_count: 3,
            height: 32,
            width: 48,
            channel_capacity: 2,
            instance_count_weights: vec![1.0],
            ..SceneSpec::default()
        };
        let seq = generate_scene(&spec).unwrap();
        let cfg = NetworkConfig {
            input_channels: cue_input_channels(2),
            capacity: 2,
            stage_channels: [4, 4, 8, 8],
            fpn_width: 4,
            dilation_set: [1, 2, 3],
            separable: true,
        };
        let net = MainNetwork::new(cfg, 1).unwrap();
        let report =
            evaluate_dataset(&net, std::slice::from_ref(&seq), &[], &InferConfig::default())
                .unwrap();
        assert_eq!(report.sequences.len(), 1);
        assert!(report.seen.is_some());
        assert!(report.unseen.is_none(), "empty split must be None, not zero");
        let seen = report.seen.unwrap();
        assert_eq!(seen.instances, 1);
        assert!((0.0..=1.0).contains(&seen.mean_j));
        // Serializes cleanly to JSON for the CLI.
        let js = serde_json::to_string(&report).unwrap();
        assert!(js.contains("\"unseen\":null"));
    }

    #[test]
    fn score_sequence_validates_shapes() {
        let gt = gt_frames(vec![Array3::zeros((1, 4, 4)), Array3::zeros((1, 4, 4))], 0);
        let labels = vec![Array2::zeros((4, 4))];
        assert!(score_sequence(&labels, &gt, None).is_err(), "frame count mismatch");
        let labels = vec![Array2::zeros((4, 4)), Array2::zeros((5, 4))];
        assert!(score_sequence(&labels, &gt, None).is_err(), "resolution mismatch");
    }

    #[test]
    fn mask_of_label_selects_exactly_one_label() {
        let mut labels = Array2::<u8>::zeros((2, 3));
        labels[[0, 0]] = 1;
        labels[[0, 1]] = 2;
        labels[[1, 2]] = 1;
        let m1 = mask_of_label(&labels, 1);
        assert_eq!(m1[[0, 0]], 1.0);
        assert_eq!(m1[[0, 1]], 0.0);
        assert_eq!(m1[[1, 2]], 1.0);
        let view: ArrayView2<'_, f32> = m1.view();
        assert_eq!(view.sum(), 2.0);
    }
}
