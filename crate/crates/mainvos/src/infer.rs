//! Causal inference: segment a video one frame at a time.
//!
//! Frame 0 is seeded with the given ground-truth masks (the one-shot
//! protocol). For every later frame `t` the model sees only data available
//! at time `t`: the RGB frame, the backward flow `t -> t-1` as the motion
//! cue, the location cue from the box tube at `t`, and the shape cue
//! obtained by warping the model's *own* previous prediction along the
//! backward flow. All `M` instances are segmented in a single forward pass
//! regardless of how many there are; overlaps are resolved per pixel by
//! taking the highest-probability instance at or above the threshold.
//!
//! Flow and box tubes are injected through small traits so ground-truth
//! inputs, corrupted inputs, and external estimators all run through the
//! same code path.

use std::time::Instant;

use ndarray::{Array2, Array3, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cues::{
    assemble_input, box_noise, flow_channels, lta_from_boxes, sta_from_prediction, BoxNoiseConfig,
    CueConfig,
};
use crate::data::{Box2D, BoxTube, FlowField, Frame, InstanceMaskSet, VideoSequence};
use crate::error::{ensure, Result};
use crate::net::MainNetwork;

// ---------------------------------------------------------------------------
// Input providers
// ---------------------------------------------------------------------------

/// Source of backward flow fields `t -> t-1`, defined for `t >= 1`.
pub trait FlowProvider {
    fn backward_flow(&self, t: usize) -> Result<FlowField>;
}

/// Source of per-frame instance boxes (the location cue).
pub trait TubeProvider {
    fn instance_count(&self) -> usize;
    fn boxes(&self, t: usize) -> Result<Vec<Option<Box2D>>>;
}

/// Ground-truth flow straight from the sequence.
pub struct GtFlows<'a>(pub &'a VideoSequence);

impl FlowProvider for GtFlows<'_> {
    fn backward_flow(&self, t: usize) -> Result<FlowField> {
        ensure(t >= 1 && t < self.0.len(), || {
            format!("backward flow requested for frame {t} of {}", self.0.len())
        })?;
        Ok(self.0.flows_bwd[t - 1].clone())
    }
}

/// Ground-truth box tubes straight from the sequence.
pub struct GtTubes<'a>(pub &'a VideoSequence);

impl TubeProvider for GtTubes<'_> {
    fn instance_count(&self) -> usize {
        self.0.tubes.instance_count()
    }

    fn boxes(&self, t: usize) -> Result<Vec<Option<Box2D>>> {
        Ok(self.0.tubes.boxes_at(t)?.to_vec())
    }
}

/// A pre-corrupted tube, standing in for a drifting external tracker.
pub struct NoisyTubes {
    tube: BoxTube,
}

impl NoisyTubes {
    pub fn new(seq: &VideoSequence, cfg: &BoxNoiseConfig, rng: &mut impl Rng) -> Result<Self> {
        Ok(NoisyTubes { tube: box_noise(&seq.tubes, seq.height(), seq.width(), cfg, rng)? })
    }
}

impl TubeProvider for NoisyTubes {
    fn instance_count(&self) -> usize {
        self.tube.instance_count()
    }

    fn boxes(&self, t: usize) -> Result<Vec<Option<Box2D>>> {
        Ok(self.tube.boxes_at(t)?.to_vec())
    }
}

// ---------------------------------------------------------------------------
// Configuration and result
// ---------------------------------------------------------------------------

/// Inference settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferConfig {
    /// A pixel belongs to an instance only when its probability reaches
    /// this threshold, in `(0, 1]`. At exactly 1.0 everything is background
    /// (probabilities are clamped strictly below 1).
    pub threshold: f64,
    pub cue: CueConfig,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig { threshold: 0.5, cue: CueConfig::default() }
    }
}

impl InferConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(
            self.threshold.is_finite() && self.threshold > 0.0 && self.threshold <= 1.0,
            || format!("threshold {} outside (0, 1]", self.threshold),
        )
    }
}

/// Output of causal segmentation.
#[derive(Debug, Clone)]
pub struct SegmentationResult {
    /// Hard per-pixel labels per frame; 0 is background, `k` is instance `k`.
    /// Frame 0 is the seeded ground truth.
    pub labels: Vec<Array2<u8>>,
    /// Per-frame soft channel probabilities `(N, H, W)`. Frame 0 carries the
    /// seed masks.
    pub probs: Vec<Array3<f32>>,
    /// Number of instances actually tracked (`M <= N`).
    pub instance_count: usize,
}

// ---------------------------------------------------------------------------
// Label resolution
// ---------------------------------------------------------------------------

/// Collapse per-instance probabilities into a single label map: each pixel
/// takes the highest-probability instance among the first `m` channels that
/// reaches `threshold` (ties go to the lowest index), else background.
pub fn resolve_labels(probs: &Array3<f32>, m: usize, threshold: f64) -> Result<Array2<u8>> {
    let (n, h, w) = probs.dim();
    ensure(m <= n, || format!("{m} instances exceed {n} channels"))?;
    ensure(m <= u8::MAX as usize, || format!("{m} instances exceed label range"))?;
    ensure(threshold.is_finite() && threshold > 0.0 && threshold <= 1.0, || {
        format!("threshold {threshold} outside (0, 1]")
    })?;

    let mut labels = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut best = 0.0f64;
            let mut best_k = 0usize; // 0 = background
            for k in 0..m {
                let p = probs[[k, y, x]] as f64;
                if p >= threshold && p > best {
                    best = p;
                    best_k = k + 1;
                }
            }
            labels[[y, x]] = best_k as u8;
        }
    }
    Ok(labels)
}

// ---------------------------------------------------------------------------
// Sequence segmentation
// ---------------------------------------------------------------------------

/// Segment a sequence causally with injected flow and tube providers.
pub fn segment_sequence(
    net: &MainNetwork,
    frames: &[Frame],
    first_masks: &InstanceMaskSet,
    flows: &dyn FlowProvider,
    tubes: &dyn TubeProvider,
    cfg: &InferConfig,
) -> Result<SegmentationResult> {
    cfg.validate()?;
    ensure(!frames.is_empty(), || "cannot segment an empty sequence".into())?;
    let m = first_masks.active_count();
    let n = net.cfg.capacity;
    ensure(m >= 1, || "the seed mask set has no instances".into())?;
    ensure(m <= n, || format!("{m} instances exceed the network capacity {n}"))?;
    ensure(tubes.instance_count() == m, || {
        format!("tube tracks {} instances, seed has {m}", tubes.instance_count())
    })?;
    let (h, w) = (frames[0].height(), frames[0].width());
    ensure(first_masks.height() == h && first_masks.width() == w, || {
        "seed masks do not match the frame resolution".into()
    })?;

    let mut labels = Vec::with_capacity(frames.len());
    let mut probs = Vec::with_capacity(frames.len());

    // Frame 0: the seeded ground truth, padded to the network capacity.
    let seeded = first_masks.resized_channels(n)?;
    labels.push(first_masks.to_index_map()?);
    probs.push(seeded.masks().clone());
    let mut prev = first_masks.clone();

    for (t, frame) in frames.iter().enumerate().skip(1) {
        ensure(frame.height() == h && frame.width() == w, || {
            format!("frame {t} changes resolution")
        })?;
        let bwd = flows.backward_flow(t)?;
        ensure(bwd.height() == h && bwd.width() == w, || {
            format!("flow at frame {t} has the wrong resolution")
        })?;

        let flow_ch = flow_channels(&bwd, cfg.cue.flow_mode);
        let boxes = tubes.boxes(t)?;
        let lta = lta_from_boxes(&boxes, n, h, w)?;
        let sta = sta_from_prediction(&prev, &bwd, n)?;

        let mut input = assemble_input(frame, &flow_ch, &lta, &sta)?;
        cfg.cue.mask_input(&mut input);

        let batch = input
            .tensor
            .insert_axis(Axis(0));
        net.check_input(&batch)?;
        let p = net.predict(&batch).index_axis(Axis(0), 0).to_owned();

        let frame_labels = resolve_labels(&p, m, cfg.threshold)?;
        prev = InstanceMaskSet::from_index_map(&frame_labels, m)?;
        labels.push(frame_labels);
        probs.push(p);
    }

    Ok(SegmentationResult { labels, probs, instance_count: m })
}

/// Segment a sequence with its own ground-truth flow and tubes.
pub fn segment_video(
    net: &MainNetwork,
    seq: &VideoSequence,
    cfg: &InferConfig,
) -> Result<SegmentationResult> {
    segment_sequence(
        net,
        &seq.frames,
        &seq.gt_masks[0],
        &GtFlows(seq),
        &GtTubes(seq),
        cfg,
    )
}

// ---------------------------------------------------------------------------
// Latency measurement
// ---------------------------------------------------------------------------

/// Median per-frame latency at several instance counts.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LatencyReport {
    /// `(instance_count, median_ms)` pairs, in the order requested.
    pub timings: Vec<(usize, f64)>,
    pub height: usize,
    pub width: usize,
}

/// Time a full per-frame step (forward pass plus label resolution) for each
/// requested instance count. The network segments all instances in one
/// pass, so the numbers should be flat in the instance count.
pub fn benchmark_forward(
    net: &MainNetwork,
    h: usize,
    w: usize,
    instance_counts: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<LatencyReport> {
    ensure(repeats >= 1, || "need at least one repeat".into())?;
    let n = net.cfg.capacity;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut timings = Vec::with_capacity(instance_counts.len());
    for &m in instance_counts {
        ensure(m >= 1 && m <= n, || format!("instance count {m} outside 1..={n}"))?;
        let mut input = Array4::zeros((1, net.cfg.input_channels, h, w));
        for v in input.iter_mut() {
            *v = rng.gen_range(0.0f32..1.0);
        }
        // Zero the attention channels of the instances that don't exist.
        for k in m..n {
            input.index_axis_mut(Axis(1), 6 + k).fill(0.0);
            input.index_axis_mut(Axis(1), 6 + n + k).fill(0.0);
        }
        net.check_input(&input)?;

        let mut samples = Vec::with_capacity(repeats);
        // One untimed warm-up to amortize allocator effects.
        let _ = net.predict(&input);
        for _ in 0..repeats {
            let start = Instant::now();
            let p = net.predict(&input).index_axis(Axis(0), 0).to_owned();
            let labels = resolve_labels(&p, m, 0.5)?;
            let elapsed = start.elapsed().as_secs_f64() * 1e3;
            std::hint::black_box(&labels);
            samples.push(elapsed);
        }
        samples.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
        timings.push((m, samples[samples.len() / 2]));
    }
    Ok(LatencyReport { timings, height: h, width: w })
}
