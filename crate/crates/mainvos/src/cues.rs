//! Attention cues fed to the network alongside RGB.
//!
//! Input tensor layout for a model with `N` instance channels, in this
//! order, `6 + 2N` channels total:
//!
//! ```text
//! [ RGB (3) | flow (3) | LTA (N) | STA (N) ]
//! ```
//!
//! * Flow enters as **uOF** — unit direction plus per-frame max-normalized
//!   magnitude, every channel in `[-1, 1]` — or, for ablations, as raw
//!   `(dx, dy, |flow|)`.
//! * **LTA** (long-term attention) is one binary box-indicator channel per
//!   instance, built from the tracked box tube.
//! * **STA** (short-term attention) is the previous frame's (binarized)
//!   prediction warped into the current frame along backward flow.
//!
//! Training corrupts the cues on purpose — [`perturb_sta`] distorts
//! ground-truth masks standing in for imperfect predictions, [`box_noise`]
//! degrades box tubes into tracker-like output, and [`instance_shuffle`]
//! permutes instance channels so no instance gets glued to one channel.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::Rng;

use crate::data::{Box2D, BoxTube, FlowField, Frame, InstanceMaskSet};
use crate::error::{ensure, Result};

/// Length below which a flow vector counts as "no motion" and gets a zero
/// direction instead of an amplified noise direction.
pub const FLOW_EPSILON: f32 = 1e-8;

// ---------------------------------------------------------------------------
// Flow channels
// ---------------------------------------------------------------------------

/// How flow is presented to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowMode {
    /// Unit direction + normalized magnitude (the default).
    Unit,
    /// Raw `(dx, dy, |flow|)`, unbounded. Ablation only.
    Raw,
}

/// Unit optical flow: channels `[dx/|o|, dy/|o|, |o| / max |o|]`. Pixels
/// with `|o| < FLOW_EPSILON` get a zero direction; a frame with no motion at
/// all gets a zero magnitude channel.
pub fn unit_optical_flow(field: &FlowField) -> Array3<f32> {
    let (h, w) = (field.height(), field.width());
    let mut out = Array3::zeros((3, h, w));
    let mut max_mag = 0.0f32;
    for y in 0..h {
        for x in 0..w {
            let dx = field.vectors()[[0, y, x]];
            let dy = field.vectors()[[1, y, x]];
            let mag = dx.hypot(dy);
            if mag >= FLOW_EPSILON {
                out[[0, y, x]] = dx / mag;
                out[[1, y, x]] = dy / mag;
            }
            out[[2, y, x]] = mag;
            max_mag = max_mag.max(mag);
        }
    }
    if max_mag > 0.0 {
        out.index_axis_mut(Axis(0), 2).mapv_inplace(|m| m / max_mag);
    }
    out
}

/// Raw flow channels `(dx, dy, |o|)` for the flow-representation ablation.
pub fn raw_flow_channels(field: &FlowField) -> Array3<f32> {
    let (h, w) = (field.height(), field.width());
    let mut out = Array3::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            let dx = field.vectors()[[0, y, x]];
            let dy = field.vectors()[[1, y, x]];
            out[[0, y, x]] = dx;
            out[[1, y, x]] = dy;
            out[[2, y, x]] = dx.hypot(dy);
        }
    }
    out
}

/// Flow channels under the chosen representation.
pub fn flow_channels(field: &FlowField, mode: FlowMode) -> Array3<f32> {
    match mode {
        FlowMode::Unit => unit_optical_flow(field),
        FlowMode::Raw => raw_flow_channels(field),
    }
}

// ---------------------------------------------------------------------------
// Backward warping
// ---------------------------------------------------------------------------

/// Bilinear sample with zero padding outside the image. Coordinates are in
/// pixel units: `src[[y, x]]` sits at `(x, y)`.
fn bilinear_sample(src: &ArrayView2<'_, f32>, x: f32, y: f32) -> f32 {
    let (h, w) = src.dim();
    let x0f = x.floor();
    let y0f = y.floor();
    let fx = x - x0f;
    let fy = y - y0f;
    let x0 = x0f as isize;
    let y0 = y0f as isize;

    let mut acc = 0.0;
    for (dy, wy) in [(0isize, 1.0 - fy), (1, fy)] {
        if wy == 0.0 {
            continue;
        }
        for (dx, wx) in [(0isize, 1.0 - fx), (1, fx)] {
            let weight = wx * wy;
            if weight == 0.0 {
                continue;
            }
            let (xi, yi) = (x0 + dx, y0 + dy);
            if xi >= 0 && yi >= 0 && (xi as usize) < w && (yi as usize) < h {
                acc += weight * src[[yi as usize, xi as usize]];
            }
        }
    }
    acc
}

/// Backward-warp one plane: `out(p) = sample(src, p + flow(p))`. With a
/// backward flow field (frame `t+1` to `t`) and `src` from frame `t`, the
/// output lives in frame `t+1`'s geometry.
pub fn warp_plane(src: &ArrayView2<'_, f32>, flow: &FlowField) -> Result<Array2<f32>> {
    let (h, w) = src.dim();
    ensure(flow.height() == h && flow.width() == w, || {
        format!(
            "warp: source {w}x{h} vs flow {}x{}",
            flow.width(),
            flow.height()
        )
    })?;
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let sx = x as f32 + flow.vectors()[[0, y, x]];
            let sy = y as f32 + flow.vectors()[[1, y, x]];
            out[[y, x]] = bilinear_sample(src, sx, sy);
        }
    }
    Ok(out)
}

/// Backward-warp every channel of a `(C, H, W)` tensor.
pub fn warp(src: &Array3<f32>, flow: &FlowField) -> Result<Array3<f32>> {
    let (c, h, w) = src.dim();
    let mut out = Array3::zeros((c, h, w));
    for k in 0..c {
        let plane = warp_plane(&src.index_axis(Axis(0), k), flow)?;
        out.index_axis_mut(Axis(0), k).assign(&plane);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// STA / LTA
// ---------------------------------------------------------------------------

/// Short-term attention for frame `t`: binarize the previous frame's
/// prediction and warp it along `flows_bwd[t-1]`. Produces `n` channels;
/// channels past the prediction's are zero.
pub fn sta_from_prediction(
    prev: &InstanceMaskSet,
    backward_flow: &FlowField,
    n: usize,
) -> Result<Array3<f32>> {
    ensure(prev.active_count() <= n, || {
        format!("{} instances exceed {} attention channels", prev.active_count(), n)
    })?;
    let (h, w) = (prev.height(), prev.width());
    let mut out = Array3::zeros((n, h, w));
    for k in 0..prev.channel_count().min(n) {
        let binary = prev.channel(k).mapv(|v| if v >= 0.5 { 1.0 } else { 0.0 });
        let warped = warp_plane(&binary.view(), backward_flow)?;
        out.index_axis_mut(Axis(0), k).assign(&warped);
    }
    Ok(out)
}

/// Long-term attention for one frame: channel `k` is the indicator of
/// instance `k`'s box (half-open `[x0, x1) × [y0, y1)`), zero when absent.
pub fn lta_from_boxes(
    boxes: &[Option<Box2D>],
    n: usize,
    h: usize,
    w: usize,
) -> Result<Array3<f32>> {
    ensure(boxes.len() <= n, || {
        format!("{} boxes exceed {} attention channels", boxes.len(), n)
    })?;
    let mut out = Array3::zeros((n, h, w));
    for (k, b) in boxes.iter().enumerate() {
        if let Some(b) = b {
            let x_lo = (b.x0.ceil().max(0.0) as usize).min(w);
            let x_hi = (b.x1.ceil().max(0.0) as usize).min(w);
            let y_lo = (b.y0.ceil().max(0.0) as usize).min(h);
            let y_hi = (b.y1.ceil().max(0.0) as usize).min(h);
            for y in y_lo..y_hi {
                for x in x_lo..x_hi {
                    out[[k, y, x]] = 1.0;
                }
            }
        }
    }
    Ok(out)
}

/// Convenience: LTA straight from a tube at frame `t`.
pub fn lta_from_tube(
    tubes: &BoxTube,
    t: usize,
    n: usize,
    h: usize,
    w: usize,
) -> Result<Array3<f32>> {
    lta_from_boxes(tubes.boxes_at(t)?, n, h, w)
}

// ---------------------------------------------------------------------------
// Training-time corruption
// ---------------------------------------------------------------------------

/// Controls how ground-truth masks are distorted into STA stand-ins during
/// training.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaPerturbConfig {
    /// Inclusive kernel-size range for the random dilation/erosion.
    pub kernel_range: (usize, usize),
    /// Uniform range of the affine scale applied about the mask centroid.
    pub scale_range: (f32, f32),
    /// Maximum shift as a fraction of image size, direction uniform.
    pub max_shift_frac: f32,
}

impl StaPerturbConfig {
    /// Scale the reference kernel range `[6, 30]` (tuned at 256x416) to the
    /// working resolution by image diagonal, never below 2 pixels.
    pub fn from_resolution(h: usize, w: usize) -> Self {
        let diag = ((h * h + w * w) as f32).sqrt();
        let reference = (256.0f32 * 256.0 + 416.0 * 416.0).sqrt();
        let r = diag / reference;
        let lo = ((6.0 * r).round() as usize).max(2);
        let hi = ((30.0 * r).round() as usize).max(lo + 1);
        StaPerturbConfig {
            kernel_range: (lo, hi),
            scale_range: (0.8, 1.2),
            max_shift_frac: 0.01,
        }
    }

    /// No-op perturbation; handy for controlled tests.
    pub fn identity() -> Self {
        StaPerturbConfig { kernel_range: (1, 1), scale_range: (1.0, 1.0), max_shift_frac: 0.0 }
    }
}

impl Default for StaPerturbConfig {
    fn default() -> Self {
        StaPerturbConfig::from_resolution(64, 96)
    }
}

/// Distort a binary mask the way an imperfect previous-frame prediction
/// would be: random square dilation *or* erosion, a scale about the
/// centroid, and a small shift. Output stays binary.
pub fn perturb_sta(
    mask: &ArrayView2<'_, f32>,
    cfg: &StaPerturbConfig,
    rng: &mut impl Rng,
) -> Array2<f32> {
    let (h, w) = mask.dim();

    // Morphology with a k x k square structuring element, zero padded.
    let k = if cfg.kernel_range.1 > cfg.kernel_range.0 {
        rng.gen_range(cfg.kernel_range.0..=cfg.kernel_range.1)
    } else {
        cfg.kernel_range.0
    };
    let dilate = rng.gen_bool(0.5);
    let lo = -((k as isize) / 2);
    let hi = ((k as isize) - 1) / 2;
    let mut morphed = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = if dilate { 0.0 } else { 1.0 };
            'window: for dy in lo..=hi {
                for dx in lo..=hi {
                    let (yy, xx) = (y as isize + dy, x as isize + dx);
                    let v = if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                        mask[[yy as usize, xx as usize]]
                    } else {
                        0.0
                    };
                    if dilate && v > 0.5 {
                        acc = 1.0;
                        break 'window;
                    }
                    if !dilate && v <= 0.5 {
                        acc = 0.0;
                        break 'window;
                    }
                }
            }
            morphed[[y, x]] = acc;
        }
    }

    // Centroid of the morphed mask; an empty mask stays empty.
    let mut count = 0.0f32;
    let (mut cx, mut cy) = (0.0f32, 0.0f32);
    for ((y, x), &v) in morphed.indexed_iter() {
        if v > 0.5 {
            count += 1.0;
            cx += x as f32;
            cy += y as f32;
        }
    }
    if count == 0.0 {
        return morphed;
    }
    cx /= count;
    cy /= count;

    let scale = if cfg.scale_range.1 > cfg.scale_range.0 {
        rng.gen_range(cfg.scale_range.0..cfg.scale_range.1)
    } else {
        cfg.scale_range.0
    };
    let shift_mag = if cfg.max_shift_frac > 0.0 {
        rng.gen_range(0.0..cfg.max_shift_frac)
    } else {
        0.0
    };
    let shift_dir = rng.gen_range(0.0..std::f32::consts::TAU);
    let shift = (shift_mag * w as f32 * shift_dir.cos(), shift_mag * h as f32 * shift_dir.sin());

    if scale == 1.0 && shift == (0.0, 0.0) {
        return morphed;
    }

    // Inverse-map with nearest-neighbor sampling so the mask stays binary.
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let sx = cx + (x as f32 - shift.0 - cx) / scale;
            let sy = cy + (y as f32 - shift.1 - cy) / scale;
            let (sx, sy) = (sx.round() as isize, sy.round() as isize);
            if sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h {
                out[[y, x]] = morphed[[sy as usize, sx as usize]];
            }
        }
    }
    out
}

/// Noise model for degrading ground-truth tubes into tracker-like boxes.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxNoiseConfig {
    /// Bounds the per-frame random-walk step to `drift_rate * box diagonal`,
    /// and the per-frame scale jitter to `[1 - drift_rate, 1 + drift_rate]`.
    pub drift_rate: f32,
    /// Probability that a frame's box disappears entirely.
    pub dropout: f64,
}

impl Default for BoxNoiseConfig {
    fn default() -> Self {
        BoxNoiseConfig { drift_rate: 0.05, dropout: 0.02 }
    }
}

/// Corrupt a box tube: per instance, a random-walk offset accumulates over
/// frames (each step bounded by `drift_rate` times the box diagonal), each
/// frame's box gets an independent scale jitter, and boxes drop out with
/// probability `dropout`. Boxes are clamped to the image; boxes that leave
/// it entirely become absent.
pub fn box_noise(
    tubes: &BoxTube,
    h: usize,
    w: usize,
    cfg: &BoxNoiseConfig,
    rng: &mut impl Rng,
) -> Result<BoxTube> {
    ensure(cfg.drift_rate >= 0.0, || format!("negative drift rate {}", cfg.drift_rate))?;
    ensure((0.0..=1.0).contains(&cfg.dropout), || {
        format!("dropout {} outside [0, 1]", cfg.dropout)
    })?;

    let t = tubes.frame_count();
    let m = tubes.instance_count();
    let mut frames = vec![Vec::with_capacity(m); t];

    for k in 0..m {
        let mut offset = (0.0f32, 0.0f32);
        for (ti, frame) in frames.iter_mut().enumerate() {
            let noisy = match tubes.boxes_at(ti)?[k] {
                None => None,
                Some(b) => {
                    let step_cap = cfg.drift_rate * b.diagonal();
                    if step_cap > 0.0 {
                        let mag = rng.gen_range(0.0..step_cap);
                        let dir = rng.gen_range(0.0..std::f32::consts::TAU);
                        offset.0 += mag * dir.cos();
                        offset.1 += mag * dir.sin();
                    }
                    let scale = if cfg.drift_rate > 0.0 {
                        rng.gen_range(1.0 - cfg.drift_rate..1.0 + cfg.drift_rate)
                    } else {
                        1.0
                    };
                    let dropped = cfg.dropout > 0.0 && rng.gen_bool(cfg.dropout);
                    if dropped {
                        None
                    } else {
                        let (cx, cy) = b.center();
                        let (hw, hh) = (0.5 * b.width() * scale, 0.5 * b.height() * scale);
                        let x0 = (cx + offset.0 - hw).clamp(0.0, w as f32);
                        let x1 = (cx + offset.0 + hw).clamp(0.0, w as f32);
                        let y0 = (cy + offset.1 - hh).clamp(0.0, h as f32);
                        let y1 = (cy + offset.1 + hh).clamp(0.0, h as f32);
                        if x1 - x0 < 1.0 || y1 - y0 < 1.0 {
                            None
                        } else {
                            Some(Box2D::new(x0, y0, x1, y1)?)
                        }
                    }
                }
            };
            frame.push(noisy);
        }
    }
    BoxTube::new(frames)
}

// ---------------------------------------------------------------------------
// Instance shuffle
// ---------------------------------------------------------------------------

/// Apply one random channel permutation jointly to LTA, STA, and targets,
/// so instance identity is never tied to a fixed channel index. Returns the
/// permutation: output channel `i` took input channel `perm[i]`.
pub fn instance_shuffle(
    lta: &mut Array3<f32>,
    sta: &mut Array3<f32>,
    targets: &mut Array3<f32>,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    let n = lta.dim().0;
    ensure(sta.dim() == lta.dim() && targets.dim() == lta.dim(), || {
        format!(
            "instance_shuffle: shapes differ (lta {:?}, sta {:?}, targets {:?})",
            lta.dim(),
            sta.dim(),
            targets.dim()
        )
    })?;

    // Fisher-Yates.
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        perm.swap(i, j);
    }

    for tensor in [lta, sta, targets] {
        permute_channels(tensor, &perm);
    }
    Ok(perm)
}

/// Reorder channels so output channel `i` takes input channel `perm[i]`.
/// Lets one permutation be applied consistently across the frames of a
/// training window.
pub fn permute_channels(tensor: &mut Array3<f32>, perm: &[usize]) {
    let original = tensor.clone();
    for (dst, &src) in perm.iter().enumerate() {
        tensor
            .index_axis_mut(Axis(0), dst)
            .assign(&original.index_axis(Axis(0), src));
    }
}

// ---------------------------------------------------------------------------
// Input assembly
// ---------------------------------------------------------------------------

/// One network input: `(6 + 2N, H, W)` as `[RGB | flow | LTA | STA]`.
#[derive(Debug, Clone)]
pub struct ModelInput {
    pub tensor: Array3<f32>,
    /// Attention channels per cue group (the model's instance capacity N).
    pub capacity: usize,
}

/// Stack a frame and its cues into the network input tensor.
pub fn assemble_input(
    frame: &Frame,
    flow: &Array3<f32>,
    lta: &Array3<f32>,
    sta: &Array3<f32>,
) -> Result<ModelInput> {
    let (h, w) = (frame.height(), frame.width());
    let n = lta.dim().0;
    ensure(flow.dim() == (3, h, w), || {
        format!("flow channels {:?} do not match frame {w}x{h}", flow.dim())
    })?;
    ensure(lta.dim() == (n, h, w) && sta.dim() == (n, h, w), || {
        format!("attention shapes differ: lta {:?}, sta {:?}", lta.dim(), sta.dim())
    })?;

    let mut tensor = Array3::zeros((6 + 2 * n, h, w));
    tensor.slice_mut(ndarray::s![0..3, .., ..]).assign(frame.pixels());
    tensor.slice_mut(ndarray::s![3..6, .., ..]).assign(flow);
    tensor.slice_mut(ndarray::s![6..6 + n, .., ..]).assign(lta);
    tensor.slice_mut(ndarray::s![6 + n..6 + 2 * n, .., ..]).assign(sta);
    Ok(ModelInput { tensor, capacity: n })
}

/// Which cue groups the model actually receives. Disabled groups are
/// zero-filled rather than removed, so the channel layout and architecture
/// stay fixed across ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CueConfig {
    pub use_flow: bool,
    pub use_lta: bool,
    pub use_sta: bool,
    pub flow_mode: FlowMode,
}

impl Default for CueConfig {
    fn default() -> Self {
        CueConfig { use_flow: true, use_lta: true, use_sta: true, flow_mode: FlowMode::Unit }
    }
}

impl CueConfig {
    /// Zero the disabled cue groups of an assembled input, in place.
    pub fn mask_input(&self, input: &mut ModelInput) {
        let n = input.capacity;
        if !self.use_flow {
            input.tensor.slice_mut(ndarray::s![3..6, .., ..]).fill(0.0);
        }
        if !self.use_lta {
            input.tensor.slice_mut(ndarray::s![6..6 + n, .., ..]).fill(0.0);
        }
        if !self.use_sta {
            input.tensor.slice_mut(ndarray::s![6 + n..6 + 2 * n, .., ..]).fill(0.0);
        }
    }
}
