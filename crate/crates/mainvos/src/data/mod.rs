//! Core domain types: frames, per-instance masks, flow fields, box tubes,
//! and whole video sequences.
//!
//! Conventions used everywhere downstream:
//!
//! * Tensors are channel-first: `(C, H, W)`. Pixel `(x, y)` lives at
//!   `[c, y, x]`.
//! * Frame pixels are `f32` in `[0, 1]`.
//! * A mask set holds one channel per instance; instance id `k` (1-based,
//!   as stored in indexed PNGs) occupies channel `k - 1`. Binary mask sets
//!   must be pairwise disjoint so they can round-trip through an index map.
//! * Flow vectors are `(dx, dy)` in pixels, stored as two channels `[u, v]`.
//!   `flows_fwd[t]` maps frame `t` onto `t + 1`; `flows_bwd[t]` maps frame
//!   `t + 1` back onto `t`.
//! * Boxes are half-open pixel rectangles `[x0, x1) × [y0, y1)`.

mod flo;
pub mod store;

pub use flo::{read_flo, write_flo};
pub use store::{
    load_mask_dir, load_sequence, load_split, save_masks, save_sequence, save_split, SplitFile,
};

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

// ---------------------------------------------------------------------------
// Frames
// ---------------------------------------------------------------------------

/// One RGB video frame, channel-first `(3, H, W)`, values in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Frame {
    pixels: Array3<f32>,
    index: usize,
}

impl Frame {
    pub fn new(pixels: Array3<f32>, index: usize) -> Result<Self> {
        let (c, h, w) = pixels.dim();
        ensure(c == 3, || format!("frame must have 3 channels, got {c}"))?;
        ensure(h > 0 && w > 0, || format!("frame has empty dims {h}x{w}"))?;
        Ok(Frame { pixels, index })
    }

    pub fn pixels(&self) -> &Array3<f32> {
        &self.pixels
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().2
    }
}

// ---------------------------------------------------------------------------
// Instance masks
// ---------------------------------------------------------------------------

/// Per-instance mask channels `(C, H, W)` with `active_count <= C` live
/// instances. Values may be soft (probabilities) or binary `{0, 1}`; all
/// channels past `active_count` must be empty.
#[derive(Debug, Clone)]
pub struct InstanceMaskSet {
    masks: Array3<f32>,
    active_count: usize,
}

impl InstanceMaskSet {
    pub fn new(masks: Array3<f32>, active_count: usize) -> Result<Self> {
        let (c, h, w) = masks.dim();
        ensure(h > 0 && w > 0, || format!("mask set has empty dims {h}x{w}"))?;
        ensure(active_count <= c, || {
            format!("active_count {active_count} exceeds channel count {c}")
        })?;
        for k in active_count..c {
            let ch = masks.index_axis(Axis(0), k);
            ensure(ch.iter().all(|&v| v == 0.0), || {
                format!("inactive channel {k} is not empty")
            })?;
        }
        Ok(InstanceMaskSet { masks, active_count })
    }

    /// All-zero mask set (no instance claims any pixel).
    pub fn empty(channels: usize, active_count: usize, h: usize, w: usize) -> Result<Self> {
        Self::new(Array3::zeros((channels, h, w)), active_count)
    }

    /// Build from an indexed map: pixel value `k > 0` becomes channel
    /// `k - 1`. Values above `active_count` are rejected.
    pub fn from_index_map(map: &Array2<u8>, active_count: usize) -> Result<Self> {
        let (h, w) = map.dim();
        ensure(active_count > 0, || "index map needs at least one instance".into())?;
        let mut masks = Array3::zeros((active_count, h, w));
        for ((y, x), &v) in map.indexed_iter() {
            if v == 0 {
                continue;
            }
            let k = v as usize;
            ensure(k <= active_count, || {
                format!("mask value {k} exceeds instance count {active_count}")
            })?;
            masks[[k - 1, y, x]] = 1.0;
        }
        Self::new(masks, active_count)
    }

    /// Collapse binary disjoint channels back into an indexed map
    /// (background 0, instance `k` at value `k`).
    pub fn to_index_map(&self) -> Result<Array2<u8>> {
        ensure(self.is_binary(), || "only binary mask sets round-trip to index maps".into())?;
        let (_, h, w) = self.masks.dim();
        let mut map = Array2::<u8>::zeros((h, w));
        for k in 0..self.active_count {
            let ch = self.masks.index_axis(Axis(0), k);
            for ((y, x), &v) in ch.indexed_iter() {
                if v > 0.5 {
                    ensure(map[[y, x]] == 0, || {
                        format!(
                            "channels {} and {} overlap at ({x}, {y})",
                            map[[y, x]] - 1,
                            k
                        )
                    })?;
                    map[[y, x]] = (k + 1) as u8;
                }
            }
        }
        Ok(map)
    }

    pub fn masks(&self) -> &Array3<f32> {
        &self.masks
    }

    pub fn channel(&self, k: usize) -> ArrayView2<'_, f32> {
        self.masks.index_axis(Axis(0), k)
    }

    pub fn active_count(&self) -> usize {
        self.active_count
    }

    pub fn channel_count(&self) -> usize {
        self.masks.dim().0
    }

    pub fn height(&self) -> usize {
        self.masks.dim().1
    }

    pub fn width(&self) -> usize {
        self.masks.dim().2
    }

    pub fn is_binary(&self) -> bool {
        self.masks.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Does channel `k` claim any pixel?
    pub fn channel_nonempty(&self, k: usize) -> bool {
        self.channel(k).iter().any(|&v| v > 0.5)
    }

    /// Same masks, widened (or narrowed, if all dropped channels are empty)
    /// to exactly `channels` channels.
    pub fn resized_channels(&self, channels: usize) -> Result<Self> {
        let (c, h, w) = self.masks.dim();
        ensure(channels >= self.active_count, || {
            format!(
                "cannot shrink to {channels} channels with {} active instances",
                self.active_count
            )
        })?;
        let mut masks = Array3::zeros((channels, h, w));
        let keep = c.min(channels);
        masks
            .slice_mut(ndarray::s![..keep, .., ..])
            .assign(&self.masks.slice(ndarray::s![..keep, .., ..]));
        Self::new(masks, self.active_count)
    }
}

// ---------------------------------------------------------------------------
// Optical flow
// ---------------------------------------------------------------------------

/// Which way a flow field points in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowDirection {
    /// Displacement from frame `t` to frame `t + 1`.
    Forward,
    /// Displacement from frame `t + 1` back to frame `t`.
    Backward,
}

/// Dense flow field `(2, H, W)`: channel 0 is `dx`, channel 1 is `dy`.
#[derive(Debug, Clone)]
pub struct FlowField {
    vectors: Array3<f32>,
    direction: FlowDirection,
}

impl FlowField {
    pub fn new(vectors: Array3<f32>, direction: FlowDirection) -> Result<Self> {
        let (c, h, w) = vectors.dim();
        ensure(c == 2, || format!("flow field must have 2 channels, got {c}"))?;
        ensure(h > 0 && w > 0, || format!("flow field has empty dims {h}x{w}"))?;
        Ok(FlowField { vectors, direction })
    }

    pub fn vectors(&self) -> &Array3<f32> {
        &self.vectors
    }

    pub fn direction(&self) -> FlowDirection {
        self.direction
    }

    pub fn height(&self) -> usize {
        self.vectors.dim().1
    }

    pub fn width(&self) -> usize {
        self.vectors.dim().2
    }

    pub fn dx(&self) -> ArrayView2<'_, f32> {
        self.vectors.index_axis(Axis(0), 0)
    }

    pub fn dy(&self) -> ArrayView2<'_, f32> {
        self.vectors.index_axis(Axis(0), 1)
    }
}

// ---------------------------------------------------------------------------
// Boxes and tubes
// ---------------------------------------------------------------------------

/// Half-open axis-aligned box `[x0, x1) × [y0, y1)` in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub x0: f32,
    pub y0: f32,
    pub x1: f32,
    pub y1: f32,
}

impl Box2D {
    pub fn new(x0: f32, y0: f32, x1: f32, y1: f32) -> Result<Self> {
        ensure(x0 <= x1 && y0 <= y1, || {
            format!("degenerate box ({x0}, {y0}, {x1}, {y1})")
        })?;
        ensure(
            [x0, y0, x1, y1].iter().all(|v| v.is_finite()),
            || format!("non-finite box ({x0}, {y0}, {x1}, {y1})"),
        )?;
        Ok(Box2D { x0, y0, x1, y1 })
    }

    /// Tight box around all pixels with value > 0.5; `None` if the mask is
    /// empty.
    pub fn from_mask(mask: &ArrayView2<'_, f32>) -> Option<Box2D> {
        let mut bounds: Option<(usize, usize, usize, usize)> = None;
        for ((y, x), &v) in mask.indexed_iter() {
            if v > 0.5 {
                bounds = Some(match bounds {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
        bounds.map(|(x0, y0, x1, y1)| Box2D {
            x0: x0 as f32,
            y0: y0 as f32,
            x1: (x1 + 1) as f32,
            y1: (y1 + 1) as f32,
        })
    }

    pub fn width(&self) -> f32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f32 {
        self.y1 - self.y0
    }

    pub fn diagonal(&self) -> f32 {
        self.width().hypot(self.height())
    }

    pub fn center(&self) -> (f32, f32) {
        (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }
}

/// Per-frame, per-instance boxes for one sequence; `None` marks an instance
/// absent from a frame (fully occluded, out of view, or dropped by noise).
#[derive(Debug, Clone, Default)]
pub struct BoxTube {
    frames: Vec<Vec<Option<Box2D>>>,
}

impl BoxTube {
    pub fn new(frames: Vec<Vec<Option<Box2D>>>) -> Result<Self> {
        if let Some(first) = frames.first() {
            let m = first.len();
            ensure(frames.iter().all(|f| f.len() == m), || {
                "all frames of a tube must list the same instances".into()
            })?;
        }
        Ok(BoxTube { frames })
    }

    /// Tight boxes around every ground-truth mask channel.
    pub fn from_masks(masks: &[InstanceMaskSet]) -> Self {
        let frames = masks
            .iter()
            .map(|set| {
                (0..set.active_count())
                    .map(|k| Box2D::from_mask(&set.channel(k)))
                    .collect()
            })
            .collect();
        BoxTube { frames }
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn instance_count(&self) -> usize {
        self.frames.first().map_or(0, |f| f.len())
    }

    pub fn boxes_at(&self, t: usize) -> Result<&[Option<Box2D>]> {
        self.frames
            .get(t)
            .map(|f| f.as_slice())
            .ok_or_else(|| Error::validation(format!("tube has no frame {t}")))
    }

    pub fn frames(&self) -> &[Vec<Option<Box2D>>] {
        &self.frames
    }

    /// Check every box against the image bounds.
    pub fn validate_bounds(&self, h: usize, w: usize) -> Result<()> {
        for (t, frame) in self.frames.iter().enumerate() {
            for (k, b) in frame.iter().enumerate() {
                if let Some(b) = b {
                    ensure(
                        b.x0 >= 0.0 && b.y0 >= 0.0 && b.x1 <= w as f32 && b.y1 <= h as f32,
                        || format!("box for instance {k} at frame {t} leaves the {w}x{h} image"),
                    )?;
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Sequence metadata
// ---------------------------------------------------------------------------

/// Sidecar metadata stored as `meta.json` next to a sequence.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SequenceMeta {
    pub id: String,
    pub frame_count: usize,
    pub instance_count: usize,
    pub height: usize,
    pub width: usize,
    /// Shape category per instance, index `k` describing instance `k + 1`.
    pub categories: Vec<String>,
}

// ---------------------------------------------------------------------------
// Video sequences
// ---------------------------------------------------------------------------

/// A full annotated sequence: frames, ground-truth masks, both flow
/// directions, box tubes, and instance categories.
#[derive(Debug, Clone)]
pub struct VideoSequence {
    pub id: String,
    pub frames: Vec<Frame>,
    pub gt_masks: Vec<InstanceMaskSet>,
    pub flows_fwd: Vec<FlowField>,
    pub flows_bwd: Vec<FlowField>,
    pub tubes: BoxTube,
    pub categories: Vec<String>,
}

impl VideoSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn instance_count(&self) -> usize {
        self.gt_masks.first().map_or(0, |m| m.active_count())
    }

    pub fn height(&self) -> usize {
        self.frames.first().map_or(0, |f| f.height())
    }

    pub fn width(&self) -> usize {
        self.frames.first().map_or(0, |f| f.width())
    }

    pub fn meta(&self) -> SequenceMeta {
        SequenceMeta {
            id: self.id.clone(),
            frame_count: self.len(),
            instance_count: self.instance_count(),
            height: self.height(),
            width: self.width(),
            categories: self.categories.clone(),
        }
    }

    /// Structural invariants every sequence must satisfy before use.
    pub fn validate(&self) -> Result<()> {
        let t = self.frames.len();
        ensure(t >= 2, || format!("sequence {} needs at least 2 frames, has {t}", self.id))?;
        ensure(self.gt_masks.len() == t, || {
            format!("sequence {}: {} mask sets for {t} frames", self.id, self.gt_masks.len())
        })?;
        ensure(
            self.flows_fwd.len() == t - 1 && self.flows_bwd.len() == t - 1,
            || {
                format!(
                    "sequence {}: flow counts fwd={} bwd={} for {t} frames",
                    self.id,
                    self.flows_fwd.len(),
                    self.flows_bwd.len()
                )
            },
        )?;
        ensure(self.tubes.frame_count() == t, || {
            format!("sequence {}: tube covers {} frames of {t}", self.id, self.tubes.frame_count())
        })?;
        let (h, w) = (self.height(), self.width());
        for f in &self.frames {
            ensure(f.height() == h && f.width() == w, || {
                format!("sequence {}: frame {} changes resolution", self.id, f.index())
            })?;
        }
        let m = self.instance_count();
        ensure(self.categories.len() == m, || {
            format!("sequence {}: {} categories for {m} instances", self.id, self.categories.len())
        })?;
        ensure(self.tubes.instance_count() == m, || {
            format!("sequence {}: tube tracks {} instances of {m}", self.id, self.tubes.instance_count())
        })?;
        for (i, set) in self.gt_masks.iter().enumerate() {
            ensure(set.height() == h && set.width() == w, || {
                format!("sequence {}: mask set {i} has wrong resolution", self.id)
            })?;
            ensure(set.active_count() == m, || {
                format!("sequence {}: mask set {i} changes instance count", self.id)
            })?;
            ensure(set.is_binary(), || {
                format!("sequence {}: ground-truth masks at frame {i} are not binary", self.id)
            })?;
        }
        for (i, fl) in self.flows_fwd.iter().chain(self.flows_bwd.iter()).enumerate() {
            ensure(fl.height() == h && fl.width() == w, || {
                format!("sequence {}: flow field {i} has wrong resolution", self.id)
            })?;
        }
        // One-shot protocol: every instance must be visible in frame 0,
        // because inference is seeded with the first ground-truth mask.
        for k in 0..m {
            ensure(self.gt_masks[0].channel_nonempty(k), || {
                format!("sequence {}: instance {} invisible in frame 0", self.id, k + 1)
            })?;
        }
        self.tubes.validate_bounds(h, w)?;
        Ok(())
    }

    /// Prefix of the sequence covering frames `0..t_len`. Used to check that
    /// causal inference on a prefix matches inference on the full video.
    pub fn truncated(&self, t_len: usize) -> Result<VideoSequence> {
        ensure(t_len >= 2 && t_len <= self.len(), || {
            format!("cannot truncate {}-frame sequence to {t_len}", self.len())
        })?;
        Ok(VideoSequence {
            id: self.id.clone(),
            frames: self.frames[..t_len].to_vec(),
            gt_masks: self.gt_masks[..t_len].to_vec(),
            flows_fwd: self.flows_fwd[..t_len - 1].to_vec(),
            flows_bwd: self.flows_bwd[..t_len - 1].to_vec(),
            tubes: BoxTube::new(self.tubes.frames()[..t_len].to_vec())?,
            categories: self.categories.clone(),
        })
    }

    /// Decompose into one derived sequence per live instance, each keeping
    /// only that instance's masks, boxes, and category (frames and flow are
    /// shared). This is the "one pass per instance" protocol that joint
    /// multi-channel segmentation is compared against.
    pub fn single_instance_views(&self) -> Result<Vec<VideoSequence>> {
        let m = self.instance_count();
        let mut views = Vec::with_capacity(m);
        for k in 0..m {
            let gt_masks = self
                .gt_masks
                .iter()
                .map(|set| {
                    let ch = set.channel(k).to_owned().insert_axis(Axis(0));
                    InstanceMaskSet::new(ch, 1)
                })
                .collect::<Result<Vec<_>>>()?;
            let tubes =
                BoxTube::new(self.tubes.frames().iter().map(|f| vec![f[k]]).collect())?;
            views.push(VideoSequence {
                id: format!("{}#{}", self.id, k + 1),
                frames: self.frames.clone(),
                gt_masks,
                flows_fwd: self.flows_fwd.clone(),
                flows_bwd: self.flows_bwd.clone(),
                tubes,
                categories: vec![self.categories[k].clone()],
            });
        }
        Ok(views)
    }
}
