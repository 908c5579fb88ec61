//! Synthetic moving-shapes video generator.
//!
//! Each scene is a handful of textured rigid shapes translating (with wall
//! bounces), rotating, and scaling over a drifting striped background,
//! optionally occluded by one untracked shape drawn on top. Because every
//! pixel's owner follows a closed-form affine motion, the generator emits
//! *exact* forward and backward flow fields alongside frames, masks, and box
//! tubes — so cue computations can be tested against ground truth instead of
//! against an estimated flow.
//!
//! Scenes are pure functions of their [`SceneSpec`]: the same spec (seed
//! included) always yields bit-identical sequences, which keeps dataset
//! regeneration and checkpoint-resume experiments reproducible.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{BoxTube, FlowDirection, FlowField, Frame, InstanceMaskSet, VideoSequence};
use crate::error::{ensure, Error, Result};

// ---------------------------------------------------------------------------
// Specs
// ---------------------------------------------------------------------------

/// Shape categories. `Star` and `Ring` default to the held-out ("unseen")
/// half of the catalog used by generalization splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Circle,
    Ellipse,
    Square,
    Triangle,
    Pentagon,
    Cross,
    Star,
    Ring,
}

impl ShapeKind {
    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Ellipse => "ellipse",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
            ShapeKind::Pentagon => "pentagon",
            ShapeKind::Cross => "cross",
            ShapeKind::Star => "star",
            ShapeKind::Ring => "ring",
        }
    }

    pub fn default_seen() -> Vec<ShapeKind> {
        vec![
            ShapeKind::Circle,
            ShapeKind::Ellipse,
            ShapeKind::Square,
            ShapeKind::Triangle,
            ShapeKind::Pentagon,
            ShapeKind::Cross,
        ]
    }

    pub fn default_unseen() -> Vec<ShapeKind> {
        vec![ShapeKind::Star, ShapeKind::Ring]
    }
}

/// Per-scene motion parameter ranges. All motion is sampled per instance
/// from these bounds; camera pan is sampled once per scene and moves the
/// background only.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MotionRanges {
    /// Translation speed range in px/frame (direction uniform).
    pub speed: (f32, f32),
    /// Per-frame rotation bound in radians; sampled uniform in `[-m, m]`.
    pub max_rotation: f32,
    /// Per-frame relative scale-change bound; sampled uniform in `[-m, m]`.
    pub max_scale_rate: f32,
    /// Per-axis background drift bound in px/frame.
    pub max_camera_pan: f32,
    /// Snap instance velocities to whole pixels (pixel-exact motion, useful
    /// for warp oracles).
    pub integer_velocities: bool,
}

impl Default for MotionRanges {
    fn default() -> Self {
        MotionRanges {
            speed: (0.5, 3.0),
            max_rotation: 0.08,
            max_scale_rate: 0.02,
            max_camera_pan: 1.0,
            integer_velocities: false,
        }
    }
}

impl MotionRanges {
    /// Pure translation with pixel-exact velocities: warped masks align
    /// exactly with the next frame's ground truth.
    pub fn translation_only(speed: (f32, f32)) -> Self {
        MotionRanges {
            speed,
            max_rotation: 0.0,
            max_scale_rate: 0.0,
            max_camera_pan: 0.0,
            integer_velocities: true,
        }
    }
}

/// Everything needed to synthesize one scene deterministically.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub id: String,
    pub seed: u64,
    pub frame_count: usize,
    pub height: usize,
    pub width: usize,
    /// Mask channels the downstream model reserves; scenes must not sample
    /// more instances than this.
    pub channel_capacity: usize,
    /// Probability weights for drawing 1, 2, ... instances. The default
    /// skews heavily toward one or two instances (sample mean 1.71).
    pub instance_count_weights: Vec<f64>,
    pub shape_catalog: Vec<ShapeKind>,
    pub motion: MotionRanges,
    /// Chance that one untracked occluder shape is drawn on top.
    pub occluder_probability: f64,
    /// Shape radius bounds as fractions of `min(H, W)`.
    pub radius_range: (f32, f32),
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            id: "scene".into(),
            seed: 0,
            frame_count: 16,
            height: 64,
            width: 96,
            channel_capacity: 6,
            instance_count_weights: default_instance_count_weights(),
            shape_catalog: ShapeKind::default_seen(),
            motion: MotionRanges::default(),
            occluder_probability: 0.25,
            radius_range: (0.12, 0.26),
        }
    }
}

/// Instance-count weights matching the footprint of the real-video
/// benchmark this generator stands in for: mean 1.71, std 0.87, mode 1.
pub fn default_instance_count_weights() -> Vec<f64> {
    vec![0.478, 0.395, 0.085, 0.027, 0.010, 0.005]
}

/// Draw an instance count (1-based) from probability weights.
pub fn sample_instance_count(weights: &[f64], rng: &mut impl Rng) -> Result<usize> {
    validate_weights(weights)?;
    let total: f64 = weights.iter().sum();
    let mut r = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        r -= w;
        if r < 0.0 {
            return Ok(i + 1);
        }
    }
    Ok(weights.len())
}

fn validate_weights(weights: &[f64]) -> Result<()> {
    ensure(!weights.is_empty(), || "instance count weights are empty".into())?;
    ensure(weights.iter().all(|&w| w >= 0.0 && w.is_finite()), || {
        "instance count weights must be finite and non-negative".into()
    })?;
    ensure(weights.iter().sum::<f64>() > 0.0, || {
        "instance count weights sum to zero".into()
    })
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        ensure(self.frame_count >= 2, || {
            format!("scene needs at least 2 frames, spec asks for {}", self.frame_count)
        })?;
        ensure(self.height >= 16 && self.width >= 16, || {
            format!("scene resolution {}x{} is too small", self.width, self.height)
        })?;
        validate_weights(&self.instance_count_weights)?;
        ensure(
            self.instance_count_weights.len() <= self.channel_capacity,
            || {
                format!(
                    "spec can sample up to {} instances but only {} mask channels are available",
                    self.instance_count_weights.len(),
                    self.channel_capacity
                )
            },
        )?;
        ensure(!self.shape_catalog.is_empty(), || "shape catalog is empty".into())?;
        ensure(
            self.radius_range.0 > 0.0 && self.radius_range.0 <= self.radius_range.1,
            || format!("bad radius range {:?}", self.radius_range),
        )?;
        ensure(self.motion.speed.0 >= 0.0 && self.motion.speed.0 <= self.motion.speed.1, || {
            format!("bad speed range {:?}", self.motion.speed)
        })?;
        ensure(
            (0.0..=1.0).contains(&self.occluder_probability),
            || format!("occluder probability {} outside [0, 1]", self.occluder_probability),
        )?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

/// Plan for a whole dataset: a template scene plus counts.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    /// Template for every scene; `id` and `seed` are overwritten per scene.
    pub scene: SceneSpec,
    /// Scenes split between train and val_seen.
    pub scene_count: usize,
    /// Fraction of `scene_count` that goes to training.
    pub train_fraction: f64,
    /// Catalog for the held-out split; must not overlap the template's.
    pub unseen_catalog: Vec<ShapeKind>,
    /// Scenes generated purely from the unseen catalog.
    pub val_unseen_count: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            scene: SceneSpec::default(),
            scene_count: 48,
            train_fraction: 0.75,
            unseen_catalog: ShapeKind::default_unseen(),
            val_unseen_count: 8,
        }
    }
}

/// Scene specs per split. Seeds are disjoint across splits by construction.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SplitPlan {
    pub train: Vec<SceneSpec>,
    pub val_seen: Vec<SceneSpec>,
    pub val_unseen: Vec<SceneSpec>,
}

/// Materialized splits, ready for training and evaluation.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub train: Vec<VideoSequence>,
    pub val_seen: Vec<VideoSequence>,
    pub val_unseen: Vec<VideoSequence>,
}

/// Derive per-scene specs for all three splits.
pub fn generate_split(spec: &DatasetSpec) -> Result<SplitPlan> {
    spec.scene.validate()?;
    ensure(spec.scene_count >= 2, || "need at least 2 scenes to split".into())?;
    ensure(
        (0.0..=1.0).contains(&spec.train_fraction),
        || format!("train fraction {} outside [0, 1]", spec.train_fraction),
    )?;
    ensure(!spec.unseen_catalog.is_empty(), || "unseen catalog is empty".into())?;
    for kind in &spec.unseen_catalog {
        ensure(!spec.scene.shape_catalog.contains(kind), || {
            format!("category {:?} appears in both seen and unseen catalogs", kind)
        })?;
    }

    let train_count = ((spec.scene_count as f64) * spec.train_fraction).round() as usize;
    let train_count = train_count.clamp(1, spec.scene_count - 1);

    let make = |prefix: &str, offset: u64, index: usize, catalog: Option<&Vec<ShapeKind>>| {
        let mut s = spec.scene.clone();
        s.id = format!("{prefix}_{index:04}");
        s.seed = spec.scene.seed.wrapping_add(offset).wrapping_add(index as u64);
        if let Some(c) = catalog {
            s.shape_catalog = c.clone();
        }
        s
    };

    Ok(SplitPlan {
        train: (0..train_count).map(|i| make("train", 0, i, None)).collect(),
        val_seen: (0..spec.scene_count - train_count)
            .map(|i| make("val_seen", 1_000_000, i, None))
            .collect(),
        val_unseen: (0..spec.val_unseen_count)
            .map(|i| make("val_unseen", 2_000_000, i, Some(&spec.unseen_catalog)))
            .collect(),
    })
}

impl SplitPlan {
    /// Generate every scene of every split.
    pub fn materialize(&self) -> Result<SplitData> {
        Ok(SplitData {
            train: self.train.iter().map(generate_scene).collect::<Result<_>>()?,
            val_seen: self.val_seen.iter().map(generate_scene).collect::<Result<_>>()?,
            val_unseen: self.val_unseen.iter().map(generate_scene).collect::<Result<_>>()?,
        })
    }
}

// ---------------------------------------------------------------------------
// Scene internals
// ---------------------------------------------------------------------------

/// Pose of a rigid object at one frame.
#[derive(Debug, Clone, Copy)]
struct Pose {
    cx: f32,
    cy: f32,
    angle: f32,
    scale: f32,
}

/// One moving textured shape (tracked instance or untracked occluder).
struct Actor {
    kind: ShapeKind,
    radius: f32,
    aspect: f32,
    poses: Vec<Pose>,
    color_a: [f32; 3],
    color_b: [f32; 3],
    stripe_freq: f32,
    stripe_dir: f32,
    stripe_phase: f32,
}

impl Actor {
    /// Shape-local coordinates of world point `(x, y)` at frame `t`,
    /// normalized so the outline fits the unit disk.
    fn local(&self, t: usize, x: f32, y: f32) -> (f32, f32) {
        let p = self.poses[t];
        let dx = x - p.cx;
        let dy = y - p.cy;
        let (s, c) = (-p.angle).sin_cos();
        let r = p.scale * self.radius;
        ((c * dx - s * dy) / r, (s * dx + c * dy) / r)
    }

    fn covers(&self, t: usize, x: f32, y: f32) -> bool {
        let (u, v) = self.local(t, x, y);
        if u * u + v * v > 1.0 + 1e-6 {
            return false; // every outline fits the unit disk
        }
        shape_inside(self.kind, u, v, self.aspect)
    }

    fn color(&self, t: usize, x: f32, y: f32) -> [f32; 3] {
        let (u, v) = self.local(t, x, y);
        let (s, c) = self.stripe_dir.sin_cos();
        let wave = (self.stripe_freq * (u * c + v * s) + self.stripe_phase).sin();
        let mix = 0.5 + 0.5 * wave;
        [
            self.color_a[0] + mix * (self.color_b[0] - self.color_a[0]),
            self.color_a[1] + mix * (self.color_b[1] - self.color_a[1]),
            self.color_a[2] + mix * (self.color_b[2] - self.color_a[2]),
        ]
    }

    /// Where does the surface point at `(x, y)` in frame `t` sit in frame
    /// `t + 1`?
    fn displace_forward(&self, t: usize, x: f32, y: f32) -> (f32, f32) {
        let a = self.poses[t];
        let b = self.poses[t + 1];
        let (s, c) = (b.angle - a.angle).sin_cos();
        let g = b.scale / a.scale;
        let dx = x - a.cx;
        let dy = y - a.cy;
        let nx = b.cx + g * (c * dx - s * dy);
        let ny = b.cy + g * (s * dx + c * dy);
        (nx - x, ny - y)
    }

    /// Where was the surface point at `(x, y)` in frame `t + 1` during frame
    /// `t`?
    fn displace_backward(&self, t: usize, x: f32, y: f32) -> (f32, f32) {
        let a = self.poses[t];
        let b = self.poses[t + 1];
        let (s, c) = (a.angle - b.angle).sin_cos();
        let g = a.scale / b.scale;
        let dx = x - b.cx;
        let dy = y - b.cy;
        let px = a.cx + g * (c * dx - s * dy);
        let py = a.cy + g * (s * dx + c * dy);
        (px - x, py - y)
    }
}

fn shape_inside(kind: ShapeKind, u: f32, v: f32, aspect: f32) -> bool {
    match kind {
        ShapeKind::Circle => u * u + v * v <= 1.0,
        ShapeKind::Ellipse => {
            let b = aspect;
            u * u + (v / b) * (v / b) <= 1.0
        }
        ShapeKind::Square => u.abs() <= 0.75 && v.abs() <= 0.75,
        ShapeKind::Triangle => point_in_polygon(&regular_polygon(3, 1.0), u, v),
        ShapeKind::Pentagon => point_in_polygon(&regular_polygon(5, 1.0), u, v),
        ShapeKind::Cross => {
            (u.abs() <= 0.35 && v.abs() <= 1.0) || (v.abs() <= 0.35 && u.abs() <= 1.0)
        }
        ShapeKind::Star => point_in_polygon(&star_polygon(5, 1.0, 0.45), u, v),
        ShapeKind::Ring => {
            let r2 = u * u + v * v;
            (0.55 * 0.55..=1.0).contains(&r2)
        }
    }
}

fn regular_polygon(sides: usize, radius: f32) -> Vec<(f32, f32)> {
    (0..sides)
        .map(|i| {
            let a = std::f32::consts::TAU * i as f32 / sides as f32 - std::f32::consts::FRAC_PI_2;
            (radius * a.cos(), radius * a.sin())
        })
        .collect()
}

fn star_polygon(points: usize, outer: f32, inner: f32) -> Vec<(f32, f32)> {
    (0..2 * points)
        .map(|i| {
            let a = std::f32::consts::PI * i as f32 / points as f32 - std::f32::consts::FRAC_PI_2;
            let r = if i % 2 == 0 { outer } else { inner };
            (r * a.cos(), r * a.sin())
        })
        .collect()
}

/// Even-odd rule; handles non-convex outlines like the star.
fn point_in_polygon(pts: &[(f32, f32)], u: f32, v: f32) -> bool {
    let mut inside = false;
    let mut j = pts.len() - 1;
    for i in 0..pts.len() {
        let (xi, yi) = pts[i];
        let (xj, yj) = pts[j];
        if (yi > v) != (yj > v) && u < (xj - xi) * (v - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Smooth two-tone sinusoidal background; the pattern drifts with the
/// camera pan so background pixels carry exactly the pan as flow.
struct Background {
    base: [f32; 3],
    amp: [f32; 3],
    freq: (f32, f32),
    phase: (f32, f32),
    pan: (f32, f32),
}

impl Background {
    fn color(&self, t: usize, x: f32, y: f32) -> [f32; 3] {
        let px = x - t as f32 * self.pan.0;
        let py = y - t as f32 * self.pan.1;
        let s = (self.freq.0 * px + self.phase.0).sin() * (self.freq.1 * py + self.phase.1).sin();
        let mix = 0.5 + 0.5 * s;
        [
            (self.base[0] + self.amp[0] * (mix - 0.5)).clamp(0.0, 1.0),
            (self.base[1] + self.amp[1] * (mix - 0.5)).clamp(0.0, 1.0),
            (self.base[2] + self.amp[2] * (mix - 0.5)).clamp(0.0, 1.0),
        ]
    }
}

fn uniform(rng: &mut impl Rng, lo: f32, hi: f32) -> f32 {
    if hi <= lo {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

fn sample_actor(
    rng: &mut ChaCha8Rng,
    spec: &SceneSpec,
    catalog: &[ShapeKind],
) -> Actor {
    let kind = catalog[rng.gen_range(0..catalog.len())];
    let min_side = spec.height.min(spec.width) as f32;
    let radius = uniform(rng, spec.radius_range.0 * min_side, spec.radius_range.1 * min_side);
    let aspect = uniform(rng, 0.45, 0.8);

    let cx0 = uniform(rng, 0.2 * spec.width as f32, 0.8 * spec.width as f32);
    let cy0 = uniform(rng, 0.2 * spec.height as f32, 0.8 * spec.height as f32);
    let angle0 = uniform(rng, 0.0, std::f32::consts::TAU);

    let speed = uniform(rng, spec.motion.speed.0, spec.motion.speed.1);
    let dir = uniform(rng, 0.0, std::f32::consts::TAU);
    let mut vx = speed * dir.cos();
    let mut vy = speed * dir.sin();
    if spec.motion.integer_velocities {
        vx = vx.round();
        vy = vy.round();
    }
    let rot = uniform(rng, -spec.motion.max_rotation, spec.motion.max_rotation);
    let scale_rate = uniform(rng, -spec.motion.max_scale_rate, spec.motion.max_scale_rate);

    // Roll the full pose trajectory now, bouncing centers off the walls so
    // shapes tend to stay in view. Velocity between consecutive poses stays
    // piecewise constant, so flow is still exact.
    let margin = 0.3 * radius;
    let (lo_x, hi_x) = (margin, spec.width as f32 - margin);
    let (lo_y, hi_y) = (margin, spec.height as f32 - margin);
    let mut poses = Vec::with_capacity(spec.frame_count);
    let (mut cx, mut cy, mut angle, mut scale) = (cx0, cy0, angle0, 1.0f32);
    let (mut vx, mut vy) = (vx, vy);
    for _ in 0..spec.frame_count {
        poses.push(Pose { cx, cy, angle, scale });
        cx += vx;
        cy += vy;
        if spec.motion.integer_velocities {
            // Reflect by reversing velocity only: keeps coordinates integral.
            if cx < lo_x || cx > hi_x {
                vx = -vx;
                cx += 2.0 * vx;
            }
            if cy < lo_y || cy > hi_y {
                vy = -vy;
                cy += 2.0 * vy;
            }
        } else {
            if cx < lo_x {
                cx = 2.0 * lo_x - cx;
                vx = -vx;
            } else if cx > hi_x {
                cx = 2.0 * hi_x - cx;
                vx = -vx;
            }
            if cy < lo_y {
                cy = 2.0 * lo_y - cy;
                vy = -vy;
            } else if cy > hi_y {
                cy = 2.0 * hi_y - cy;
                vy = -vy;
            }
        }
        angle += rot;
        scale = (scale * (1.0 + scale_rate)).clamp(0.6, 1.5);
    }

    let color_a = [
        uniform(rng, 0.05, 0.95),
        uniform(rng, 0.05, 0.95),
        uniform(rng, 0.05, 0.95),
    ];
    let color_b = [
        (color_a[0] + 0.5) % 1.0,
        (color_a[1] + 0.5) % 1.0,
        (color_a[2] + 0.5) % 1.0,
    ];

    Actor {
        kind,
        radius,
        aspect,
        poses,
        color_a,
        color_b,
        stripe_freq: uniform(rng, 3.0, 8.0),
        stripe_dir: uniform(rng, 0.0, std::f32::consts::TAU),
        stripe_phase: uniform(rng, 0.0, std::f32::consts::TAU),
    }
}

/// Owner of a pixel: instance index, the occluder, or the background.
#[derive(Clone, Copy, PartialEq)]
enum Owner {
    Background,
    Instance(usize),
    Occluder,
}

/// Generate one scene. Same spec, same bits out.
pub fn generate_scene(spec: &SceneSpec) -> Result<VideoSequence> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let m = sample_instance_count(&spec.instance_count_weights, &mut rng)?;

    let background = Background {
        base: [uniform(&mut rng, 0.3, 0.65), uniform(&mut rng, 0.3, 0.65), uniform(&mut rng, 0.3, 0.65)],
        amp: [uniform(&mut rng, 0.08, 0.2), uniform(&mut rng, 0.08, 0.2), uniform(&mut rng, 0.08, 0.2)],
        freq: (uniform(&mut rng, 0.05, 0.25), uniform(&mut rng, 0.05, 0.25)),
        phase: (uniform(&mut rng, 0.0, std::f32::consts::TAU), uniform(&mut rng, 0.0, std::f32::consts::TAU)),
        pan: (
            uniform(&mut rng, -spec.motion.max_camera_pan, spec.motion.max_camera_pan),
            uniform(&mut rng, -spec.motion.max_camera_pan, spec.motion.max_camera_pan),
        ),
    };
    let wants_occluder = rng.gen_bool(spec.occluder_probability);

    // Resample actor layouts until every tracked instance is visible in
    // frame 0 — the one-shot protocol seeds inference with that mask.
    let mut actors = Vec::new();
    let mut occluder = None;
    let mut placed = false;
    for _attempt in 0..100 {
        actors = (0..m).map(|_| sample_actor(&mut rng, spec, &spec.shape_catalog)).collect();
        occluder = wants_occluder.then(|| sample_actor(&mut rng, spec, &spec.shape_catalog));
        let owners = owner_map(spec, &actors, occluder.as_ref(), 0);
        let visible = |k: usize| owners.iter().filter(|&&o| o == Owner::Instance(k)).count() >= 8;
        if (0..m).all(visible) {
            placed = true;
            break;
        }
    }
    if !placed {
        return Err(Error::runtime(
            "generate_scene",
            format!("scene {}: could not place {} mutually visible instances", spec.id, m),
        ));
    }

    let (h, w) = (spec.height, spec.width);
    let mut frames = Vec::with_capacity(spec.frame_count);
    let mut gt_masks = Vec::with_capacity(spec.frame_count);
    let mut flows_fwd = Vec::new();
    let mut flows_bwd = Vec::new();
    let mut owner_maps = Vec::with_capacity(spec.frame_count);

    for t in 0..spec.frame_count {
        let owners = owner_map(spec, &actors, occluder.as_ref(), t);
        let mut pixels = Array3::zeros((3, h, w));
        let mut index_map = Array2::<u8>::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                let (fx, fy) = (x as f32 + 0.5, y as f32 + 0.5);
                let color = match owners[y * w + x] {
                    Owner::Background => background.color(t, fx, fy),
                    Owner::Instance(k) => {
                        index_map[[y, x]] = (k + 1) as u8;
                        actors[k].color(t, fx, fy)
                    }
                    Owner::Occluder => occluder.as_ref().unwrap().color(t, fx, fy),
                };
                for c in 0..3 {
                    pixels[[c, y, x]] = color[c].clamp(0.0, 1.0);
                }
            }
        }
        frames.push(Frame::new(pixels, t)?);
        gt_masks.push(InstanceMaskSet::from_index_map(&index_map, m)?);
        owner_maps.push(owners);
    }

    for t in 0..spec.frame_count - 1 {
        let mut fwd = Array3::zeros((2, h, w));
        let mut bwd = Array3::zeros((2, h, w));
        for y in 0..h {
            for x in 0..w {
                let (fx, fy) = (x as f32 + 0.5, y as f32 + 0.5);
                let (dx, dy) = match owner_maps[t][y * w + x] {
                    Owner::Background => background.pan,
                    Owner::Instance(k) => actors[k].displace_forward(t, fx, fy),
                    Owner::Occluder => occluder.as_ref().unwrap().displace_forward(t, fx, fy),
                };
                fwd[[0, y, x]] = dx;
                fwd[[1, y, x]] = dy;
                let (dx, dy) = match owner_maps[t + 1][y * w + x] {
                    Owner::Background => (-background.pan.0, -background.pan.1),
                    Owner::Instance(k) => actors[k].displace_backward(t, fx, fy),
                    Owner::Occluder => occluder.as_ref().unwrap().displace_backward(t, fx, fy),
                };
                bwd[[0, y, x]] = dx;
                bwd[[1, y, x]] = dy;
            }
        }
        flows_fwd.push(FlowField::new(fwd, FlowDirection::Forward)?);
        flows_bwd.push(FlowField::new(bwd, FlowDirection::Backward)?);
    }

    let tubes = BoxTube::from_masks(&gt_masks);
    let categories = actors.iter().map(|a| a.kind.name().to_string()).collect();
    let seq = VideoSequence {
        id: spec.id.clone(),
        frames,
        gt_masks,
        flows_fwd,
        flows_bwd,
        tubes,
        categories,
    };
    seq.validate()?;
    Ok(seq)
}

fn owner_map(
    spec: &SceneSpec,
    actors: &[Actor],
    occluder: Option<&Actor>,
    t: usize,
) -> Vec<Owner> {
    let (h, w) = (spec.height, spec.width);
    let mut owners = vec![Owner::Background; h * w];
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f32 + 0.5, y as f32 + 0.5);
            // Later instances draw on top of earlier ones; occluder on top
            // of everything.
            for (k, actor) in actors.iter().enumerate() {
                if actor.covers(t, fx, fy) {
                    owners[y * w + x] = Owner::Instance(k);
                }
            }
            if let Some(occ) = occluder {
                if occ.covers(t, fx, fy) {
                    owners[y * w + x] = Owner::Occluder;
                }
            }
        }
    }
    owners
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec(seed: u64) -> SceneSpec {
        SceneSpec {
            id: format!("tiny_{seed}"),
            seed,
            frame_count: 5,
            height: 32,
            width: 48,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn scenes_are_deterministic() {
        let spec = tiny_spec(11);
        let a = generate_scene(&spec).unwrap();
        let b = generate_scene(&spec).unwrap();
        assert_eq!(a.len(), b.len());
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            for (x, y) in fa.pixels().iter().zip(fb.pixels().iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        for (ma, mb) in a.gt_masks.iter().zip(&b.gt_masks) {
            assert_eq!(ma.to_index_map().unwrap(), mb.to_index_map().unwrap());
        }
        for (pa, pb) in a.flows_fwd.iter().zip(&b.flows_fwd) {
            for (x, y) in pa.vectors().iter().zip(pb.vectors().iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate_scene(&tiny_spec(1)).unwrap();
        let b = generate_scene(&tiny_spec(2)).unwrap();
        let same = a
            .frames[0]
            .pixels()
            .iter()
            .zip(b.frames[0].pixels().iter())
            .all(|(x, y)| x == y);
        assert!(!same);
    }

    #[test]
    fn scene_passes_structural_validation() {
        let seq = generate_scene(&tiny_spec(3)).unwrap();
        assert!(seq.validate().is_ok());
        assert!(seq.instance_count() >= 1);
        assert_eq!(seq.flows_fwd.len(), seq.len() - 1);
    }

    #[test]
    fn more_instances_than_channels_is_rejected() {
        let mut spec = tiny_spec(4);
        spec.instance_count_weights = vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]; // 7 instances
        spec.channel_capacity = 6;
        assert!(generate_scene(&spec).is_err());
    }

    #[test]
    fn instance_count_stats_match_target_distribution() {
        let weights = default_instance_count_weights();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 10_000;
        let draws: Vec<usize> =
            (0..n).map(|_| sample_instance_count(&weights, &mut rng).unwrap()).collect();
        let mean = draws.iter().sum::<usize>() as f64 / n as f64;
        let var = draws.iter().map(|&d| (d as f64 - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 1.71).abs() < 0.05, "mean {mean}");
        assert!((var.sqrt() - 0.87).abs() < 0.05, "std {}", var.sqrt());
        assert!(draws.iter().all(|&d| (1..=6).contains(&d)));
    }

    #[test]
    fn split_seeds_and_catalogs_are_disjoint() {
        let ds = DatasetSpec {
            scene: tiny_spec(7),
            scene_count: 8,
            train_fraction: 0.75,
            unseen_catalog: ShapeKind::default_unseen(),
            val_unseen_count: 3,
        };
        let plan = generate_split(&ds).unwrap();
        assert_eq!(plan.train.len(), 6);
        assert_eq!(plan.val_seen.len(), 2);
        assert_eq!(plan.val_unseen.len(), 3);

        let mut seeds: Vec<u64> = plan
            .train
            .iter()
            .chain(&plan.val_seen)
            .chain(&plan.val_unseen)
            .map(|s| s.seed)
            .collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 11, "split seeds must not collide");

        for s in &plan.val_unseen {
            for kind in &s.shape_catalog {
                assert!(ShapeKind::default_unseen().contains(kind));
            }
        }
    }

    #[test]
    fn overlapping_catalogs_are_rejected() {
        let mut ds = DatasetSpec::default();
        ds.unseen_catalog = vec![ShapeKind::Circle];
        assert!(generate_split(&ds).is_err());
    }

    #[test]
    fn sequences_round_trip_through_disk() {
        let seq = generate_scene(&tiny_spec(21)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        crate::data::save_sequence(&seq, dir.path()).unwrap();
        let back = crate::data::load_sequence(dir.path(), &seq.id).unwrap();

        assert_eq!(back.len(), seq.len());
        assert_eq!(back.instance_count(), seq.instance_count());
        assert_eq!(back.categories, seq.categories);
        // Masks and flows are lossless; frames quantize to 8 bits.
        for (a, b) in seq.gt_masks.iter().zip(&back.gt_masks) {
            assert_eq!(a.to_index_map().unwrap(), b.to_index_map().unwrap());
        }
        for (a, b) in seq.flows_bwd.iter().zip(&back.flows_bwd) {
            for (x, y) in a.vectors().iter().zip(b.vectors().iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        for (a, b) in seq.frames.iter().zip(&back.frames) {
            for (x, y) in a.pixels().iter().zip(b.pixels().iter()) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
        let boxes_a = seq.tubes.boxes_at(2).unwrap();
        let boxes_b = back.tubes.boxes_at(2).unwrap();
        assert_eq!(boxes_a, boxes_b);
    }

    #[test]
    fn flow_is_consistent_with_mask_motion() {
        // Translation-only, integer velocities, no occluder: advecting the
        // frame-t mask along the forward flow must reproduce frame t+1
        // exactly on non-occluded pixels.
        let spec = SceneSpec {
            id: "flowcheck".into(),
            seed: 5,
            frame_count: 4,
            height: 32,
            width: 48,
            motion: MotionRanges::translation_only((1.0, 2.0)),
            occluder_probability: 0.0,
            instance_count_weights: vec![1.0],
            ..SceneSpec::default()
        };
        let seq = generate_scene(&spec).unwrap();
        for t in 0..seq.len() - 1 {
            let src = &seq.gt_masks[t];
            let dst = &seq.gt_masks[t + 1];
            let flow = &seq.flows_fwd[t];
            let (h, w) = (seq.height(), seq.width());
            for y in 0..h {
                for x in 0..w {
                    if src.channel(0)[[y, x]] > 0.5 {
                        let nx = x as isize + flow.dx()[[y, x]].round() as isize;
                        let ny = y as isize + flow.dy()[[y, x]].round() as isize;
                        if (0..w as isize).contains(&nx) && (0..h as isize).contains(&ny) {
                            assert_eq!(
                                dst.channel(0)[[ny as usize, nx as usize]],
                                1.0,
                                "pixel ({x},{y}) at t={t} should advect into the t+1 mask"
                            );
                        }
                    }
                }
            }
        }
    }
}
