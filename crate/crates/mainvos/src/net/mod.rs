//! Segmentation network: strided encoder, per-level pooling stacks with
//! separable dilated convolutions, and top-down fusion to full resolution.
//!
//! The network maps a cue tensor `(B, 6 + 2N, H, W)` to `N` per-instance
//! logit maps `(B, N, H, W)` in one pass. Four encoder stages halve the
//! resolution each (strides 2/4/8/16); every stage output runs through a
//! four-layer pooling stack (a 1x1 projection followed by three 3x3
//! separable convolutions at increasing dilation); the pooled maps are then
//! fused top-down, each level upsampled x2, refined with a 3x3 convolution
//! and added to the next finer level; a final x2 upsample and 1x1 head
//! produce the logits. Batch norm is used in the encoder only; the decoder
//! is plain convolutions with ReLU.
//!
//! Everything here is `f32` with hand-written backward passes (see
//! [`ops`]); training-time traces own every intermediate activation the
//! backward pass needs.

pub mod checkpoint;
pub mod ops;

use ndarray::Array4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use ops::{
    relu, relu_backward, sigmoid_clamped, upsample2, upsample2_backward, BatchNorm2d, BnCache,
    Conv2d, DepthwiseConv2d, Init,
};

/// Number of encoder stages; the architecture is fixed at four levels
/// (strides 2, 4, 8, 16).
pub const STAGE_COUNT: usize = 4;

/// Spatial stride of the deepest encoder stage; inputs must be divisible
/// by this.
pub const MAX_STRIDE: usize = 16;

/// Initial head bias, `logit(0.1)`: each instance channel is born
/// predicting a 10% foreground prior. Channels without an instance then
/// start out below the decision threshold, so the strongest early
/// gradient is the one that grows real instances — yet the logit well is
/// shallow enough that Adam (whose per-step parameter displacement is
/// capped by the learning rate) can climb out within a few hundred
/// iterations at desk scale.
const HEAD_PRIOR_LOGIT: f32 = -2.197_224_6;

/// Input channels for a cue tensor `[RGB | flow | LTA | STA]` with the
/// given instance capacity.
pub fn cue_input_channels(capacity: usize) -> usize {
    6 + 2 * capacity
}

/// Architecture hyperparameters. Serialized verbatim into checkpoints so a
/// saved model reconstructs itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Channels of the input tensor (6 + 2 * capacity for the full cue
    /// stack; 3 for an RGB-only backbone awaiting extension).
    pub input_channels: usize,
    /// Number of instance channels the network predicts.
    pub capacity: usize,
    /// Output widths of the four encoder stages.
    pub stage_channels: [usize; 4],
    /// Width of every pooled / fused decoder map.
    pub fpn_width: usize,
    /// Dilations of the three spatial convolutions in each pooling stack.
    pub dilation_set: [usize; 3],
    /// Separable (depthwise + pointwise) spatial convolutions in the
    /// pooling stacks; dense 3x3 convolutions otherwise.
    pub separable: bool,
}

impl NetworkConfig {
    /// Default desk-scale configuration for a given instance capacity.
    pub fn with_capacity(capacity: usize) -> Self {
        NetworkConfig {
            input_channels: cue_input_channels(capacity),
            capacity,
            stage_channels: [16, 32, 64, 128],
            fpn_width: 16,
            dilation_set: [1, 2, 3],
            separable: true,
        }
    }

    /// Narrow variant for ablation sweeps and fast tests.
    pub fn narrow(capacity: usize) -> Self {
        NetworkConfig {
            stage_channels: [8, 16, 32, 64],
            ..NetworkConfig::with_capacity(capacity)
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.capacity >= 1, || "capacity must be at least 1".into())?;
        ensure(self.input_channels >= 1, || "input_channels must be at least 1".into())?;
        ensure(self.fpn_width >= 1, || "fpn_width must be at least 1".into())?;
        ensure(self.stage_channels.iter().all(|&c| c >= 1), || {
            format!("stage_channels must be positive, got {:?}", self.stage_channels)
        })?;
        ensure(self.dilation_set.iter().all(|&d| d >= 1), || {
            format!("dilations must be positive, got {:?}", self.dilation_set)
        })
    }
}

// ---------------------------------------------------------------------------
// Encoder stage
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct EncStage {
    conv1: Conv2d, // 3x3 stride 2
    bn1: BatchNorm2d,
    conv2: Conv2d, // 3x3 stride 1
    bn2: BatchNorm2d,
}

struct StageTrace {
    input: Array4<f32>,
    bn1: BnCache,
    r1: Array4<f32>,
    bn2: BnCache,
    out: Array4<f32>,
}

impl EncStage {
    fn new(in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Self {
        EncStage {
            conv1: Conv2d::new(in_ch, out_ch, 3, 2, 1, Init::He, rng),
            bn1: BatchNorm2d::new(out_ch),
            conv2: Conv2d::new(out_ch, out_ch, 3, 1, 1, Init::He, rng),
            bn2: BatchNorm2d::new(out_ch),
        }
    }

    fn forward_train(&mut self, x: &Array4<f32>) -> StageTrace {
        let a1 = self.conv1.forward(x);
        let (n1, bn1) = self.bn1.forward_train(&a1);
        let r1 = relu(&n1);
        let a2 = self.conv2.forward(&r1);
        let (n2, bn2) = self.bn2.forward_train(&a2);
        let out = relu(&n2);
        StageTrace { input: x.clone(), bn1, r1, bn2, out }
    }

    fn forward_eval(&self, x: &Array4<f32>) -> Array4<f32> {
        let r1 = relu(&self.bn1.forward_eval(&self.conv1.forward(x)));
        relu(&self.bn2.forward_eval(&self.conv2.forward(&r1)))
    }

    fn backward(&mut self, trace: &StageTrace, g_out: &Array4<f32>) -> Array4<f32> {
        let g = relu_backward(&trace.out, g_out);
        let g = self.bn2.backward(&trace.bn2, &g);
        let g = self.conv2.backward(&trace.r1, &g);
        let g = relu_backward(&trace.r1, &g);
        let g = self.bn1.backward(&trace.bn1, &g);
        self.conv1.backward(&trace.input, &g)
    }

    fn zero_grads(&mut self) {
        self.conv1.zero_grads();
        self.bn1.zero_grads();
        self.conv2.zero_grads();
        self.bn2.zero_grads();
    }
}

// ---------------------------------------------------------------------------
// Pooling stack
// ---------------------------------------------------------------------------

/// Spatial 3x3 convolution of a pooling stack: separable or dense.
#[derive(Debug, Clone)]
enum SpatialBlock {
    Separable { dw: DepthwiseConv2d, pw: Conv2d },
    Dense(Conv2d),
}

impl SpatialBlock {
    fn new(width: usize, dilation: usize, separable: bool, rng: &mut ChaCha8Rng) -> Self {
        if separable {
            SpatialBlock::Separable {
                dw: DepthwiseConv2d::new(width, 3, dilation, Init::Xavier, rng),
                pw: Conv2d::new(width, width, 1, 1, 1, Init::Xavier, rng),
            }
        } else {
            SpatialBlock::Dense(Conv2d::new(width, width, 3, 1, dilation, Init::Xavier, rng))
        }
    }

    /// Returns the output plus the depthwise intermediate (separable only),
    /// which the backward pass needs as the pointwise input.
    fn forward(&self, x: &Array4<f32>) -> (Array4<f32>, Option<Array4<f32>>) {
        match self {
            SpatialBlock::Separable { dw, pw } => {
                let mid = dw.forward(x);
                let out = pw.forward(&mid);
                (out, Some(mid))
            }
            SpatialBlock::Dense(conv) => (conv.forward(x), None),
        }
    }

    fn backward(
        &mut self,
        x: &Array4<f32>,
        mid: &Option<Array4<f32>>,
        gy: &Array4<f32>,
    ) -> Array4<f32> {
        match self {
            SpatialBlock::Separable { dw, pw } => {
                let g = pw.backward(mid.as_ref().expect("separable trace"), gy);
                dw.backward(x, &g)
            }
            SpatialBlock::Dense(conv) => conv.backward(x, gy),
        }
    }

    fn zero_grads(&mut self) {
        match self {
            SpatialBlock::Separable { dw, pw } => {
                dw.zero_grads();
                pw.zero_grads();
            }
            SpatialBlock::Dense(conv) => conv.zero_grads(),
        }
    }
}

/// Four-layer pooling stack: 1x1 projection then three spatial blocks,
/// each followed by ReLU.
#[derive(Debug, Clone)]
struct PoolStack {
    proj: Conv2d,
    blocks: Vec<SpatialBlock>,
}

struct PoolTrace {
    input: Array4<f32>,
    /// ReLU outputs after the projection and after each block; the last
    /// entry is the stack output.
    acts: Vec<Array4<f32>>,
    /// Depthwise intermediates, aligned with `blocks`.
    mids: Vec<Option<Array4<f32>>>,
}

impl PoolStack {
    fn new(in_ch: usize, width: usize, dilations: &[usize; 3], separable: bool, rng: &mut ChaCha8Rng) -> Self {
        PoolStack {
            proj: Conv2d::new(in_ch, width, 1, 1, 1, Init::Xavier, rng),
            blocks: dilations
                .iter()
                .map(|&d| SpatialBlock::new(width, d, separable, rng))
                .collect(),
        }
    }

    fn forward_train(&self, x: &Array4<f32>) -> PoolTrace {
        let mut acts = Vec::with_capacity(4);
        let mut mids = Vec::with_capacity(3);
        acts.push(relu(&self.proj.forward(x)));
        for block in &self.blocks {
            let (a, mid) = block.forward(acts.last().expect("projection output"));
            acts.push(relu(&a));
            mids.push(mid);
        }
        PoolTrace { input: x.clone(), acts, mids }
    }

    fn forward_eval(&self, x: &Array4<f32>) -> Array4<f32> {
        let mut cur = relu(&self.proj.forward(x));
        for block in &self.blocks {
            let (a, _) = block.forward(&cur);
            cur = relu(&a);
        }
        cur
    }

    fn backward(&mut self, trace: &PoolTrace, g_out: &Array4<f32>) -> Array4<f32> {
        let mut g = g_out.clone();
        for (j, block) in self.blocks.iter_mut().enumerate().rev() {
            g = relu_backward(&trace.acts[j + 1], &g);
            g = block.backward(&trace.acts[j], &trace.mids[j], &g);
        }
        let g = relu_backward(&trace.acts[0], &g);
        self.proj.backward(&trace.input, &g)
    }

    fn zero_grads(&mut self) {
        self.proj.zero_grads();
        for b in &mut self.blocks {
            b.zero_grads();
        }
    }
}

// ---------------------------------------------------------------------------
// Full network
// ---------------------------------------------------------------------------

/// The segmentation network. Owns parameters and their gradient buffers.
#[derive(Debug, Clone)]
pub struct MainNetwork {
    pub cfg: NetworkConfig,
    stages: Vec<EncStage>,
    pools: Vec<PoolStack>,
    /// Refinement convs applied after each top-down upsample, ordered from
    /// the deepest level up: fuse[0] maps stride 16 -> 8, fuse[2] maps 4 -> 2.
    fuse: Vec<Conv2d>,
    head: Conv2d,
}

/// Every intermediate the backward pass needs, produced by
/// [`MainNetwork::forward_train`].
pub struct ModelTrace {
    stages: Vec<StageTrace>,
    pools: Vec<PoolTrace>,
    /// Upsampled tensors entering the three fuse convolutions (deepest
    /// first) and the head input.
    ups: Vec<Array4<f32>>,
    head_in: Array4<f32>,
}

impl MainNetwork {
    pub fn new(cfg: NetworkConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stages = Vec::with_capacity(STAGE_COUNT);
        let mut in_ch = cfg.input_channels;
        for &out_ch in &cfg.stage_channels {
            stages.push(EncStage::new(in_ch, out_ch, &mut rng));
            in_ch = out_ch;
        }
        let pools = cfg
            .stage_channels
            .iter()
            .map(|&c| PoolStack::new(c, cfg.fpn_width, &cfg.dilation_set, cfg.separable, &mut rng))
            .collect();
        let fuse = (0..STAGE_COUNT - 1)
            .map(|_| Conv2d::new(cfg.fpn_width, cfg.fpn_width, 3, 1, 1, Init::Xavier, &mut rng))
            .collect();
        let mut head = Conv2d::new(cfg.fpn_width, cfg.capacity, 1, 1, 1, Init::Xavier, &mut rng);
        // Start every channel centered on the foreground prior. From an
        // ~0.5 start the steepest descent direction is a uniform collapse
        // of all channels toward empty, which saturates the logits and
        // kills the gradient before the cue channels can be discovered.
        head.b.fill(HEAD_PRIOR_LOGIT);
        Ok(MainNetwork { cfg, stages, pools, fuse, head })
    }

    /// Validate an input batch against the architecture constraints.
    pub fn check_input(&self, x: &Array4<f32>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        ensure(c == self.cfg.input_channels, || {
            format!("input has {c} channels, network expects {}", self.cfg.input_channels)
        })?;
        ensure(h >= MAX_STRIDE && w >= MAX_STRIDE && h % MAX_STRIDE == 0 && w % MAX_STRIDE == 0, || {
            format!("input {h}x{w} must be a positive multiple of {MAX_STRIDE} in both dimensions")
        })
    }

    /// Training forward pass: batch-norm uses batch statistics and the
    /// returned trace carries everything [`Self::backward`] needs.
    pub fn forward_train(&mut self, x: &Array4<f32>) -> (Array4<f32>, ModelTrace) {
        debug_assert!(self.check_input(x).is_ok());
        let mut stages = Vec::with_capacity(STAGE_COUNT);
        let mut cur = x;
        for stage in &mut self.stages {
            let t = stage.forward_train(cur);
            stages.push(t);
            cur = &stages.last().expect("stage trace").out;
        }
        let pools: Vec<PoolTrace> = self
            .pools
            .iter()
            .zip(&stages)
            .map(|(pool, st)| pool.forward_train(&st.out))
            .collect();

        let mut ups = Vec::with_capacity(STAGE_COUNT - 1);
        let mut f = pools[STAGE_COUNT - 1].acts.last().expect("pool output").clone();
        for level in (0..STAGE_COUNT - 1).rev() {
            let up = upsample2(&f);
            let refined = self.fuse[STAGE_COUNT - 2 - level].forward(&up);
            ups.push(up);
            f = pools[level].acts.last().expect("pool output") + &refined;
        }
        let head_in = upsample2(&f);
        let logits = self.head.forward(&head_in);
        (logits, ModelTrace { stages, pools, ups, head_in })
    }

    /// Inference forward pass: batch norm uses running statistics, no
    /// state is touched.
    pub fn forward_eval(&self, x: &Array4<f32>) -> Array4<f32> {
        debug_assert!(self.check_input(x).is_ok());
        let mut outs = Vec::with_capacity(STAGE_COUNT);
        let mut cur = x.clone();
        for stage in &self.stages {
            cur = stage.forward_eval(&cur);
            outs.push(cur.clone());
        }
        let mut f = self.pools[STAGE_COUNT - 1].forward_eval(&outs[STAGE_COUNT - 1]);
        for level in (0..STAGE_COUNT - 1).rev() {
            let refined = self.fuse[STAGE_COUNT - 2 - level].forward(&upsample2(&f));
            f = self.pools[level].forward_eval(&outs[level]) + &refined;
        }
        self.head.forward(&upsample2(&f))
    }

    /// Eval-mode instance probabilities in `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    pub fn predict(&self, x: &Array4<f32>) -> Array4<f32> {
        sigmoid_clamped(&self.forward_eval(x))
    }

    /// Accumulate parameter gradients from a logit gradient. The gradient
    /// with respect to the input is computed and discarded.
    pub fn backward(&mut self, trace: &ModelTrace, g_logits: &Array4<f32>) {
        let g = self.head.backward(&trace.head_in, g_logits);
        let mut g_f = upsample2_backward(&g);

        // Top-down fusion ran from deep to shallow; walk it back up.
        let mut g_pool: Vec<Option<Array4<f32>>> = (0..STAGE_COUNT).map(|_| None).collect();
        for level in 0..STAGE_COUNT - 1 {
            // g_f is the gradient at f[level] = pool[level] + fuse(up(f[level+1])).
            g_pool[level] = Some(g_f.clone());
            let fuse_idx = STAGE_COUNT - 2 - level;
            let g = self.fuse[fuse_idx].backward(&trace.ups[fuse_idx], &g_f);
            g_f = upsample2_backward(&g);
        }
        g_pool[STAGE_COUNT - 1] = Some(g_f);

        // Pool stacks feed back into their stage outputs; stages chain.
        let mut g_stage_out: Option<Array4<f32>> = None;
        for level in (0..STAGE_COUNT).rev() {
            let g_out = g_pool[level].take().expect("pool gradient");
            let mut g_out = self.pools[level].backward(&trace.pools[level], &g_out);
            if let Some(extra) = g_stage_out.take() {
                g_out += &extra;
            }
            g_stage_out = Some(self.stages[level].backward(&trace.stages[level], &g_out));
        }
    }

    pub fn zero_grads(&mut self) {
        for s in &mut self.stages {
            s.zero_grads();
        }
        for p in &mut self.pools {
            p.zero_grads();
        }
        for f in &mut self.fuse {
            f.zero_grads();
        }
        self.head.zero_grads();
    }

    /// Number of trainable parameters (weights, biases, batch-norm affine).
    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, kind, data, _| {
            if kind == SlotKind::Param {
                n += data.len();
            }
        });
        n
    }

    // -- tensor enumeration --------------------------------------------------

    /// Read-only walk over all state tensors in a fixed deterministic
    /// order: trainable parameters and batch-norm running statistics.
    pub fn visit(&self, f: &mut impl FnMut(&str, SlotKind, &[f32], &[usize])) {
        use SlotKind::*;
        let conv = |f: &mut dyn FnMut(&str, SlotKind, &[f32], &[usize]), name: &str, c: &Conv2d| {
            f(&format!("{name}.w"), Param, c.w.as_slice().expect("std layout"), &[
                c.w.dim().0,
                c.w.dim().1,
                c.w.dim().2,
                c.w.dim().3,
            ]);
            f(&format!("{name}.b"), Param, c.b.as_slice().expect("std layout"), &[c.b.len()]);
        };
        let bn = |f: &mut dyn FnMut(&str, SlotKind, &[f32], &[usize]), name: &str, b: &BatchNorm2d| {
            let n = [b.gamma.len()];
            f(&format!("{name}.gamma"), Param, b.gamma.as_slice().expect("std layout"), &n);
            f(&format!("{name}.beta"), Param, b.beta.as_slice().expect("std layout"), &n);
            f(&format!("{name}.running_mean"), Stat, b.running_mean.as_slice().expect("std layout"), &n);
            f(&format!("{name}.running_var"), Stat, b.running_var.as_slice().expect("std layout"), &n);
        };
        for (i, s) in self.stages.iter().enumerate() {
            conv(f, &format!("stage{i}.conv1"), &s.conv1);
            bn(f, &format!("stage{i}.bn1"), &s.bn1);
            conv(f, &format!("stage{i}.conv2"), &s.conv2);
            bn(f, &format!("stage{i}.bn2"), &s.bn2);
        }
        for (i, p) in self.pools.iter().enumerate() {
            conv(f, &format!("pool{i}.proj"), &p.proj);
            for (j, block) in p.blocks.iter().enumerate() {
                match block {
                    SpatialBlock::Separable { dw, pw } => {
                        f(
                            &format!("pool{i}.block{j}.dw.w"),
                            Param,
                            dw.w.as_slice().expect("std layout"),
                            &[dw.w.dim().0, dw.w.dim().1, dw.w.dim().2],
                        );
                        conv(f, &format!("pool{i}.block{j}.pw"), pw);
                    }
                    SpatialBlock::Dense(c) => conv(f, &format!("pool{i}.block{j}.conv"), c),
                }
            }
        }
        for (i, c) in self.fuse.iter().enumerate() {
            conv(f, &format!("fuse{i}"), c);
        }
        conv(f, "head", &self.head);
    }

    /// Mutable walk in the same order as [`Self::visit`]. Parameter slots
    /// carry their gradient buffer.
    pub fn slots_mut(&mut self) -> Vec<Slot<'_>> {
        let mut out = Vec::new();
        fn conv<'a>(out: &mut Vec<Slot<'a>>, name: String, c: &'a mut Conv2d) {
            let shape_w = vec![c.w.dim().0, c.w.dim().1, c.w.dim().2, c.w.dim().3];
            out.push(Slot {
                name: format!("{name}.w"),
                kind: SlotKind::Param,
                shape: shape_w,
                data: c.w.as_slice_mut().expect("std layout"),
                grad: Some(c.gw.as_slice_mut().expect("std layout")),
            });
            out.push(Slot {
                name: format!("{name}.b"),
                kind: SlotKind::Param,
                shape: vec![c.b.len()],
                data: c.b.as_slice_mut().expect("std layout"),
                grad: Some(c.gb.as_slice_mut().expect("std layout")),
            });
        }
        fn bn<'a>(out: &mut Vec<Slot<'a>>, name: String, b: &'a mut BatchNorm2d) {
            let n = b.gamma.len();
            out.push(Slot {
                name: format!("{name}.gamma"),
                kind: SlotKind::Param,
                shape: vec![n],
                data: b.gamma.as_slice_mut().expect("std layout"),
                grad: Some(b.ggamma.as_slice_mut().expect("std layout")),
            });
            out.push(Slot {
                name: format!("{name}.beta"),
                kind: SlotKind::Param,
                shape: vec![n],
                data: b.beta.as_slice_mut().expect("std layout"),
                grad: Some(b.gbeta.as_slice_mut().expect("std layout")),
            });
            out.push(Slot {
                name: format!("{name}.running_mean"),
                kind: SlotKind::Stat,
                shape: vec![n],
                data: b.running_mean.as_slice_mut().expect("std layout"),
                grad: None,
            });
            out.push(Slot {
                name: format!("{name}.running_var"),
                kind: SlotKind::Stat,
                shape: vec![n],
                data: b.running_var.as_slice_mut().expect("std layout"),
                grad: None,
            });
        }
        for (i, s) in self.stages.iter_mut().enumerate() {
            conv(&mut out, format!("stage{i}.conv1"), &mut s.conv1);
            bn(&mut out, format!("stage{i}.bn1"), &mut s.bn1);
            conv(&mut out, format!("stage{i}.conv2"), &mut s.conv2);
            bn(&mut out, format!("stage{i}.bn2"), &mut s.bn2);
        }
        for (i, p) in self.pools.iter_mut().enumerate() {
            conv(&mut out, format!("pool{i}.proj"), &mut p.proj);
            for (j, block) in p.blocks.iter_mut().enumerate() {
                match block {
                    SpatialBlock::Separable { dw, pw } => {
                        let shape = vec![dw.w.dim().0, dw.w.dim().1, dw.w.dim().2];
                        out.push(Slot {
                            name: format!("pool{i}.block{j}.dw.w"),
                            kind: SlotKind::Param,
                            shape,
                            data: dw.w.as_slice_mut().expect("std layout"),
                            grad: Some(dw.gw.as_slice_mut().expect("std layout")),
                        });
                        conv(&mut out, format!("pool{i}.block{j}.pw"), pw);
                    }
                    SpatialBlock::Dense(c) => conv(&mut out, format!("pool{i}.block{j}.conv"), c),
                }
            }
        }
        for (i, c) in self.fuse.iter_mut().enumerate() {
            conv(&mut out, format!("fuse{i}"), c);
        }
        conv(&mut out, "head".to_string(), &mut self.head);
        out
    }

    // -- input-layer extension ------------------------------------------------

    /// Widen a 3-channel (RGB) first-layer kernel to the full cue stack.
    /// The flow and location channels are seeded with the mean of the RGB
    /// slices; each shape-attention channel copies its location channel.
    pub fn extend_input_kernel(w_rgb: &Array4<f32>, capacity: usize) -> Result<Array4<f32>> {
        let (oc, ic, kh, kw) = w_rgb.dim();
        ensure(ic == 3, || format!("expected a 3-channel kernel, got {ic}"))?;
        let total = cue_input_channels(capacity);
        let mut out = Array4::zeros((oc, total, kh, kw));
        for o in 0..oc {
            for ky in 0..kh {
                for kx in 0..kw {
                    let mean = (w_rgb[[o, 0, ky, kx]] + w_rgb[[o, 1, ky, kx]]
                        + w_rgb[[o, 2, ky, kx]])
                        / 3.0;
                    for c in 0..3 {
                        out[[o, c, ky, kx]] = w_rgb[[o, c, ky, kx]];
                        out[[o, 3 + c, ky, kx]] = mean;
                    }
                    for n in 0..capacity {
                        out[[o, 6 + n, ky, kx]] = mean; // location cue
                        out[[o, 6 + capacity + n, ky, kx]] = mean; // shape cue copies it
                    }
                }
            }
        }
        Ok(out)
    }

    /// Produce a copy of this RGB-only network whose first layer accepts
    /// the full cue tensor. All other parameters are shared verbatim, so
    /// on zero-filled cue channels the extended network reproduces the
    /// original's outputs exactly.
    pub fn extended_for_cues(&self) -> Result<MainNetwork> {
        ensure(self.cfg.input_channels == 3, || {
            format!(
                "only a 3-channel network can be extended, this one takes {}",
                self.cfg.input_channels
            )
        })?;
        let mut net = self.clone();
        net.cfg.input_channels = cue_input_channels(self.cfg.capacity);
        let w = Self::extend_input_kernel(&self.stages[0].conv1.w, self.cfg.capacity)?;
        net.stages[0].conv1.gw = Array4::zeros(w.dim());
        net.stages[0].conv1.w = w;
        Ok(net)
    }

    // -- checkpoint bridging ----------------------------------------------------

    /// Snapshot all state tensors (parameters and running statistics).
    pub fn state_entries(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        let mut out = Vec::new();
        self.visit(&mut |name, _, data, shape| {
            out.push((name.to_string(), shape.to_vec(), data.to_vec()));
        });
        out
    }

    /// Fill all state tensors from named entries; the name set and shapes
    /// must match exactly.
    pub fn load_state(
        &mut self,
        entries: &std::collections::BTreeMap<String, (Vec<usize>, Vec<f32>)>,
    ) -> Result<()> {
        let mut seen = 0usize;
        for slot in self.slots_mut() {
            let (shape, data) = entries.get(&slot.name).ok_or_else(|| {
                Error::validation(format!("checkpoint is missing tensor '{}'", slot.name))
            })?;
            ensure(shape == &slot.shape, || {
                format!(
                    "tensor '{}' has shape {:?} in the checkpoint, expected {:?}",
                    slot.name, shape, slot.shape
                )
            })?;
            slot.data.copy_from_slice(data);
            seen += 1;
        }
        ensure(seen == entries.len(), || {
            format!(
                "checkpoint has {} tensors, network expects {}",
                entries.len(),
                seen
            )
        })
    }
}

/// Whether a state tensor is trainable or a running statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Param,
    Stat,
}

/// A named view into one state tensor, with its gradient when trainable.
pub struct Slot<'a> {
    pub name: String,
    pub kind: SlotKind,
    pub shape: Vec<usize>,
    pub data: &'a mut [f32],
    pub grad: Option<&'a mut [f32]>,
}

/// Bias-less count of one separable spatial block's weights, exposed for
/// documentation and sanity tests: `c * k^2` depthwise plus `c^2` pointwise.
pub fn separable_weight_count(width: usize, k: usize) -> usize {
    width * k * k + width * width
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> NetworkConfig {
        NetworkConfig {
            input_channels: cue_input_channels(2),
            capacity: 2,
            stage_channels: [4, 4, 8, 8],
            fpn_width: 4,
            dilation_set: [1, 2, 3],
            separable: true,
        }
    }

    fn randn(dim: (usize, usize, usize, usize), seed: u64) -> Array4<f32> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_fn(dim, |_| rng.gen_range(-1.0f32..1.0))
    }

    #[test]
    fn forward_shapes_match_input_resolution() {
        let net = MainNetwork::new(NetworkConfig::with_capacity(3), 7).unwrap();
        let x = randn((1, cue_input_channels(3), 64, 96), 1);
        let y = net.forward_eval(&x);
        assert_eq!(y.dim(), (1, 3, 64, 96));

        let x = randn((2, cue_input_channels(3), 128, 128), 2);
        let y = net.forward_eval(&x);
        assert_eq!(y.dim(), (2, 3, 128, 128));
    }

    #[test]
    fn input_validation_rejects_bad_resolutions_and_channels() {
        let net = MainNetwork::new(tiny_cfg(), 3).unwrap();
        let ok = randn((1, cue_input_channels(2), 32, 48), 3);
        assert!(net.check_input(&ok).is_ok());
        let bad_res = randn((1, cue_input_channels(2), 50, 70), 4);
        assert!(net.check_input(&bad_res).is_err());
        let bad_ch = randn((1, 5, 32, 48), 5);
        assert!(net.check_input(&bad_ch).is_err());
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let cfg = tiny_cfg();
        let net = MainNetwork::new(cfg.clone(), 11).unwrap();

        let enc_stage = |ic: usize, oc: usize| {
            (oc * ic * 9 + oc) + 2 * oc + (oc * oc * 9 + oc) + 2 * oc
        };
        let pool = |c: usize, f: usize| {
            // proj + 3 separable blocks (dw weights + pw with bias)
            (f * c + f) + 3 * (f * 9 + f * f + f)
        };
        let f = cfg.fpn_width;
        let mut expect = 0;
        let mut ic = cfg.input_channels;
        for &oc in &cfg.stage_channels {
            expect += enc_stage(ic, oc);
            ic = oc;
        }
        for &c in &cfg.stage_channels {
            expect += pool(c, f);
        }
        expect += 3 * (f * f * 9 + f); // fuse convs
        expect += cfg.capacity * f + cfg.capacity; // head

        assert_eq!(net.parameter_count(), expect);
    }

    #[test]
    fn separable_stacks_use_fewer_parameters_than_dense() {
        let mut dense_cfg = tiny_cfg();
        dense_cfg.separable = false;
        let sep = MainNetwork::new(tiny_cfg(), 1).unwrap();
        let dense = MainNetwork::new(dense_cfg, 1).unwrap();
        assert!(sep.parameter_count() < dense.parameter_count());
        assert_eq!(separable_weight_count(64, 3), 4672);
    }

    #[test]
    fn init_is_deterministic_in_the_seed() {
        let a = MainNetwork::new(tiny_cfg(), 42).unwrap();
        let b = MainNetwork::new(tiny_cfg(), 42).unwrap();
        let c = MainNetwork::new(tiny_cfg(), 43).unwrap();
        let ea = a.state_entries();
        let eb = b.state_entries();
        let ec = c.state_entries();
        assert_eq!(ea, eb);
        assert_ne!(ea, ec);
    }

    #[test]
    fn visit_and_slots_agree_on_names_and_shapes() {
        let mut net = MainNetwork::new(tiny_cfg(), 5).unwrap();
        let mut visited = Vec::new();
        net.visit(&mut |name, kind, _, shape| visited.push((name.to_string(), kind, shape.to_vec())));
        let slots = net.slots_mut();
        assert_eq!(visited.len(), slots.len());
        for (v, s) in visited.iter().zip(&slots) {
            assert_eq!(v.0, s.name);
            assert_eq!(v.1, s.kind);
            assert_eq!(v.2, s.shape);
            assert_eq!(s.grad.is_some(), s.kind == SlotKind::Param);
        }
    }

    #[test]
    fn backward_fills_gradients_for_every_parameter() {
        let mut net = MainNetwork::new(tiny_cfg(), 9).unwrap();
        let x = randn((2, cue_input_channels(2), 32, 48), 10);
        let (logits, trace) = net.forward_train(&x);
        // d/dlogits of sum(logits) is all ones: every parameter on the path
        // should see some gradient.
        let g = Array4::from_elem(logits.dim(), 1.0);
        net.backward(&trace, &g);
        let mut zero_params = Vec::new();
        for slot in net.slots_mut() {
            if let Some(grad) = &slot.grad {
                let norm: f32 = grad.iter().map(|v| v.abs()).sum();
                if norm == 0.0 {
                    zero_params.push(slot.name.clone());
                }
            }
        }
        assert!(
            zero_params.is_empty(),
            "parameters with zero gradient: {zero_params:?}"
        );

        net.zero_grads();
        for slot in net.slots_mut() {
            if let Some(grad) = &slot.grad {
                assert!(grad.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn extension_preserves_rgb_behavior_on_zero_cues() {
        let cfg = NetworkConfig {
            input_channels: 3,
            ..tiny_cfg()
        };
        let rgb_net = MainNetwork::new(cfg, 21).unwrap();
        let extended = rgb_net.extended_for_cues().unwrap();
        assert_eq!(extended.cfg.input_channels, cue_input_channels(2));

        let rgb = randn((1, 3, 32, 48), 22);
        let mut padded = Array4::zeros((1, cue_input_channels(2), 32, 48));
        padded.slice_mut(ndarray::s![.., 0..3, .., ..]).assign(&rgb);

        let base = rgb_net.forward_eval(&rgb);
        let ext = extended.forward_eval(&padded);
        assert_eq!(base, ext, "zero cue channels must not change the output");
    }

    #[test]
    fn extension_rejects_non_rgb_networks_and_seeds_cue_slices() {
        let net = MainNetwork::new(tiny_cfg(), 2).unwrap();
        assert!(net.extended_for_cues().is_err());

        let w = randn((2, 3, 3, 3), 30);
        let ext = MainNetwork::extend_input_kernel(&w, 2).unwrap();
        assert_eq!(ext.dim(), (2, 10, 3, 3));
        for o in 0..2 {
            for ky in 0..3 {
                for kx in 0..3 {
                    let mean =
                        (w[[o, 0, ky, kx]] + w[[o, 1, ky, kx]] + w[[o, 2, ky, kx]]) / 3.0;
                    for c in 0..3 {
                        assert_eq!(ext[[o, c, ky, kx]], w[[o, c, ky, kx]]);
                    }
                    for c in 3..10 {
                        assert!((ext[[o, c, ky, kx]] - mean).abs() < 1e-7);
                    }
                    // Shape cue channels copy the location cue channels.
                    assert_eq!(ext[[o, 6, ky, kx]], ext[[o, 8, ky, kx]]);
                    assert_eq!(ext[[o, 7, ky, kx]], ext[[o, 9, ky, kx]]);
                }
            }
        }
    }

    #[test]
    fn state_round_trips_through_entries() {
        let src = MainNetwork::new(tiny_cfg(), 31).unwrap();
        let mut dst = MainNetwork::new(tiny_cfg(), 99).unwrap();
        let map: std::collections::BTreeMap<_, _> = src
            .state_entries()
            .into_iter()
            .map(|(n, s, d)| (n, (s, d)))
            .collect();
        dst.load_state(&map).unwrap();
        assert_eq!(src.state_entries(), dst.state_entries());

        let x = randn((1, cue_input_channels(2), 32, 32), 33);
        assert_eq!(src.forward_eval(&x), dst.forward_eval(&x));
    }

    #[test]
    fn train_and_eval_modes_converge_once_stats_settle() {
        // After many training passes over the same batch the running stats
        // approach the batch stats, so eval output approaches train output.
        let mut net = MainNetwork::new(tiny_cfg(), 40).unwrap();
        let x = randn((2, cue_input_channels(2), 32, 32), 41);
        let mut last_train = None;
        for _ in 0..60 {
            let (y, _) = net.forward_train(&x);
            last_train = Some(y);
        }
        let train_y = last_train.unwrap();
        let eval_y = net.forward_eval(&x);
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for (a, b) in train_y.iter().zip(eval_y.iter()) {
            num += ((a - b) as f64).powi(2);
            den += (*a as f64).powi(2) + 1e-12;
        }
        let rel = (num / den).sqrt();
        assert!(rel < 0.2, "train/eval outputs should converge, rel {rel}");
    }

    #[test]
    fn dense_variant_forward_and_backward_run() {
        let mut cfg = tiny_cfg();
        cfg.separable = false;
        let mut net = MainNetwork::new(cfg, 50).unwrap();
        let x = randn((1, cue_input_channels(2), 32, 32), 51);
        let (logits, trace) = net.forward_train(&x);
        assert_eq!(logits.dim(), (1, 2, 32, 32));
        net.backward(&trace, &Array4::from_elem(logits.dim(), 0.5));
        let got_grad = net
            .slots_mut()
            .iter()
            .filter(|s| s.kind == SlotKind::Param)
            .all(|s| s.grad.as_ref().map(|g| g.iter().any(|&v| v != 0.0)).unwrap_or(false));
        assert!(got_grad);
    }

    #[test]
    fn probabilities_are_clamped() {
        let net = MainNetwork::new(tiny_cfg(), 60).unwrap();
        let x = randn((1, cue_input_channels(2), 32, 32), 61);
        let p = net.predict(&x);
        assert!(p.iter().all(|&v| (ops::PROB_CLAMP..=1.0 - ops::PROB_CLAMP).contains(&v)));
    }

    #[test]
    fn config_validation_rejects_degenerate_settings() {
        let mut cfg = tiny_cfg();
        cfg.capacity = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_cfg();
        cfg.dilation_set = [1, 0, 3];
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_cfg();
        cfg.fpn_width = 0;
        assert!(cfg.validate().is_err());
    }

}
