//! Weighted instance dice loss and friends.
//!
//! For prediction channels `p_1..p_N` and targets `g_1..g_N` the loss is
//!
//! ```text
//! L(P, G) = sum_i alpha(g_i) * (1 - D(p_i, g_i))        (fit term)
//!         + sum_i sum_{j != i} Dov(p_i, p_j)            (overlap term)
//!
//! alpha(g) = 1 - |g| / (W * H)
//! D(p, g)  = (2 * sum(p * g) + eps) / (sum(p) + sum(g) + eps)
//! Dov(a, b) = 2 * sum(a * b) / (sum(a) + sum(b) + eps)
//! ```
//!
//! `alpha` boosts small objects (an empty target weighs 1, a full-frame one
//! 0), the fit term rewards per-channel agreement, and the overlap term
//! penalizes any two channels claiming the same pixels. Channels without a
//! live instance train against an empty target: `alpha` is then exactly 1
//! and the formulas go through unchanged, so the loss never needs to know
//! which channels are active.
//!
//! The smoothing `eps` appears in both numerator and denominator of the fit
//! dice so `D(empty, empty) = 1` — supervising spare channels toward
//! emptiness is well-posed. The overlap dice deliberately smooths only the
//! denominator: with a smoothed numerator two empty channels would score
//! `Dov = 1` and a perfect prediction would not reach loss zero.
//!
//! Everything here runs in `f64`: gradient checks at `h = 1e-4` drown in
//! `f32` rounding noise, and the Dice-Jaccard identity is verified to
//! `1e-12`.

use ndarray::{Array3, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Default dice smoothing.
pub const DICE_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub epsilon: f64,
    /// Train channels beyond the live instance count against empty targets
    /// (with weight 1); disable to restrict the fit term to live channels.
    pub include_inactive_channels: bool,
    /// Disable to train with the fit term only (per-instance weighted dice).
    pub overlap_enabled: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            epsilon: DICE_EPSILON,
            include_inactive_channels: true,
            overlap_enabled: true,
        }
    }
}

/// Which training loss to use (the loss-function ablation axis).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Weighted instance dice with overlap penalty.
    Wid,
    /// Unweighted per-channel soft dice, no overlap penalty.
    Dice,
    /// Mean binary cross-entropy over all channels and pixels.
    Bce,
}

// ---------------------------------------------------------------------------
// Scalar pieces
// ---------------------------------------------------------------------------

/// Soft dice coefficient `(2 sum(pg) + eps) / (sum(p) + sum(g) + eps)`.
/// With `eps > 0` two empty masks score 1.
pub fn soft_dice(p: ArrayView2<'_, f64>, g: ArrayView2<'_, f64>, eps: f64) -> f64 {
    debug_assert_eq!(p.dim(), g.dim());
    let mut dot = 0.0;
    let mut sp = 0.0;
    let mut sg = 0.0;
    for (a, b) in p.iter().zip(g.iter()) {
        dot += a * b;
        sp += a;
        sg += b;
    }
    (2.0 * dot + eps) / (sp + sg + eps)
}

/// Small-object weight `1 - |g| / (W * H)`: 1 for an empty target, 0 for a
/// target covering the whole image.
pub fn alpha_weight(g: ArrayView2<'_, f64>) -> f64 {
    let (h, w) = g.dim();
    1.0 - g.sum() / (h as f64 * w as f64)
}

/// Map a dice coefficient to the Jaccard index via the exact bijection
/// `J = D / (2 - D)`.
pub fn dice_jaccard(d: f64) -> Result<f64> {
    ensure((0.0..=1.0).contains(&d), || format!("dice value {d} outside [0, 1]"))?;
    Ok(d / (2.0 - d))
}

// ---------------------------------------------------------------------------
// Weighted instance dice
// ---------------------------------------------------------------------------

fn check_shapes(pred: &ArrayView3<'_, f64>, gt: &ArrayView3<'_, f64>) -> Result<()> {
    ensure(pred.dim() == gt.dim(), || {
        format!("prediction {:?} and target {:?} shapes differ", pred.dim(), gt.dim())
    })?;
    ensure(pred.dim().1 > 0 && pred.dim().2 > 0, || "empty spatial dims".into())
}

/// Loss value only. A channel is active when its target is nonempty; by
/// default the inactive channels also train against their empty targets
/// with `alpha = 1`.
pub fn wid_loss(
    pred: &ArrayView3<'_, f64>,
    gt: &ArrayView3<'_, f64>,
    cfg: &LossConfig,
) -> Result<f64> {
    Ok(wid_loss_grad(pred, gt, cfg)?.0)
}

/// Loss value and its gradient with respect to every prediction pixel.
pub fn wid_loss_grad(
    pred: &ArrayView3<'_, f64>,
    gt: &ArrayView3<'_, f64>,
    cfg: &LossConfig,
) -> Result<(f64, Array3<f64>)> {
    check_shapes(pred, gt)?;
    let (n, h, w) = pred.dim();
    let eps = cfg.epsilon;
    let mut loss = 0.0;
    let mut grad = Array3::<f64>::zeros((n, h, w));

    // Fit term: alpha(g_i) * (1 - D(p_i, g_i)) per channel. The overlap
    // term below needs every channel's mass, so sum those first.
    let mut sum_p = vec![0.0f64; n];
    for i in 0..n {
        sum_p[i] = pred.index_axis(Axis(0), i).sum();
    }
    for i in 0..n {
        let p = pred.index_axis(Axis(0), i);
        let g = gt.index_axis(Axis(0), i);
        let mut dot = 0.0;
        let mut sg = 0.0;
        for (a, b) in p.iter().zip(g.iter()) {
            dot += a * b;
            sg += b;
        }
        if sg == 0.0 && !cfg.include_inactive_channels {
            continue;
        }
        let s = sum_p[i] + sg + eps;
        let num = 2.0 * dot + eps;
        let alpha = 1.0 - sg / (h as f64 * w as f64);
        loss += alpha * (1.0 - num / s);
        // dD/dp_x = (2 g_x S - num) / S^2; the fit term carries -alpha.
        let s2 = s * s;
        let mut gi = grad.index_axis_mut(Axis(0), i);
        for (gr, &gx) in gi.iter_mut().zip(g.iter()) {
            *gr -= alpha * (2.0 * gx * s - num) / s2;
        }
    }

    // Overlap term: ordered pairs (i, j), i != j. Dov is symmetric, so each
    // unordered pair contributes twice.
    if cfg.overlap_enabled && n > 1 {
        for i in 0..n {
            for j in i + 1..n {
                let pi = pred.index_axis(Axis(0), i);
                let pj = pred.index_axis(Axis(0), j);
                let mut dot = 0.0;
                for (a, b) in pi.iter().zip(pj.iter()) {
                    dot += a * b;
                }
                let s = sum_p[i] + sum_p[j] + eps;
                let num = 2.0 * dot;
                loss += 2.0 * num / s;
                let s2 = s * s;
                {
                    let mut gi = grad.index_axis_mut(Axis(0), i);
                    for (gr, &bx) in gi.iter_mut().zip(pj.iter()) {
                        *gr += 2.0 * (2.0 * bx * s - num) / s2;
                    }
                }
                {
                    let mut gj = grad.index_axis_mut(Axis(0), j);
                    for (gr, &ax) in gj.iter_mut().zip(pi.iter()) {
                        *gr += 2.0 * (2.0 * ax * s - num) / s2;
                    }
                }
            }
        }
    }

    Ok((loss, grad))
}

/// Plain unweighted soft dice loss `sum_i (1 - D(p_i, g_i))` and gradient.
pub fn dice_loss_grad(
    pred: &ArrayView3<'_, f64>,
    gt: &ArrayView3<'_, f64>,
    eps: f64,
) -> Result<(f64, Array3<f64>)> {
    check_shapes(pred, gt)?;
    let (n, h, w) = pred.dim();
    let mut loss = 0.0;
    let mut grad = Array3::<f64>::zeros((n, h, w));
    for i in 0..n {
        let p = pred.index_axis(Axis(0), i);
        let g = gt.index_axis(Axis(0), i);
        let mut dot = 0.0;
        let mut sp = 0.0;
        let mut sg = 0.0;
        for (a, b) in p.iter().zip(g.iter()) {
            dot += a * b;
            sp += a;
            sg += b;
        }
        let s = sp + sg + eps;
        let num = 2.0 * dot + eps;
        loss += 1.0 - num / s;
        let s2 = s * s;
        let mut gi = grad.index_axis_mut(Axis(0), i);
        for (gr, &gx) in gi.iter_mut().zip(g.iter()) {
            *gr -= (2.0 * gx * s - num) / s2;
        }
    }
    Ok((loss, grad))
}

/// Mean binary cross-entropy over the active channels (those with nonempty
/// targets), with the usual clamp away from 0 and 1. Falls back to all
/// channels when every target is empty.
pub fn bce_loss_grad(
    pred: &ArrayView3<'_, f64>,
    gt: &ArrayView3<'_, f64>,
) -> Result<(f64, Array3<f64>)> {
    check_shapes(pred, gt)?;
    let (n, h, w) = pred.dim();
    let active: Vec<usize> =
        (0..n).filter(|&i| gt.index_axis(Axis(0), i).sum() > 0.0).collect();
    let channels: Vec<usize> = if active.is_empty() { (0..n).collect() } else { active };
    let count = (channels.len() * h * w) as f64;
    let clamp = 1e-7;
    let mut loss = 0.0;
    let mut grad = Array3::<f64>::zeros((n, h, w));
    for &i in &channels {
        let p_ch = pred.index_axis(Axis(0), i);
        let g_ch = gt.index_axis(Axis(0), i);
        let mut gr_ch = grad.index_axis_mut(Axis(0), i);
        for ((gr, &p), &g) in gr_ch.iter_mut().zip(p_ch.iter()).zip(g_ch.iter()) {
            let p = p.clamp(clamp, 1.0 - clamp);
            loss -= g * p.ln() + (1.0 - g) * (1.0 - p).ln();
            *gr = ((1.0 - g) / (1.0 - p) - g / p) / count;
        }
    }
    Ok((loss / count, grad))
}

/// Dispatch on the loss-ablation axis.
pub fn loss_and_grad(
    kind: LossKind,
    pred: &ArrayView3<'_, f64>,
    gt: &ArrayView3<'_, f64>,
    cfg: &LossConfig,
) -> Result<(f64, Array3<f64>)> {
    match kind {
        LossKind::Wid => wid_loss_grad(pred, gt, cfg),
        LossKind::Dice => dice_loss_grad(pred, gt, cfg.epsilon),
        LossKind::Bce => bce_loss_grad(pred, gt),
    }
}

/// Compare the analytic gradient against central finite differences at step
/// `h`; returns the worst relative error over all pixels.
pub fn wid_gradient_check(
    pred: &ArrayView3<'_, f64>,
    gt: &ArrayView3<'_, f64>,
    cfg: &LossConfig,
    h: f64,
) -> Result<f64> {
    ensure(h > 0.0, || format!("step size {h} must be positive"))?;
    let (_, analytic) = wid_loss_grad(pred, gt, cfg)?;
    let mut probe = pred.to_owned();
    let mut worst = 0.0f64;
    for idx in 0..probe.len() {
        let flat = probe.as_slice_mut().expect("contiguous");
        let saved = flat[idx];
        flat[idx] = saved + h;
        let up = wid_loss(&probe.view(), gt, cfg)?;
        let flat = probe.as_slice_mut().expect("contiguous");
        flat[idx] = saved - h;
        let down = wid_loss(&probe.view(), gt, cfg)?;
        let flat = probe.as_slice_mut().expect("contiguous");
        flat[idx] = saved;

        let fd = (up - down) / (2.0 * h);
        let an = analytic.as_slice().expect("contiguous")[idx];
        let denom = fd.abs().max(an.abs()).max(1e-8);
        worst = worst.max((fd - an).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random binary target channels: disjoint rectangles plus empties.
    fn disjoint_binary(n: usize, active: usize, h: usize, w: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Array3::zeros((n, h, w));
        // Slice the image into `active` vertical bands; each instance gets a
        // random sub-rectangle of its own band, so channels never overlap.
        for k in 0..active {
            let x_lo = k * w / active;
            let x_hi = (k + 1) * w / active;
            let bw = x_hi - x_lo;
            let x0 = x_lo + rng.gen_range(0..bw.max(2) / 2);
            let x1 = (x0 + 1 + rng.gen_range(0..bw.max(2) / 2)).min(x_hi);
            let y0 = rng.gen_range(0..h / 2);
            let y1 = y0 + 1 + rng.gen_range(0..h / 2);
            for y in y0..y1.min(h) {
                for x in x0..x1 {
                    out[[k, y, x]] = 1.0;
                }
            }
        }
        out
    }

    #[test]
    fn perfect_disjoint_prediction_scores_zero() {
        for seed in 0..10 {
            let g = disjoint_binary(4, 2, 8, 8, seed); // two spare channels
            let loss = wid_loss(&g.view(), &g.view(), &LossConfig::default()).unwrap();
            assert!(loss.abs() < 1e-6, "seed {seed}: loss {loss}");
        }
    }

    #[test]
    fn identical_channels_pay_the_overlap_penalty() {
        let (h, w) = (8, 8);
        let mut g = Array3::zeros((2, h, w));
        for y in 2..6 {
            for x in 2..6 {
                g[[0, y, x]] = 1.0;
                g[[1, y, x]] = 1.0;
            }
        }
        // Prediction matches the (identical) targets exactly: fit term is 0,
        // overlap term is ~2 for the ordered pair of identical channels.
        let loss = wid_loss(&g.view(), &g.view(), &LossConfig::default()).unwrap();
        assert!((loss - 2.0).abs() < 1e-4, "loss {loss}");
    }

    #[test]
    fn alpha_weight_tracks_object_size() {
        let empty = Array2::<f64>::zeros((10, 10));
        assert_eq!(alpha_weight(empty.view()), 1.0);

        let full = Array2::<f64>::ones((10, 10));
        assert_eq!(alpha_weight(full.view()), 0.0);

        let mut half = Array2::<f64>::zeros((10, 10));
        for y in 0..5 {
            for x in 0..10 {
                half[[y, x]] = 1.0;
            }
        }
        assert!((alpha_weight(half.view()) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn loss_is_nonnegative_for_soft_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for seed in 0..20 {
            let g = disjoint_binary(3, 3, 8, 8, seed);
            let p = Array3::from_shape_fn((3, 8, 8), |_| rng.gen_range(0.0..1.0));
            let loss = wid_loss(&p.view(), &g.view(), &LossConfig::default()).unwrap();
            assert!(loss >= 0.0, "loss {loss}");
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..5 {
            let g = disjoint_binary(3, 2, 8, 8, seed);
            let p = Array3::from_shape_fn((3, 8, 8), |_| rng.gen_range(0.05..0.95));
            let err = wid_gradient_check(&p.view(), &g.view(), &LossConfig::default(), 1e-4)
                .unwrap();
            assert!(err < 1e-4, "seed {seed}: max relative error {err}");
        }
    }

    #[test]
    fn zero_prediction_fit_gradient_matches_closed_form() {
        // On a 2x2 image with g = [[1, 1], [0, 0]] and P = 0 everywhere the
        // fit gradient at pixel x is -alpha * (2 g_x S - eps) / S^2 with
        // S = sum(g) + eps. Overlap is disabled to isolate the fit term.
        let eps = 1e-6;
        let cfg = LossConfig { epsilon: eps, include_inactive_channels: true, overlap_enabled: false };
        let mut g = Array3::zeros((1, 2, 2));
        g[[0, 0, 0]] = 1.0;
        g[[0, 0, 1]] = 1.0;
        let p = Array3::zeros((1, 2, 2));
        let (_, grad) = wid_loss_grad(&p.view(), &g.view(), &cfg).unwrap();

        let alpha = 1.0 - 2.0 / 4.0;
        let s = 2.0 + eps;
        for (idx, &gx) in [(0usize, 0usize), (0, 1), (1, 0), (1, 1)]
            .iter()
            .zip([1.0, 1.0, 0.0, 0.0].iter())
        {
            let expected = -alpha * (2.0 * gx * s - eps) / (s * s);
            let got = grad[[0, idx.0, idx.1]];
            assert!(
                (got - expected).abs() < 1e-12,
                "pixel {idx:?}: got {got}, expected {expected}"
            );
        }
    }

    #[test]
    fn disabling_overlap_reduces_to_weighted_per_instance_dice() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = disjoint_binary(3, 3, 6, 6, 0);
        let p = Array3::from_shape_fn((3, 6, 6), |_| rng.gen_range(0.1..0.9));
        let cfg = LossConfig { epsilon: 1e-6, include_inactive_channels: true, overlap_enabled: false };
        let (loss, grad) = wid_loss_grad(&p.view(), &g.view(), &cfg).unwrap();

        // Independent computation, one weighted dice per channel.
        let mut expect_loss = 0.0;
        for i in 0..3 {
            let gi = g.index_axis(Axis(0), i);
            let pi = p.index_axis(Axis(0), i);
            expect_loss += alpha_weight(gi) * (1.0 - soft_dice(pi, gi, 1e-6));
        }
        assert!((loss - expect_loss).abs() < 1e-12);

        let err = wid_gradient_check(&p.view(), &g.view(), &cfg, 1e-4).unwrap();
        assert!(err < 1e-4, "fit-only gradient error {err}");
        assert!(grad.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn dice_jaccard_is_the_exact_set_identity() {
        assert_eq!(dice_jaccard(1.0).unwrap(), 1.0);
        assert_eq!(dice_jaccard(0.0).unwrap(), 0.0);
        assert!(dice_jaccard(1.5).is_err());
        assert!(dice_jaccard(-0.1).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let a = Array2::from_shape_fn((8, 8), |_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 });
            let b = Array2::from_shape_fn((8, 8), |_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 });
            let inter: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
            let union: f64 = a.iter().zip(b.iter()).map(|(x, y)| x + y - x * y).sum();
            if union == 0.0 {
                continue;
            }
            // Unsmoothed dice makes the identity exact.
            let d = soft_dice(a.view(), b.view(), 0.0);
            let j = dice_jaccard(d).unwrap();
            assert!((j - inter / union).abs() < 1e-12, "j {j} vs {}", inter / union);
        }
    }

    #[test]
    fn bce_matches_scalar_oracle() {
        let mut p = Array3::zeros((1, 1, 2));
        p[[0, 0, 0]] = 0.7;
        p[[0, 0, 1]] = 0.2;
        let mut g = Array3::zeros((1, 1, 2));
        g[[0, 0, 0]] = 1.0;
        let (loss, grad) = bce_loss_grad(&p.view(), &g.view()).unwrap();
        let expect = (-(0.7f64.ln()) - (0.8f64.ln())) / 2.0;
        assert!((loss - expect).abs() < 1e-12, "loss {loss} vs {expect}");
        // d/dp of -(ln p)/2 at p=0.7 is -1/(2*0.7).
        assert!((grad[[0, 0, 0]] + 1.0 / 1.4).abs() < 1e-12);
        // d/dp of -(ln(1-p))/2 at p=0.2 is 1/(2*0.8).
        assert!((grad[[0, 0, 1]] - 1.0 / 1.6).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = Array3::<f64>::zeros((2, 4, 4));
        let g = Array3::<f64>::zeros((2, 4, 5));
        assert!(wid_loss(&p.view(), &g.view(), &LossConfig::default()).is_err());
        let g = Array3::<f64>::zeros((3, 4, 4));
        assert!(wid_loss(&p.view(), &g.view(), &LossConfig::default()).is_err());
        let g = Array3::<f64>::zeros((2, 0, 4));
        let p = Array3::<f64>::zeros((2, 0, 4));
        assert!(wid_loss(&p.view(), &g.view(), &LossConfig::default()).is_err());
    }
}
