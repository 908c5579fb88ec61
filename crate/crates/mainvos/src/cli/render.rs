//! Overlay rendering: blend instance labels over RGB frames for visual
//! inspection of ground truth or predictions.

use std::fs;
use std::path::Path;

use image::RgbImage;
use ndarray::Array2;

use crate::data::Frame;
use crate::error::{ensure, Error, Result};

/// Distinct, high-contrast colors; instance `k` uses entry `(k - 1) % len`.
const PALETTE: [[u8; 3]; 8] = [
    [230, 57, 70],   // red
    [69, 123, 157],  // steel blue
    [42, 157, 143],  // teal
    [244, 162, 97],  // orange
    [155, 93, 229],  // violet
    [233, 196, 106], // gold
    [0, 180, 216],   // cyan
    [214, 93, 177],  // magenta
];

/// Color assigned to instance label `k >= 1`.
pub fn instance_color(label: u8) -> [u8; 3] {
    PALETTE[(label as usize - 1) % PALETTE.len()]
}

/// Blend `labels` over the frame: background pixels pass through, instance
/// pixels mix toward their instance color by `alpha` in `[0, 1]`.
pub fn overlay_frame(frame: &Frame, labels: &Array2<u8>, alpha: f32) -> Result<RgbImage> {
    ensure((0.0..=1.0).contains(&alpha), || format!("alpha {alpha} outside [0, 1]"))?;
    let (h, w) = (frame.height(), frame.width());
    ensure(labels.dim() == (h, w), || {
        format!("labels {:?} do not match frame {h}x{w}", labels.dim())
    })?;
    let px = frame.pixels();
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let base = [px[[0, y, x]], px[[1, y, x]], px[[2, y, x]]];
            let label = labels[[y, x]];
            let rgb = if label == 0 {
                base
            } else {
                let tint = instance_color(label);
                [
                    base[0] * (1.0 - alpha) + tint[0] as f32 / 255.0 * alpha,
                    base[1] * (1.0 - alpha) + tint[1] as f32 / 255.0 * alpha,
                    base[2] * (1.0 - alpha) + tint[2] as f32 / 255.0 * alpha,
                ]
            };
            img.put_pixel(
                x as u32,
                y as u32,
                image::Rgb(rgb.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)),
            );
        }
    }
    Ok(img)
}

/// Render one overlay PNG per frame into `dir` as `00000.png`, `00001.png`, …
pub fn save_overlays(
    frames: &[Frame],
    labels: &[Array2<u8>],
    alpha: f32,
    dir: &Path,
) -> Result<()> {
    ensure(frames.len() == labels.len(), || {
        format!("{} frames but {} label maps", frames.len(), labels.len())
    })?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (t, (frame, lab)) in frames.iter().zip(labels).enumerate() {
        let img = overlay_frame(frame, lab, alpha)?;
        let path = dir.join(format!("{t:05}.png"));
        img.save(&path)
            .map_err(|e| Error::format(&path, format!("png encode failed: {e}")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn gray_frame(h: usize, w: usize, value: f32) -> Frame {
        Frame::new(Array3::from_elem((3, h, w), value), 0).unwrap()
    }

    #[test]
    fn background_pixels_pass_through_unchanged() {
        let frame = gray_frame(4, 6, 0.5);
        let labels = Array2::<u8>::zeros((4, 6));
        let img = overlay_frame(&frame, &labels, 0.7).unwrap();
        assert_eq!(img.dimensions(), (6, 4));
        assert_eq!(img.get_pixel(0, 0).0, [128, 128, 128]);
    }

    #[test]
    fn instance_pixels_blend_toward_their_color() {
        let frame = gray_frame(2, 2, 0.0);
        let mut labels = Array2::<u8>::zeros((2, 2));
        labels[[0, 1]] = 1;
        let img = overlay_frame(&frame, &labels, 1.0).unwrap();
        assert_eq!(img.get_pixel(1, 0).0, instance_color(1), "alpha 1 is the pure tint");
        assert_eq!(img.get_pixel(0, 0).0, [0, 0, 0], "background stays black");
        let half = overlay_frame(&frame, &labels, 0.5).unwrap();
        let expect = instance_color(1).map(|c| (c as f32 / 255.0 * 0.5 * 255.0).round() as u8);
        assert_eq!(half.get_pixel(1, 0).0, expect);
    }

    #[test]
    fn palette_colors_are_distinct_and_cycle() {
        for a in 1..=8u8 {
            for b in (a + 1)..=8u8 {
                assert_ne!(instance_color(a), instance_color(b));
            }
        }
        assert_eq!(instance_color(9), instance_color(1));
    }

    #[test]
    fn shape_mismatch_and_bad_alpha_are_rejected() {
        let frame = gray_frame(4, 4, 0.2);
        let labels = Array2::<u8>::zeros((4, 5));
        assert!(overlay_frame(&frame, &labels, 0.5).is_err());
        let ok = Array2::<u8>::zeros((4, 4));
        assert!(overlay_frame(&frame, &ok, 1.5).is_err());
    }

    #[test]
    fn save_overlays_writes_one_png_per_frame() {
        let dir = tempfile::tempdir().unwrap();
        let frames = vec![gray_frame(4, 4, 0.3), gray_frame(4, 4, 0.6)];
        let labels = vec![Array2::<u8>::zeros((4, 4)), Array2::<u8>::ones((4, 4))];
        save_overlays(&frames, &labels, 0.5, dir.path()).unwrap();
        assert!(dir.path().join("00000.png").exists());
        assert!(dir.path().join("00001.png").exists());
        let img = image::open(dir.path().join("00001.png")).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (4, 4));
    }
}
