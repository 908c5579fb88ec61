//! Render every input cue for one frame of a synthetic scene: the RGB
//! frame, unit-flow channels, the long-term attention boxes, and the
//! short-term attention (previous mask warped along backward flow).

use std::path::Path;

use image::{GrayImage, RgbImage};
use mainvos::cli::render::{overlay_frame, save_overlays};
use mainvos::cues::{assemble_input, flow_channels, lta_from_tube, sta_from_prediction, FlowMode};
use mainvos::synth::{generate_scene, SceneSpec};
use mainvos::Result;
use ndarray::ArrayView2;

/// Save one channel (values in [-1, 1] or [0, 1]) as a grayscale PNG.
fn save_plane(plane: ArrayView2<'_, f32>, lo: f32, hi: f32, path: &Path) {
    let (h, w) = plane.dim();
    let mut img = GrayImage::new(w as u32, h as u32);
    for ((y, x), &v) in plane.indexed_iter() {
        let n = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        img.put_pixel(x as u32, y as u32, image::Luma([(n * 255.0).round() as u8]));
    }
    img.save(path).expect("png encode");
}

fn main() -> Result<()> {
    let out = Path::new("examples-output/cues");
    std::fs::create_dir_all(out).expect("create output dir");

    let spec = SceneSpec {
        id: "cue-demo".into(),
        seed: 11,
        frame_count: 8,
        height: 64,
        width: 96,
        ..SceneSpec::default()
    };
    let seq = generate_scene(&spec)?;
    let n = spec.channel_capacity;
    let t = 3; // the frame whose cues we assemble
    println!("scene '{}': {} instances at {}x{}", seq.id, seq.instance_count(), 64, 96);

    // Motion cue: unit direction + per-frame normalized magnitude.
    let flow = flow_channels(&seq.flows_bwd[t - 1], FlowMode::Unit);
    save_plane(flow.index_axis(ndarray::Axis(0), 0), -1.0, 1.0, &out.join("flow_dx.png"));
    save_plane(flow.index_axis(ndarray::Axis(0), 1), -1.0, 1.0, &out.join("flow_dy.png"));
    save_plane(flow.index_axis(ndarray::Axis(0), 2), 0.0, 1.0, &out.join("flow_mag.png"));

    // Location cue: box indicator per instance channel.
    let lta = lta_from_tube(&seq.tubes, t, n, seq.height(), seq.width())?;
    // Shape cue: warp of the previous ground truth (at inference it is the
    // previous prediction).
    let sta = sta_from_prediction(&seq.gt_masks[t - 1], &seq.flows_bwd[t - 1], n)?;
    for k in 0..seq.instance_count() {
        save_plane(lta.index_axis(ndarray::Axis(0), k), 0.0, 1.0, &out.join(format!("lta_{k}.png")));
        save_plane(sta.index_axis(ndarray::Axis(0), k), 0.0, 1.0, &out.join(format!("sta_{k}.png")));
    }

    // The assembled model input stacks [RGB | flow | LTA | STA].
    let input = assemble_input(&seq.frames[t], &flow, &lta, &sta)?;
    let (c, h, w) = input.tensor.dim();
    println!("assembled input tensor: {c} channels ({h}x{w}) = 6 + 2x{n}");

    // RGB frame and a ground-truth overlay for orientation.
    let rgb: RgbImage = overlay_frame(&seq.frames[t], &seq.gt_masks[t].to_index_map()?, 0.0)?;
    rgb.save(out.join("frame.png")).expect("png encode");
    let labels: Vec<_> =
        seq.gt_masks.iter().map(|m| m.to_index_map()).collect::<Result<_>>()?;
    save_overlays(&seq.frames, &labels, 0.45, &out.join("overlay"))?;

    println!("cue renderings written to {}", out.display());
    Ok(())
}
