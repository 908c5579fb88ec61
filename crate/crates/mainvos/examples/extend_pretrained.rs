//! Widen a plain RGB segmentation network so its first layer accepts the
//! full cue tensor (RGB + flow + per-instance location and shape cues).
//! Only the first convolution kernel changes; with the new channels fed
//! zeros the extended network reproduces the original output bit for bit,
//! so pretrained RGB weights carry over without any fidelity loss.

use mainvos::net::{cue_input_channels, MainNetwork, NetworkConfig};
use mainvos::Result;
use ndarray::{s, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let rgb_cfg = NetworkConfig {
        input_channels: 3,
        capacity: 3,
        stage_channels: [8, 16, 32, 64],
        fpn_width: 16,
        dilation_set: [1, 2, 3],
        separable: true,
    };
    let rgb_net = MainNetwork::new(rgb_cfg, 77)?;
    let extended = rgb_net.extended_for_cues()?;

    println!("rgb network:      {:>7} params, {} input channels", rgb_net.parameter_count(), 3);
    println!(
        "extended network: {:>7} params, {} input channels (+{} params in the first kernel)",
        extended.parameter_count(),
        extended.cfg.input_channels,
        extended.parameter_count() - rgb_net.parameter_count()
    );

    // Same image through both: the RGB net directly, the extended net with
    // all cue channels zeroed.
    let (h, w) = (48, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut rgb = Array4::zeros((1, 3, h, w));
    for v in rgb.iter_mut() {
        *v = rng.gen_range(0.0f32..1.0);
    }
    let mut padded = Array4::zeros((1, cue_input_channels(3), h, w));
    padded.slice_mut(s![.., 0..3, .., ..]).assign(&rgb);

    let base = rgb_net.forward_eval(&rgb);
    let ext = extended.forward_eval(&padded);
    let max_diff = base
        .iter()
        .zip(ext.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    println!("max |difference| on zero cues: {max_diff:e}");
    assert_eq!(base, ext, "extension must be exact on zero cue channels");
    println!("outputs are bit-identical; cue channels start as a no-op and train from there");
    Ok(())
}
