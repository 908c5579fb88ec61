//! Temporary diagnostic: sampled-batch loss slope on the tiny unit-test net.

use mainvos::net::{cue_input_channels, NetworkConfig};
use mainvos::synth::{generate_scene, SceneSpec};
use mainvos::train::{TrainConfig, Trainer};
use mainvos::Result;

fn main() -> Result<()> {
    let data = vec![generate_scene(&SceneSpec {
        id: "train-1".into(),
        seed: 1,
        frame_count: 4,
        height: 32,
        width: 48,
        channel_capacity: 2,
        instance_count_weights: vec![0.7, 0.3],
        ..SceneSpec::default()
    })?];
    let net = NetworkConfig {
        input_channels: cue_input_channels(2),
        capacity: 2,
        stage_channels: [4, 4, 8, 8],
        fpn_width: 4,
        dilation_set: [1, 2, 3],
        separable: true,
    };
    let cfg = TrainConfig { seed: 7, batch_size: 2, base_lr: 1e-3, ..TrainConfig::default() };
    let mut tr = Trainer::new(net, cfg)?;
    let mut losses = Vec::new();
    for step in 0..40 {
        let (input, targets) = tr.sample_frame_batch(&data, false, step)?;
        losses.push(tr.step_on_batch(&input, &targets)?);
    }
    for w in (0..40).step_by(20) {
        let mean: f64 = losses[w..w + 20].iter().sum::<f64>() / 20.0;
        println!("steps {w:3}..{:3}: mean loss {mean:.4}", w + 20);
    }
    Ok(())
}
