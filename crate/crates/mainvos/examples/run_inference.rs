//! Causal inference on a fresh scene: seed from the first frame's ground
//! truth, then propagate frame by frame, feeding each prediction back as
//! the next short-term attention. Runs once with exact box tubes and once
//! with a drifting, dropping tracker simulation.

use std::path::Path;

use mainvos::cli::render::save_overlays;
use mainvos::cues::BoxNoiseConfig;
use mainvos::eval::score_sequence;
use mainvos::infer::{segment_sequence, segment_video, GtFlows, GtTubes, InferConfig, NoisyTubes};
use mainvos::net::{cue_input_channels, NetworkConfig};
use mainvos::synth::{generate_scene, SceneSpec};
use mainvos::train::{TrainConfig, Trainer};
use mainvos::Result;
use rand::SeedableRng;

fn scene(seed: u64) -> Result<mainvos::data::VideoSequence> {
    generate_scene(&SceneSpec {
        id: format!("infer-{seed}"),
        seed,
        frame_count: 10,
        height: 64,
        width: 96,
        channel_capacity: 3,
        instance_count_weights: vec![0.5, 0.5],
        ..SceneSpec::default()
    })
}

fn main() -> Result<()> {
    let out = Path::new("examples-output/inference");
    std::fs::create_dir_all(out).expect("create output dir");

    // A short warmup gives the model something to propagate.
    let train_scenes: Vec<_> = (0..3u64).map(|s| scene(60 + s)).collect::<Result<_>>()?;
    let net_cfg = NetworkConfig {
        input_channels: cue_input_channels(3),
        capacity: 3,
        stage_channels: [8, 16, 32, 64],
        fpn_width: 16,
        dilation_set: [1, 2, 3],
        separable: true,
    };
    let mut trainer =
        Trainer::new(net_cfg, TrainConfig { seed: 2, base_lr: 1e-3, ..TrainConfig::default() })?;
    for step in 0..200 {
        let (input, targets) = trainer.sample_frame_batch(&train_scenes, false, step)?;
        trainer.step_on_batch(&input, &targets)?;
    }

    let seq = scene(99)?;
    let cfg = InferConfig::default();
    println!("segmenting '{}' ({} frames, {} instances)", seq.id, seq.len(), seq.instance_count());

    // Flow and tube sources are trait objects, so the pipeline runs the
    // same whether cues come from ground truth, a tracker, or a flow net.
    // With exact providers this call equals the `segment_video` shortcut.
    let clean = segment_sequence(
        &trainer.net,
        &seq.frames,
        &seq.gt_masks[0],
        &GtFlows(&seq),
        &GtTubes(&seq),
        &cfg,
    )?;
    let shortcut = segment_video(&trainer.net, &seq, &cfg)?;
    assert_eq!(clean.labels, shortcut.labels);
    let scores = score_sequence(&clean.labels, &seq.gt_masks, None)?;
    println!("exact tubes:  per-instance J {:?}", scores.per_instance_j);

    // The same pipeline with a simulated tracker: boxes drift, scale-jitter,
    // and occasionally drop out entirely.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let noisy_tubes = NoisyTubes::new(&seq, &BoxNoiseConfig::default(), &mut rng)?;
    let noisy = segment_sequence(
        &trainer.net,
        &seq.frames,
        &seq.gt_masks[0],
        &GtFlows(&seq),
        &noisy_tubes,
        &cfg,
    )?;
    let noisy_scores = score_sequence(&noisy.labels, &seq.gt_masks, None)?;
    println!("noisy tubes:  per-instance J {:?}", noisy_scores.per_instance_j);

    save_overlays(&seq.frames, &clean.labels, 0.5, &out.join("overlay"))?;
    println!("prediction overlays written to {}", out.join("overlay").display());
    Ok(())
}
