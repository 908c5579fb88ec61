//! Run the loss-function ablation grid at miniature scale: three cells
//! (weighted instance dice, plain dice, binary cross-entropy) trained from
//! the same base configuration and scored on a shared validation split.

use mainvos::cli::{grid_cells, trend_summary};
use mainvos::net::{cue_input_channels, NetworkConfig};
use mainvos::synth::{generate_split, DatasetSpec, SceneSpec};
use mainvos::train::{run_ablation, MetricsSink, TrainConfig};
use mainvos::Result;

fn main() -> Result<()> {
    let spec = DatasetSpec {
        scene: SceneSpec {
            id: "ablate".into(),
            seed: 17,
            frame_count: 6,
            height: 48,
            width: 64,
            channel_capacity: 2,
            instance_count_weights: vec![0.7, 0.3],
            ..SceneSpec::default()
        },
        scene_count: 6,
        train_fraction: 0.67,
        val_unseen_count: 1,
        ..DatasetSpec::default()
    };
    let data = generate_split(&spec)?.materialize()?;
    let mut val = data.val_seen.clone();
    val.extend(data.val_unseen.clone());

    let net = NetworkConfig {
        input_channels: cue_input_channels(2),
        capacity: 2,
        stage_channels: [8, 16, 32, 64],
        fpn_width: 8,
        dilation_set: [1, 2, 3],
        separable: true,
    };
    let mut base = TrainConfig { seed: 0, base_lr: 1e-3, ..TrainConfig::default() };
    base.schedule.phase1_iters = 120;
    base.schedule.phase2_iters = 0;
    base.schedule.horizons.clear(); // miniature budget

    // Each cell differs from the base in exactly one axis. Other grids:
    // "cues", "flow", "decoder", "width", "dilation", or "all" (11 cells).
    let cells = grid_cells("loss", &net, &base)?;
    println!("cells: {:?}", cells.iter().map(|c| c.name.as_str()).collect::<Vec<_>>());

    let seeds = [1u64, 2];
    let outcomes = run_ablation(&cells, &seeds, &data.train, &val, &mut MetricsSink::null())?;
    for o in &outcomes {
        println!(
            "{:<6} mean J {:.3} (std {:.3}) per-seed {:?}",
            o.name, o.mean_j, o.std_j, o.per_seed_j
        );
    }
    println!("{}", trend_summary("loss", &outcomes));
    Ok(())
}
