//! Train briefly, then score the model the way a benchmark would: region
//! similarity J and boundary F per instance, aggregated over seen- and
//! unseen-category validation splits, plus the temporal-consistency curve.

use mainvos::eval::{evaluate_dataset, temporal_curve};
use mainvos::infer::{segment_video, InferConfig};
use mainvos::net::{cue_input_channels, NetworkConfig};
use mainvos::synth::{generate_split, DatasetSpec, SceneSpec};
use mainvos::train::{MetricsSink, TrainConfig, Trainer};
use mainvos::Result;

fn main() -> Result<()> {
    let spec = DatasetSpec {
        scene: SceneSpec {
            id: "eval".into(),
            seed: 3,
            frame_count: 8,
            height: 64,
            width: 96,
            channel_capacity: 3,
            instance_count_weights: vec![0.6, 0.4],
            ..SceneSpec::default()
        },
        scene_count: 8,
        train_fraction: 0.75,
        val_unseen_count: 2,
        ..DatasetSpec::default()
    };
    let data = generate_split(&spec)?.materialize()?;
    println!(
        "{} train / {} val-seen / {} val-unseen scenes",
        data.train.len(),
        data.val_seen.len(),
        data.val_unseen.len()
    );

    let net_cfg = NetworkConfig {
        input_channels: cue_input_channels(3),
        capacity: 3,
        stage_channels: [8, 16, 32, 64],
        fpn_width: 16,
        dilation_set: [1, 2, 3],
        separable: true,
    };
    let mut cfg = TrainConfig { seed: 4, base_lr: 1e-3, ..TrainConfig::default() };
    cfg.schedule.phase1_iters = 150;
    cfg.schedule.phase2_iters = 50;
    cfg.schedule.horizons.clear(); // keep the example fast
    let mut trainer = Trainer::new(net_cfg, cfg)?;
    trainer.run_curriculum(&data.train, &data.val_seen, &data.val_unseen, &mut MetricsSink::null())?;

    // The report aggregates per-instance scores; a missing split would
    // simply leave its aggregate out (None), never fake a number.
    let infer_cfg = InferConfig::default();
    let report = evaluate_dataset(&trainer.net, &data.val_seen, &data.val_unseen, &infer_cfg)?;
    println!(
        "overall: J {:.3}  F {:.3}  J&F {:.3} over {} instances",
        report.overall.mean_j, report.overall.mean_f, report.overall.mean_jf,
        report.overall.instances
    );
    if let Some(s) = &report.seen {
        println!("seen:    J {:.3}  F {:.3}", s.mean_j, s.mean_f);
    }
    if let Some(u) = &report.unseen {
        println!("unseen:  J {:.3}  F {:.3}", u.mean_j, u.mean_f);
    }
    for sr in &report.sequences {
        println!(
            "  {}: {} instances, J {:.3}, F {:.3}",
            sr.id, sr.instance_count, sr.mean_j, sr.mean_f
        );
    }

    // Temporal consistency: mean J and instance survival per frame index.
    let mut runs_data = Vec::new();
    for seq in data.val_seen.iter().chain(&data.val_unseen) {
        let result = segment_video(&trainer.net, seq, &infer_cfg)?;
        runs_data.push((result.labels, seq.gt_masks.clone()));
    }
    let runs: Vec<(&[_], &[_])> =
        runs_data.iter().map(|(l, g)| (l.as_slice(), g.as_slice())).collect();
    println!("frame | mean J | survival | alive");
    for p in temporal_curve(&runs) {
        println!("{:>5} | {:.3}  | {:.2}     | {}", p.frame, p.mean_j, p.survival, p.alive);
    }
    Ok(())
}
