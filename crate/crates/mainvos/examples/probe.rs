//! Temporary diagnostic: per-channel logit health during binding.
//!
//! args: [multi|single] [warmup_iters] [lr] [steps] [grad_clip]

use mainvos::net::NetworkConfig;
use mainvos::synth::{generate_scene, SceneSpec};
use mainvos::train::{TrainConfig, Trainer};
use mainvos::Result;
use ndarray::Axis;

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let multi = args.get(1).map(String::as_str) == Some("multi");
    let warmup: u64 = args.get(2).map(|s| s.parse().expect("warmup")).unwrap_or(0);
    let lr: f64 = args.get(3).map(|s| s.parse().expect("lr")).unwrap_or(1e-4);
    let steps: u64 = args.get(4).map(|s| s.parse().expect("steps")).unwrap_or(1501);
    let clip: Option<f64> = args.get(5).map(|s| s.parse().expect("clip"));
    let weights = if multi { vec![0.0, 0.5, 0.5] } else { vec![1.0] };
    let seq = generate_scene(&SceneSpec {
        id: "probe".into(),
        seed: 40,
        frame_count: 8,
        height: 64,
        width: 96,
        channel_capacity: 3,
        instance_count_weights: weights,
        ..SceneSpec::default()
    })?;
    println!(
        "multi = {multi}, warmup = {warmup}, lr = {lr}, steps = {steps}, clip = {clip:?}, instances = {}",
        seq.instance_count()
    );
    let cfg = NetworkConfig::with_capacity(3);
    let train_cfg = TrainConfig {
        seed: 9,
        warmup_iters: warmup,
        base_lr: lr,
        grad_clip: clip,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(cfg, train_cfg)?;
    let data = vec![seq.clone()];

    for step in 0..steps {
        let (input, targets) = trainer.sample_frame_batch(&data, false, step)?;
        let loss = trainer.step_on_batch(&input, &targets)?;
        if step % 250 == 0 || step + 1 == steps {
            // Logit health on a held-out sampled batch: per channel, range
            // over the whole batch and mean over that channel's gt pixels.
            let (vi, vt) = trainer.sample_frame_batch(&data, false, 900_000 + step)?;
            let logits = trainer.net.forward_eval(&vi);
            let mut report = String::new();
            for c in 0..3 {
                let mut lo = f32::INFINITY;
                let mut hi = f32::NEG_INFINITY;
                let mut gt_sum = 0.0f64;
                let mut gt_n = 0usize;
                for b in 0..vi.dim().0 {
                    let z = logits.index_axis(Axis(0), b);
                    let zc = z.index_axis(Axis(0), c);
                    let gc = vt.index_axis(Axis(0), b);
                    let gc = gc.index_axis(Axis(0), c);
                    for (zv, gv) in zc.iter().zip(gc.iter()) {
                        lo = lo.min(*zv);
                        hi = hi.max(*zv);
                        if *gv >= 0.5 {
                            gt_sum += *zv as f64;
                            gt_n += 1;
                        }
                    }
                }
                let gt_mean = if gt_n > 0 { gt_sum / gt_n as f64 } else { f64::NAN };
                report += &format!("  ch{c}[{lo:9.1},{hi:7.1}|gt {gt_mean:7.1}]");
            }
            println!("step {step:4} loss {loss:.4}{report}");
        }
    }
    Ok(())
}
