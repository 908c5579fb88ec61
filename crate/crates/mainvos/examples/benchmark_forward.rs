//! Measure per-frame segmentation latency as the instance count grows.
//! All instances share a single forward pass, so the timings should be
//! essentially flat from one instance up to the channel capacity.

use mainvos::net::{cue_input_channels, MainNetwork, NetworkConfig};
use mainvos::infer::benchmark_forward;
use mainvos::Result;

fn main() -> Result<()> {
    let capacity = 6;
    let cfg = NetworkConfig {
        input_channels: cue_input_channels(capacity),
        capacity,
        stage_channels: [8, 16, 32, 64],
        fpn_width: 16,
        dilation_set: [1, 2, 3],
        separable: true,
    };
    let net = MainNetwork::new(cfg.clone(), 0)?;
    println!(
        "network: {} params, input {} channels, capacity {capacity}",
        net.parameter_count(),
        cfg.input_channels
    );

    let counts: Vec<usize> = (1..=capacity).collect();
    let report = benchmark_forward(&net, 64, 96, &counts, 9, 42)?;

    println!("\nper-frame median latency at {}x{}:", report.height, report.width);
    println!("{:>10} {:>12}", "instances", "median ms");
    for &(m, ms) in &report.timings {
        println!("{m:>10} {ms:>12.2}");
    }

    let fastest = report.timings.iter().map(|&(_, ms)| ms).fold(f64::INFINITY, f64::min);
    let slowest = report.timings.iter().map(|&(_, ms)| ms).fold(0.0f64, f64::max);
    println!("\nslowest / fastest = {:.3} (single-pass design keeps this near 1)", slowest / fastest);
    Ok(())
}
