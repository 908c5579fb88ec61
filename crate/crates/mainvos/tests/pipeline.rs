//! End-to-end command-line pipeline: generate data, train, segment,
//! evaluate, render overlays, and ablate, all inside one temporary
//! directory, exercising the exact argument surface a user types.

use std::fs;
use std::path::Path;

use clap::Parser;
use mainvos::cli::{run, Cli, RunConfig, DATA_ROOT_ENV};
use mainvos::net::{cue_input_channels, NetworkConfig};
use mainvos::train::{CurriculumSchedule, HorizonStage, TrainConfig};
use tempfile::TempDir;

// ---------------------------------------------------------------------------
// Fixtures
// ---------------------------------------------------------------------------

/// A desk-test configuration small enough for debug builds: four tiny
/// scenes, a four-stage [4, 4, 8, 8] network, and a curriculum of a few
/// iterations per phase.
fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.dataset.scene.frame_count = 4;
    cfg.dataset.scene.height = 32;
    cfg.dataset.scene.width = 48;
    cfg.dataset.scene.channel_capacity = 2;
    cfg.dataset.scene.instance_count_weights = vec![0.7, 0.3];
    cfg.dataset.scene_count = 4;
    cfg.dataset.train_fraction = 0.5;
    cfg.dataset.val_unseen_count = 1;
    cfg.net = NetworkConfig {
        input_channels: cue_input_channels(2),
        capacity: 2,
        stage_channels: [4, 4, 8, 8],
        fpn_width: 4,
        dilation_set: [1, 2, 3],
        separable: true,
    };
    cfg.train = TrainConfig {
        seed: 5,
        batch_size: 2,
        schedule: CurriculumSchedule {
            phase1_iters: 4,
            phase2_iters: 2,
            horizons: vec![HorizonStage { length: 2, epochs: 1, self_sta: true }],
        },
        ..TrainConfig::default()
    };
    cfg
}

fn write_config(cfg: &RunConfig, dir: &Path) -> String {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

/// Parse and execute one command line.
fn cli(args: &[&str]) -> mainvos::Result<()> {
    let mut argv = vec!["mainvos"];
    argv.extend_from_slice(args);
    run(Cli::try_parse_from(argv).expect("arguments should parse"))
}

fn count_files(dir: &Path, ext: &str) -> usize {
    fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .filter(|e| e.path().extension().is_some_and(|x| x == ext))
                .count()
        })
        .unwrap_or(0)
}

// ---------------------------------------------------------------------------
// The full round trip
// ---------------------------------------------------------------------------

#[test]
fn full_pipeline_round_trip() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().join("data");
    let root_s = root.to_str().unwrap();
    let cfg = tiny_config();
    let cfg_path = write_config(&cfg, tmp.path());

    // --- generate-data ----------------------------------------------------
    cli(&["generate-data", "--config", &cfg_path, "--data-root", root_s]).unwrap();
    assert!(root.join("split.json").exists());
    let split: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join("split.json")).unwrap()).unwrap();
    let train_ids = split["train"].as_array().unwrap();
    let seen_ids = split["val_seen"].as_array().unwrap();
    let unseen_ids = split["val_unseen"].as_array().unwrap();
    assert_eq!(train_ids.len(), 2);
    assert_eq!(seen_ids.len(), 2);
    assert_eq!(unseen_ids.len(), 1);
    let first_id = train_ids[0].as_str().unwrap();
    let seq_dir = root.join(first_id);
    assert_eq!(count_files(&seq_dir.join("frames"), "png"), 4);
    assert_eq!(count_files(&seq_dir.join("masks"), "png"), 4);
    assert_eq!(count_files(&seq_dir.join("flow_fwd"), "flo"), 3);
    assert_eq!(count_files(&seq_dir.join("flow_bwd"), "flo"), 3);
    assert!(seq_dir.join("tubes.json").exists());
    assert!(seq_dir.join("meta.json").exists());

    // --- train --------------------------------------------------------------
    let train_out = tmp.path().join("train");
    let train_out_s = train_out.to_str().unwrap();
    cli(&[
        "train", "--config", &cfg_path, "--data-root", root_s, "--out", train_out_s,
    ])
    .unwrap();
    let ckpt = train_out.join("model.ckpt");
    assert!(ckpt.exists());
    assert!(train_out.join("report.json").exists());
    assert!(train_out.join("effective-config.json").exists());
    let metrics = fs::read_to_string(train_out.join("metrics.ndjson")).unwrap();
    assert!(!metrics.trim().is_empty(), "training must stream metrics");
    for line in metrics.lines() {
        let v: serde_json::Value = serde_json::from_str(line).expect("ndjson line parses");
        assert!(v["iteration"].is_u64(), "metrics line missing iteration: {line}");
        assert!(v["phase"].is_string(), "metrics line missing phase: {line}");
    }
    let ckpt_s = ckpt.to_str().unwrap();

    // --- infer ---------------------------------------------------------------
    let infer_out = tmp.path().join("infer");
    let infer_out_s = infer_out.to_str().unwrap();
    cli(&[
        "infer", "--config", &cfg_path, "--data-root", root_s, "--checkpoint", ckpt_s,
        "--split", "val-seen", "--overlay", "--out", infer_out_s,
    ])
    .unwrap();
    for id in seen_ids {
        let id = id.as_str().unwrap();
        assert_eq!(count_files(&infer_out.join(id).join("masks"), "png"), 4);
        assert_eq!(count_files(&infer_out.join(id).join("overlay"), "png"), 4);
    }

    // --- evaluate --------------------------------------------------------------
    let eval_out = tmp.path().join("eval");
    let eval_out_s = eval_out.to_str().unwrap();
    cli(&[
        "evaluate", "--config", &cfg_path, "--data-root", root_s, "--checkpoint", ckpt_s,
        "--curve", "--out", eval_out_s,
    ])
    .unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval_out.join("report.json")).unwrap()).unwrap();
    let j = report["overall"]["mean_j"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&j), "mean J {j} outside [0, 1]");
    let curve = fs::read_to_string(eval_out.join("temporal_curve.csv")).unwrap();
    assert!(curve.starts_with("frame,mean_j,survival,alive"));
    assert!(curve.lines().count() > 1, "curve must contain data rows");

    // --- render-overlay -------------------------------------------------------
    let overlay_out = tmp.path().join("overlay");
    let overlay_out_s = overlay_out.to_str().unwrap();
    cli(&[
        "render-overlay", "--config", &cfg_path, "--data-root", root_s,
        "--sequence", first_id, "--out", overlay_out_s,
    ])
    .unwrap();
    assert_eq!(count_files(&overlay_out.join(first_id), "png"), 4);

    // --- ablate (loss grid, one seed) -----------------------------------------
    let ablate_out = tmp.path().join("ablate");
    let ablate_out_s = ablate_out.to_str().unwrap();
    cli(&[
        "ablate", "--config", &cfg_path, "--data-root", root_s, "--grid", "loss",
        "--seeds", "1", "--out", ablate_out_s,
    ])
    .unwrap();
    let csv = fs::read_to_string(ablate_out.join("results.csv")).unwrap();
    assert!(csv.starts_with("name,mean_j,std_j,seed_1"));
    assert_eq!(csv.lines().count(), 4, "header plus wid/dice/bce rows:\n{csv}");
    for cell in ["wid", "dice", "bce"] {
        assert!(csv.contains(cell), "missing loss cell {cell}:\n{csv}");
    }
    let summary = fs::read_to_string(ablate_out.join("summary.txt")).unwrap();
    assert!(summary.contains("ranking:"), "summary should rank cells:\n{summary}");

    // --- resume: a second leg of training continues from the checkpoint -------
    let resume_out = tmp.path().join("resume");
    let resume_out_s = resume_out.to_str().unwrap();
    cli(&[
        "train", "--config", &cfg_path, "--data-root", root_s, "--out", resume_out_s,
        "--resume", ckpt_s,
    ])
    .unwrap();
    assert!(resume_out.join("model.ckpt").exists());
}

// ---------------------------------------------------------------------------
// Error surfaces
// ---------------------------------------------------------------------------

#[test]
fn malformed_config_is_a_validation_error() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    let err = cli(&["generate-data", "--config", bad.to_str().unwrap()]).unwrap_err();
    assert_eq!(err.exit_code(), 1, "malformed config must exit 1, got {err}");

    // Unknown keys are rejected, not ignored.
    let unknown = tmp.path().join("unknown.json");
    fs::write(
        &unknown,
        serde_json::to_string(&serde_json::json!({
            "schema_version": 1,
            "no_such_key": true,
        }))
        .unwrap(),
    )
    .unwrap();
    let err = cli(&["generate-data", "--config", unknown.to_str().unwrap()]).unwrap_err();
    assert_eq!(err.exit_code(), 1, "unknown config keys must exit 1, got {err}");
}

#[test]
fn unknown_split_and_missing_checkpoint_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().join("data");
    let cfg = tiny_config();
    let cfg_path = write_config(&cfg, tmp.path());
    cli(&["generate-data", "--config", &cfg_path, "--data-root", root.to_str().unwrap()])
        .unwrap();

    let missing = tmp.path().join("nope.ckpt");
    let err = cli(&[
        "infer", "--config", &cfg_path, "--data-root", root.to_str().unwrap(),
        "--checkpoint", missing.to_str().unwrap(), "--split", "sideways",
    ])
    .unwrap_err();
    assert!(err.exit_code() != 0, "bad invocation must not exit 0");
}

#[test]
fn data_root_falls_back_to_the_environment() {
    // The flag wins over everything; the environment variable fills in when
    // neither the flag nor the config names a root.
    let cfg = RunConfig::default();
    std::env::set_var(DATA_ROOT_ENV, "/tmp/env-root");
    assert_eq!(cfg.resolve_data_root(None), Path::new("/tmp/env-root"));
    assert_eq!(cfg.resolve_data_root(Some(Path::new("/flag"))), Path::new("/flag"));
    std::env::remove_var(DATA_ROOT_ENV);
    assert_eq!(cfg.resolve_data_root(None), Path::new("data"));
}
