//! Command-line entry point: dataset generation, training, inference,
//! evaluation, ablation, and overlay rendering behind one versioned
//! configuration schema.
//!
//! Every subcommand accepts `--config <file>` (JSON) plus flag overrides;
//! the merged effective configuration is written next to the artifacts it
//! produced, so any run can be reproduced by pointing `--config` at that
//! file. The dataset root resolves in order: `--data-root` flag, the
//! config's `data_root`, the `MAIN_VOS_DATA_ROOT` environment variable,
//! then `./data`.
//!
//! Exit codes: 0 success, 1 validation/usage error, 2 runtime failure.

pub mod render;

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::store::{load_mask_dir, load_sequence, load_split, save_sequence, save_split, SplitFile};
use crate::data::{InstanceMaskSet, VideoSequence};
use crate::error::{ensure, Error, Result};
use crate::eval::{evaluate_dataset, temporal_curve, EvalReport};
use crate::infer::{segment_video, InferConfig};
use crate::loss::LossKind;
use crate::net::checkpoint::Checkpoint;
use crate::net::{cue_input_channels, MainNetwork, NetworkConfig};
use crate::synth::{generate_split, DatasetSpec};
use crate::train::{
    run_ablation, standard_grid, AblationCell, AblationOutcome, MetricsSink, TrainConfig, Trainer,
};

/// Name of the dataset-root environment variable.
pub const DATA_ROOT_ENV: &str = "MAIN_VOS_DATA_ROOT";

/// Current config schema; configs with any other version are rejected.
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

/// The one configuration object shared by all subcommands. Unknown keys are
/// errors — a typo in an ablation grid must not silently become a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Dataset root; overridable by `--data-root` and `MAIN_VOS_DATA_ROOT`.
    #[serde(default)]
    pub data_root: Option<PathBuf>,
    /// Reserved parallelism knob; execution is currently sequential.
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default = "default_net")]
    pub net: NetworkConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub infer: InferConfig,
}

fn default_workers() -> usize {
    1
}

fn default_net() -> NetworkConfig {
    NetworkConfig::with_capacity(DatasetSpec::default().scene.channel_capacity)
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            data_root: None,
            workers: default_workers(),
            dataset: DatasetSpec::default(),
            net: default_net(),
            train: TrainConfig::default(),
            infer: InferConfig::default(),
        }
    }
}

impl RunConfig {
    /// Read and validate a config file; `None` yields the defaults.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let cfg = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| {
                    Error::validation(format!("malformed config {}: {e}", p.display()))
                })?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.schema_version == CONFIG_SCHEMA_VERSION, || {
            format!(
                "config schema version {} is not the supported {CONFIG_SCHEMA_VERSION}",
                self.schema_version
            )
        })?;
        ensure(self.workers >= 1, || "workers must be at least 1".into())?;
        self.dataset.scene.validate()?;
        self.net.validate()?;
        self.train.validate()?;
        self.infer.validate()?;
        ensure(self.net.capacity == self.dataset.scene.channel_capacity, || {
            format!(
                "network capacity {} does not match the dataset channel capacity {}",
                self.net.capacity, self.dataset.scene.channel_capacity
            )
        })?;
        ensure(self.net.input_channels == cue_input_channels(self.net.capacity), || {
            format!(
                "network expects {} input channels but the cue stack produces {}",
                self.net.input_channels,
                cue_input_channels(self.net.capacity)
            )
        })?;
        Ok(())
    }

    /// Resolve the dataset root: flag > config > environment > `./data`.
    pub fn resolve_data_root(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        if let Some(p) = &self.data_root {
            return p.clone();
        }
        if let Ok(v) = env::var(DATA_ROOT_ENV) {
            if !v.is_empty() {
                return PathBuf::from(v);
            }
        }
        PathBuf::from("data")
    }
}

/// Write the merged effective config next to a command's artifacts.
fn write_effective_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("effective-config.json");
    let text = serde_json::to_string_pretty(cfg)
        .map_err(|e| Error::runtime("config write", format!("encode: {e}")))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::runtime("json write", format!("encode: {e}")))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Argument surface
// ---------------------------------------------------------------------------

/// Multi-instance video segmentation toolkit.
#[derive(Debug, Parser)]
#[command(name = "mainvos", version, about = "Attention-guided multi-instance video segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
pub struct Common {
    /// JSON configuration file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed override threaded through every random choice of the command.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset root (overrides the config file and MAIN_VOS_DATA_ROOT).
    #[arg(long)]
    pub data_root: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset and write it in the on-disk layout.
    GenerateData {
        #[command(flatten)]
        common: Common,
        /// Override the number of seen-category scenes.
        #[arg(long)]
        scenes: Option<usize>,
    },
    /// Train with the three-phase curriculum; writes checkpoint, metrics,
    /// report, and the effective config.
    Train {
        #[command(flatten)]
        common: Common,
        /// Artifact directory.
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
        /// Loss override: wid, dice, or bce.
        #[arg(long)]
        loss: Option<String>,
        /// Phase-1 iteration override.
        #[arg(long)]
        phase1_iters: Option<usize>,
        /// Phase-2 iteration override.
        #[arg(long)]
        phase2_iters: Option<usize>,
        /// Continue from a checkpoint (its stored config wins).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Segment sequences with a trained checkpoint; writes predicted mask
    /// directories and optional overlays.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Which split to segment: train, val-seen, val-unseen, or all.
        #[arg(long, default_value = "val-seen")]
        split: String,
        /// Restrict to one sequence id.
        #[arg(long)]
        sequence: Option<String>,
        #[arg(long, default_value = "runs/infer")]
        out: PathBuf,
        /// Also render RGB overlays per frame.
        #[arg(long)]
        overlay: bool,
        /// Probability threshold override in (0, 1].
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Score a checkpoint on the validation splits; writes a JSON report.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "runs/eval")]
        out: PathBuf,
        /// Also write the temporal-consistency curve as CSV.
        #[arg(long)]
        curve: bool,
    },
    /// Train every cell of an ablation grid and write the results table.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Grid: all, cues, loss, flow, decoder, width, or dilation.
        #[arg(long, default_value = "all")]
        grid: String,
        /// Comma-separated training seeds (e.g. "1,2,3").
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long, default_value = "runs/ablate")]
        out: PathBuf,
    },
    /// Blend instance masks over the RGB frames as PNG previews.
    RenderOverlay {
        #[command(flatten)]
        common: Common,
        /// Sequence id under the dataset root.
        #[arg(long)]
        sequence: String,
        /// Directory of predicted index masks; ground truth when omitted.
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long, default_value = "runs/overlay")]
        out: PathBuf,
        /// Blend strength in [0, 1].
        #[arg(long, default_value_t = 0.5)]
        alpha: f32,
    },
}

// ---------------------------------------------------------------------------
// Entry points
// ---------------------------------------------------------------------------

/// Parse `argv` and run; returns the process exit code.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version print to stdout and exit 0; real usage
            // errors print to stderr and exit 1.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Execute one parsed command.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData { common, scenes } => cmd_generate_data(common, scenes),
        Command::Train { common, out, loss, phase1_iters, phase2_iters, resume } => {
            cmd_train(common, &out, loss.as_deref(), phase1_iters, phase2_iters, resume.as_deref())
        }
        Command::Infer { common, checkpoint, split, sequence, out, overlay, threshold } => {
            cmd_infer(common, &checkpoint, &split, sequence.as_deref(), &out, overlay, threshold)
        }
        Command::Evaluate { common, checkpoint, out, curve } => {
            cmd_evaluate(common, &checkpoint, &out, curve)
        }
        Command::Ablate { common, grid, seeds, out } => {
            cmd_ablate(common, &grid, seeds.as_deref(), &out)
        }
        Command::RenderOverlay { common, sequence, pred, out, alpha } => {
            cmd_render_overlay(common, &sequence, pred.as_deref(), &out, alpha)
        }
    }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_generate_data(common: Common, scenes: Option<usize>) -> Result<()> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.dataset.scene.seed = seed;
    }
    if let Some(n) = scenes {
        cfg.dataset.scene_count = n;
    }
    let root = cfg.resolve_data_root(common.data_root.as_deref());

    let plan = generate_split(&cfg.dataset)?;
    let data = plan.materialize()?;
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let mut split = SplitFile::default();
    for seq in &data.train {
        save_sequence(seq, &root)?;
        split.train.push(seq.id.clone());
    }
    for seq in &data.val_seen {
        save_sequence(seq, &root)?;
        split.val_seen.push(seq.id.clone());
    }
    for seq in &data.val_unseen {
        save_sequence(seq, &root)?;
        split.val_unseen.push(seq.id.clone());
    }
    save_split(&split, &root)?;
    write_effective_config(&cfg, &root)?;
    println!(
        "wrote {} train / {} val-seen / {} val-unseen sequences to {}",
        split.train.len(),
        split.val_seen.len(),
        split.val_unseen.len(),
        root.display()
    );
    Ok(())
}

/// Load the three splits named by `split.json` under `root`.
fn load_dataset(root: &Path) -> Result<(Vec<VideoSequence>, Vec<VideoSequence>, Vec<VideoSequence>)> {
    let split = load_split(root)?;
    let load_ids = |ids: &[String]| -> Result<Vec<VideoSequence>> {
        ids.iter().map(|id| load_sequence(root, id)).collect()
    };
    Ok((load_ids(&split.train)?, load_ids(&split.val_seen)?, load_ids(&split.val_unseen)?))
}

fn cmd_train(
    common: Common,
    out: &Path,
    loss: Option<&str>,
    phase1_iters: Option<usize>,
    phase2_iters: Option<usize>,
    resume: Option<&Path>,
) -> Result<()> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    if let Some(name) = loss {
        cfg.train.loss = parse_loss(name)?;
    }
    if let Some(n) = phase1_iters {
        cfg.train.schedule.phase1_iters = n;
    }
    if let Some(n) = phase2_iters {
        cfg.train.schedule.phase2_iters = n;
    }
    cfg.validate()?;
    let root = cfg.resolve_data_root(common.data_root.as_deref());
    let (train, val_seen, val_unseen) = load_dataset(&root)?;

    let mut trainer = match resume {
        Some(path) => {
            let t = Trainer::resume(path)?;
            println!(
                "resumed from {} at iteration {} (stored config governs)",
                path.display(),
                t.iteration
            );
            t
        }
        None => Trainer::new(cfg.net.clone(), cfg.train.clone())?,
    };

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_effective_config(&cfg, out)?;
    let mut sink = MetricsSink::to_path(&out.join("metrics.ndjson"))?;
    let report = trainer.run_curriculum(&train, &val_seen, &val_unseen, &mut sink)?;
    trainer.save(&out.join("model.ckpt"))?;
    write_json(&out.join("report.json"), &report)?;

    for phase in &report.phases {
        let seen = phase.val_j_seen.map_or("-".into(), |j| format!("{j:.4}"));
        let unseen = phase.val_j_unseen.map_or("-".into(), |j| format!("{j:.4}"));
        println!(
            "phase {:<12} steps {:>5}  loss {:.4} -> {:.4}  val J seen {seen} unseen {unseen}",
            phase.name, phase.steps, phase.first_loss, phase.last_loss
        );
    }
    println!("checkpoint: {}", out.join("model.ckpt").display());
    Ok(())
}

fn load_network(path: &Path) -> Result<MainNetwork> {
    Checkpoint::load(path)?.build_network()
}

fn cmd_infer(
    common: Common,
    checkpoint: &Path,
    split: &str,
    sequence: Option<&str>,
    out: &Path,
    overlay: bool,
    threshold: Option<f64>,
) -> Result<()> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(t) = threshold {
        cfg.infer.threshold = t;
    }
    cfg.infer.validate()?;
    let root = cfg.resolve_data_root(common.data_root.as_deref());
    let net = load_network(checkpoint)?;

    let split_file = load_split(&root)?;
    let ids: Vec<String> = match sequence {
        Some(id) => vec![id.to_string()],
        None => match split {
            "train" => split_file.train.clone(),
            "val-seen" => split_file.val_seen.clone(),
            "val-unseen" => split_file.val_unseen.clone(),
            "all" => {
                let mut all = split_file.train.clone();
                all.extend(split_file.val_seen.iter().cloned());
                all.extend(split_file.val_unseen.iter().cloned());
                all
            }
            other => {
                return Err(Error::validation(format!(
                    "unknown split '{other}' (expected train, val-seen, val-unseen, or all)"
                )))
            }
        },
    };
    ensure(!ids.is_empty(), || format!("split '{split}' has no sequences"))?;

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_effective_config(&cfg, out)?;
    for id in &ids {
        let seq = load_sequence(&root, id)?;
        let result = segment_video(&net, &seq, &cfg.infer)?;
        let mask_sets: Vec<InstanceMaskSet> = result
            .labels
            .iter()
            .map(|l| InstanceMaskSet::from_index_map(l, seq.instance_count()))
            .collect::<Result<_>>()?;
        let mask_dir = out.join(id).join("masks");
        fs::create_dir_all(&mask_dir).map_err(|e| Error::io(&mask_dir, e))?;
        crate::data::store::save_masks(&mask_sets, &mask_dir)?;
        if overlay {
            render::save_overlays(&seq.frames, &result.labels, 0.5, &out.join(id).join("overlay"))?;
        }
        println!("segmented {id}: {} frames -> {}", seq.len(), out.join(id).display());
    }
    Ok(())
}

fn cmd_evaluate(common: Common, checkpoint: &Path, out: &Path, curve: bool) -> Result<()> {
    let cfg = RunConfig::load(common.config.as_deref())?;
    let root = cfg.resolve_data_root(common.data_root.as_deref());
    let net = load_network(checkpoint)?;
    let (_, val_seen, val_unseen) = load_dataset(&root)?;
    ensure(!val_seen.is_empty() || !val_unseen.is_empty(), || {
        "no validation sequences to evaluate".into()
    })?;

    let report: EvalReport = evaluate_dataset(&net, &val_seen, &val_unseen, &cfg.infer)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_effective_config(&cfg, out)?;
    write_json(&out.join("report.json"), &report)?;

    if curve {
        let mut runs_data = Vec::new();
        for seq in val_seen.iter().chain(&val_unseen) {
            let result = segment_video(&net, seq, &cfg.infer)?;
            runs_data.push((result.labels, seq.gt_masks.clone()));
        }
        let runs: Vec<(&[_], &[_])> =
            runs_data.iter().map(|(l, g)| (l.as_slice(), g.as_slice())).collect();
        let points = temporal_curve(&runs);
        let mut csv = String::from("frame,mean_j,survival,alive\n");
        for p in &points {
            csv.push_str(&format!("{},{:.6},{:.6},{}\n", p.frame, p.mean_j, p.survival, p.alive));
        }
        let path = out.join("temporal_curve.csv");
        fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    }

    println!(
        "overall: J {:.4}  F {:.4}  J&F {:.4}",
        report.overall.mean_j, report.overall.mean_f, report.overall.mean_jf
    );
    if let Some(s) = &report.seen {
        println!("seen:    J {:.4}  F {:.4}  ({} instances)", s.mean_j, s.mean_f, s.instances);
    }
    if let Some(u) = &report.unseen {
        println!("unseen:  J {:.4}  F {:.4}  ({} instances)", u.mean_j, u.mean_f, u.instances);
    }
    println!("report: {}", out.join("report.json").display());
    Ok(())
}

/// Build the requested ablation grid from a base configuration.
pub fn grid_cells(grid: &str, net: &NetworkConfig, train: &TrainConfig) -> Result<Vec<AblationCell>> {
    let cell = |name: &str, n: NetworkConfig, t: TrainConfig| AblationCell {
        name: name.to_string(),
        net: n,
        train: t,
    };
    let cells = match grid {
        "all" => standard_grid(net, train),
        "loss" => {
            let mut wid = train.clone();
            wid.loss = LossKind::Wid;
            let mut dice = train.clone();
            dice.loss = LossKind::Dice;
            let mut bce = train.clone();
            bce.loss = LossKind::Bce;
            vec![
                cell("wid", net.clone(), wid),
                cell("dice", net.clone(), dice),
                cell("bce", net.clone(), bce),
            ]
        }
        "cues" => {
            let full = train.clone();
            let mut no_flow = train.clone();
            no_flow.cue.use_flow = false;
            let mut no_lta = train.clone();
            no_lta.cue.use_lta = false;
            let mut no_sta = train.clone();
            no_sta.cue.use_sta = false;
            let mut lta_only = train.clone();
            lta_only.cue.use_flow = false;
            lta_only.cue.use_sta = false;
            vec![
                cell("full", net.clone(), full),
                cell("no_flow", net.clone(), no_flow),
                cell("no_lta", net.clone(), no_lta),
                cell("no_sta", net.clone(), no_sta),
                cell("lta_only", net.clone(), lta_only),
            ]
        }
        "flow" => {
            let unit = train.clone();
            let mut raw = train.clone();
            raw.cue.flow_mode = crate::cues::FlowMode::Raw;
            vec![cell("unit_flow", net.clone(), unit), cell("raw_flow", net.clone(), raw)]
        }
        "decoder" => {
            let mut sep = net.clone();
            sep.separable = true;
            let mut dense = net.clone();
            dense.separable = false;
            vec![
                cell("separable", sep, train.clone()),
                cell("dense", dense, train.clone()),
            ]
        }
        "width" => {
            let full = net.clone();
            let mut half = net.clone();
            for c in half.stage_channels.iter_mut() {
                *c = (*c / 2).max(4);
            }
            vec![
                cell("full_width", full, train.clone()),
                cell("half_width", half, train.clone()),
            ]
        }
        "dilation" => {
            let dil = net.clone();
            let mut flat = net.clone();
            flat.dilation_set = [1, 1, 1];
            vec![
                cell("dilated", dil, train.clone()),
                cell("undilated", flat, train.clone()),
            ]
        }
        other => {
            return Err(Error::validation(format!(
                "unknown grid '{other}' (expected all, cues, loss, flow, decoder, width, or dilation)"
            )))
        }
    };
    Ok(cells)
}

fn parse_loss(name: &str) -> Result<LossKind> {
    match name {
        "wid" => Ok(LossKind::Wid),
        "dice" => Ok(LossKind::Dice),
        "bce" => Ok(LossKind::Bce),
        other => Err(Error::validation(format!(
            "unknown loss '{other}' (expected wid, dice, or bce)"
        ))),
    }
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::validation(format!("bad seed '{s}' in seed list")))
        })
        .collect::<Result<_>>()?;
    ensure(!seeds.is_empty(), || "seed list is empty".into())?;
    Ok(seeds)
}

/// Human-readable pass/fail summary of the trends a grid is meant to show.
pub fn trend_summary(grid: &str, outcomes: &[AblationOutcome]) -> String {
    let get = |name: &str| outcomes.iter().find(|o| o.name == name).map(|o| o.mean_j);
    let mut lines = Vec::new();
    let mut check = |label: &str, ok: Option<bool>| {
        match ok {
            Some(true) => lines.push(format!("PASS  {label}")),
            Some(false) => lines.push(format!("FAIL  {label}")),
            None => lines.push(format!("SKIP  {label} (missing cells)")),
        };
    };
    match grid {
        "loss" => {
            let (w, d, b) = (get("wid"), get("dice"), get("bce"));
            check(
                "loss ordering wid > dice > bce",
                w.zip(d).zip(b).map(|((w, d), b)| w > d && d > b),
            );
        }
        "cues" | "all" => {
            let full = get("full");
            let rest: Vec<f64> = outcomes
                .iter()
                .filter(|o| o.name != "full")
                .map(|o| o.mean_j)
                .collect();
            check(
                "full cue stack is the best cell",
                full.map(|f| rest.iter().all(|&r| f >= r)),
            );
        }
        "flow" => check(
            "unit flow >= raw flow",
            get("unit_flow").zip(get("raw_flow")).map(|(u, r)| u >= r),
        ),
        "decoder" => check(
            "separable within 0.05 J of dense",
            get("separable").zip(get("dense")).map(|(s, d)| (s - d).abs() <= 0.05),
        ),
        "width" => check(
            "full width >= half width",
            get("full_width").zip(get("half_width")).map(|(f, h)| f >= h),
        ),
        "dilation" => check(
            "dilated >= undilated",
            get("dilated").zip(get("undilated")).map(|(d, u)| d >= u),
        ),
        _ => lines.push(format!("SKIP  no trend defined for grid '{grid}'")),
    }
    let mut ranked: Vec<&AblationOutcome> = outcomes.iter().collect();
    ranked.sort_by(|a, b| b.mean_j.total_cmp(&a.mean_j));
    lines.push(String::from("ranking:"));
    for o in ranked {
        lines.push(format!("  {:<16} mean J {:.4} (std {:.4})", o.name, o.mean_j, o.std_j));
    }
    lines.join("\n")
}

fn cmd_ablate(common: Common, grid: &str, seeds: Option<&str>, out: &Path) -> Result<()> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    let seeds = match seeds {
        Some(text) => parse_seeds(text)?,
        None => match common.seed {
            Some(s) => vec![s],
            None => vec![1, 2, 3],
        },
    };
    let root = cfg.resolve_data_root(common.data_root.as_deref());
    let (train, val_seen, val_unseen) = load_dataset(&root)?;
    let mut val = val_seen;
    val.extend(val_unseen);
    ensure(!val.is_empty(), || "ablation needs validation sequences".into())?;

    let cells = grid_cells(grid, &cfg.net, &cfg.train)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_effective_config(&cfg, out)?;
    let mut sink = MetricsSink::to_path(&out.join("ablate.ndjson"))?;
    let outcomes = run_ablation(&cells, &seeds, &train, &val, &mut sink)?;

    let mut csv = String::from("name,mean_j,std_j");
    for s in &seeds {
        csv.push_str(&format!(",seed_{s}"));
    }
    csv.push('\n');
    for o in &outcomes {
        csv.push_str(&format!("{},{:.6},{:.6}", o.name, o.mean_j, o.std_j));
        for j in &o.per_seed_j {
            csv.push_str(&format!(",{j:.6}"));
        }
        csv.push('\n');
    }
    let csv_path = out.join("results.csv");
    fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;

    let summary = trend_summary(grid, &outcomes);
    let sum_path = out.join("summary.txt");
    fs::write(&sum_path, format!("{summary}\n")).map_err(|e| Error::io(&sum_path, e))?;
    println!("{summary}");
    println!("table: {}", csv_path.display());
    Ok(())
}

fn cmd_render_overlay(
    common: Common,
    sequence: &str,
    pred: Option<&Path>,
    out: &Path,
    alpha: f32,
) -> Result<()> {
    let cfg = RunConfig::load(common.config.as_deref())?;
    let root = cfg.resolve_data_root(common.data_root.as_deref());
    let seq = load_sequence(&root, sequence)?;

    let labels: Vec<_> = match pred {
        Some(dir) => load_mask_dir(dir, seq.len(), seq.instance_count())?
            .iter()
            .map(|m| m.to_index_map())
            .collect::<Result<_>>()?,
        None => seq.gt_masks.iter().map(|m| m.to_index_map()).collect::<Result<_>>()?,
    };
    let dir = out.join(sequence);
    render::save_overlays(&seq.frames, &labels, alpha, &dir)?;
    write_effective_config(&cfg, out)?;
    println!("wrote {} overlay frames to {}", labels.len(), dir.display());
    Ok(())
}
