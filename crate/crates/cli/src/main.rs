//! `mvlabel`: simulate episodes, generate pseudo-labels, refine poses, evaluate.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::FileConfig;
use mvlabel::evalkit::{default_sweep, evaluate_2d, evaluate_3d, render_table, EvalReport};
use mvlabel::explore::SynthWorld;
use mvlabel::imageio::write_atomic;
use mvlabel::ingest::{load_episode, write_episode, DepthFormat, WriteOptions};
use mvlabel::labelgen::coco::read_boxes;
use mvlabel::labelgen::{CocoFile, LABELS_2D, LABELS_3D};
use mvlabel::pipeline::{discover_episodes, generate_corpus, refine_poses, simulate_corpus, SeedMode, GT_2D, GT_3D, WORLD_FILE};

/// Exit status of a failed command.
#[derive(Debug)]
enum Failure {
    /// Bad arguments or configuration; nothing was done.
    Validation(String),
    /// The work itself failed.
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

fn runtime(e: mvlabel::Error) -> Failure {
    Failure::Runtime(e.to_string())
}

fn invalid(e: mvlabel::Error) -> Failure {
    Failure::Validation(e.to_string())
}

#[derive(Parser, Debug)]
#[command(name = "mvlabel", version, about = "Multi-view pseudo-labelling of posed RGB-D episodes")]
struct Cli {
    /// Master seed for simulation and view sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// JSON file with `world`, `simulate`, `generate`, `refine` and `eval`
    /// sections; explicit flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate exploration episodes and write them with ground truth.
    Simulate(SimulateArgs),
    /// Segment each episode and export 2D and 3D pseudo-labels.
    Generate(GenerateArgs),
    /// Evaluate exported labels against ground truth.
    Eval(EvalArgs),
    /// Register views, filter them by cycle consistency and write re-chained episodes.
    RefinePoses(RefineArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// World description; generated from the seed when omitted.
    #[arg(long)]
    world: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Views captured per episode.
    #[arg(long)]
    views: Option<usize>,
    /// Enable actuation noise with the default model.
    #[arg(long)]
    noise: bool,
    /// Confidence that triggers the view capture.
    #[arg(long)]
    theta_conf: Option<f64>,
    /// Store depth as 16-bit millimetre PNG instead of raw f32.
    #[arg(long)]
    png_depth: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Directory of episodes (or a single episode).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Segment from this many views (reference view included).
    #[arg(long)]
    views: Option<usize>,
    /// Seed from the ground-truth mask of the reference view.
    #[arg(long)]
    weak_seed: bool,
    /// Initialise foreground from the detections of all views.
    #[arg(long)]
    aggregate_votes: bool,
    /// Register and filter views before segmenting.
    #[arg(long)]
    filter_poses: bool,
    #[arg(long)]
    crf_iterations: Option<usize>,
    #[arg(long)]
    w_app: Option<f64>,
    #[arg(long)]
    w_smooth: Option<f64>,
    #[arg(long)]
    theta_alpha: Option<f64>,
    #[arg(long)]
    theta_beta: Option<f64>,
    #[arg(long)]
    theta_gamma: Option<f64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predicted `labels_2d.json`, or the directory holding it.
    #[arg(long)]
    labels: PathBuf,
    /// Ground-truth `gt_2d.json`, or the directory holding it.
    #[arg(long)]
    gt: PathBuf,
    /// 2D IoU thresholds.
    #[arg(long, value_delimiter = ',')]
    iou: Option<Vec<f64>>,
    /// 3D IoU threshold; 3D evaluation runs when both box files exist.
    #[arg(long)]
    iou3d: Option<f64>,
    /// Add a confidence-threshold sweep.
    #[arg(long)]
    sweep: bool,
    /// Match masks rather than boxes.
    #[arg(long)]
    mask: bool,
    /// Report JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RefineArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Keep every view instead of only the retained ones.
    #[arg(long)]
    keep_all: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Validation(m) => eprintln!("error: {m}"),
                Failure::Runtime(m) => eprintln!("failed: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p).map_err(invalid)?,
        None => FileConfig::default(),
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Failure::Validation("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Simulate(a) => simulate(a, file, seed),
        Command::Generate(a) => generate(a, file, seed),
        Command::Eval(a) => eval(a, file),
        Command::RefinePoses(a) => refine(a, file),
    }
}

fn simulate(a: SimulateArgs, file: FileConfig, seed: u64) -> Result<(), Failure> {
    let mut config = file.simulate;
    if let Some(n) = a.episodes {
        config.episodes = n;
    }
    if let Some(n) = a.views {
        config.policy.n_views = n;
    }
    if let Some(t) = a.theta_conf {
        config.policy.theta_conf = t;
    }
    if a.noise && config.policy.noise.is_none() {
        config.policy.noise = Some(Default::default());
    }
    if config.episodes == 0 {
        return Err(Failure::Validation("--episodes must be at least 1".into()));
    }
    if config.policy.n_views == 0 {
        return Err(Failure::Validation("--views must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&config.policy.theta_conf) {
        return Err(Failure::Validation("--theta-conf must lie in [0, 1]".into()));
    }
    let world = match &a.world {
        Some(p) => SynthWorld::load(p).map_err(invalid)?,
        None => SynthWorld::generate(seed, &file.world).map_err(invalid)?,
    };
    let opts = WriteOptions { depth_format: if a.png_depth { DepthFormat::Png16Mm } else { DepthFormat::F32 } };
    let summary = simulate_corpus(&world, &config, seed, &a.out, &opts).map_err(runtime)?;
    let ok = summary.episodes.iter().filter(|e| e.ok).count();
    for e in summary.episodes.iter().filter(|e| !e.ok) {
        log::warn!("{}: {}", e.episode_id, e.reason.as_deref().unwrap_or("failed"));
    }
    println!("simulated {ok}/{} episodes into {}", summary.episodes.len(), a.out.display());
    if ok == 0 {
        return Err(Failure::Runtime("no episode succeeded".into()));
    }
    Ok(())
}

fn generate(a: GenerateArgs, file: FileConfig, seed: u64) -> Result<(), Failure> {
    let mut config = file.generate;
    config.rng_seed = seed;
    if a.views.is_some() {
        config.views = a.views;
    }
    if a.weak_seed {
        config.seed_mode = SeedMode::Weak;
    }
    config.segment.aggregate_votes |= a.aggregate_votes;
    config.filter_poses |= a.filter_poses;
    let crf = &mut config.segment.crf;
    if let Some(v) = a.crf_iterations {
        crf.iterations = v;
    }
    for (flag, slot) in [
        (a.w_app, &mut crf.w_app),
        (a.w_smooth, &mut crf.w_smooth),
        (a.theta_alpha, &mut crf.theta_alpha),
        (a.theta_beta, &mut crf.theta_beta),
        (a.theta_gamma, &mut crf.theta_gamma),
    ] {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    config.validate().map_err(invalid)?;
    if !a.data.is_dir() {
        return Err(Failure::Validation(format!("{} is not a directory", a.data.display())));
    }
    let summary = generate_corpus(&a.data, &a.out, &config).map_err(runtime)?;
    for e in summary.episodes.iter().filter(|e| !e.ok) {
        log::warn!("{}: {}", e.episode_id, e.reason.as_deref().unwrap_or("failed"));
    }
    println!("labelled {}/{} episodes into {}", summary.labeled_episodes, summary.episodes.len(), a.out.display());
    if summary.labeled_episodes == 0 {
        return Err(Failure::Runtime("every episode failed".into()));
    }
    Ok(())
}

/// `path` itself, or `path/name` when `path` is a directory.
fn resolve(path: &Path, name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(name)
    } else {
        path.to_path_buf()
    }
}

/// The 3D companion of a 2D label or ground-truth file, if it exists.
fn companion(path: &Path, dir_name: &str, file_name: &str) -> Option<PathBuf> {
    let p = if path.is_dir() { path.join(dir_name) } else { path.with_file_name(file_name) };
    p.is_file().then_some(p)
}

fn eval(a: EvalArgs, file: FileConfig) -> Result<(), Failure> {
    let mut config = file.eval;
    if let Some(t) = a.iou {
        config.iou_thresholds = t;
    }
    if let Some(t) = a.iou3d {
        config.iou_3d = t;
    }
    config.mask_iou |= a.mask;
    if a.sweep && config.sweep.is_none() {
        config.sweep = Some(default_sweep());
    }
    if config.iou_thresholds.is_empty() || config.iou_thresholds.iter().chain([&config.iou_3d]).any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Failure::Validation("IoU thresholds must lie in [0, 1]".into()));
    }
    let labels = resolve(&a.labels, LABELS_2D);
    let gt = resolve(&a.gt, GT_2D);
    let pred = CocoFile::read(&labels).map_err(invalid)?;
    let truth = CocoFile::read(&gt).map_err(invalid)?;
    let mut report: EvalReport = evaluate_2d(&pred, &truth, &config).map_err(runtime)?;
    if let (Some(p3), Some(g3)) = (companion(&a.labels, LABELS_3D, LABELS_3D), companion(&a.gt, GT_3D, GT_3D)) {
        let p = read_boxes(&p3).map_err(invalid)?;
        let g = read_boxes(&g3).map_err(invalid)?;
        report.three_d = Some(evaluate_3d(&p, &g, config.iou_3d, config.mode_3d));
    }
    print!("{}", render_table(&report));
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PairSummary {
    from: u32,
    to: u32,
    error: Option<f64>,
    bad: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
}

#[derive(Serialize)]
struct RefineSummary {
    episode_id: String,
    ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
    retained: Vec<u32>,
    registered: Vec<bool>,
    pose_confidence: Vec<f64>,
    pairs: Vec<PairSummary>,
}

fn refine(a: RefineArgs, file: FileConfig) -> Result<(), Failure> {
    let config = file.refine;
    config.cycle.validate().map_err(invalid)?;
    if !a.data.is_dir() {
        return Err(Failure::Validation(format!("{} is not a directory", a.data.display())));
    }
    let dirs = discover_episodes(&a.data).map_err(runtime)?;
    if dirs.is_empty() {
        return Err(Failure::Validation(format!("no episode manifests under {}", a.data.display())));
    }
    use rayon::prelude::*;
    let summaries: Vec<RefineSummary> = dirs
        .par_iter()
        .map(|dir| {
            let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let result = load_episode(&dir.join("manifest.json")).and_then(|episode| {
                let r = refine_poses(&episode, &config)?;
                let kept = if a.keep_all { r.episode.clone() } else { r.episode.with_views(&r.filter.retained)? };
                write_episode(&kept, &a.out.join(&name), &WriteOptions::default())?;
                Ok(r)
            });
            match result {
                Ok(r) => RefineSummary {
                    episode_id: r.episode.episode_id.clone(),
                    ok: true,
                    reason: None,
                    retained: r.filter.retained.clone(),
                    registered: r.registered.clone(),
                    pose_confidence: r.pose_confidence.clone(),
                    pairs: r
                        .filter
                        .pairs
                        .iter()
                        .map(|p| PairSummary { from: p.from, to: p.to, error: p.error, bad: p.bad, reason: p.reason.clone() })
                        .collect(),
                },
                Err(e) => {
                    log::warn!("{name}: {e}");
                    RefineSummary {
                        episode_id: name,
                        ok: false,
                        reason: Some(e.to_string()),
                        retained: vec![],
                        registered: vec![],
                        pose_confidence: vec![],
                        pairs: vec![],
                    }
                }
            }
        })
        .collect();
    let world = a.data.join(WORLD_FILE);
    if world.is_file() {
        std::fs::copy(&world, a.out.join(WORLD_FILE)).map_err(|e| Failure::Runtime(format!("{}: {e}", world.display())))?;
    }
    write_json(&a.out.join("refine.json"), &summaries)?;
    let ok = summaries.iter().filter(|s| s.ok).count();
    println!("refined {ok}/{} episodes into {}", summaries.len(), a.out.display());
    if ok == 0 {
        return Err(Failure::Runtime("every episode failed".into()));
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Failure::Runtime(format!("{}: {e}", parent.display())))?;
    }
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    write_atomic(path, text.as_bytes()).map_err(runtime)
}
