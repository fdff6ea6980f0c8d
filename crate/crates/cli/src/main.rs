mod config;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sparse_nerf::image::{self, Image};
use sparse_nerf::metrics::{self, ExternalScorer, MetricReport, PerceptualScorer, SsimMode};
use sparse_nerf::pipelines::{
    self, distill, render_views, score_images, train_from, write_renders, DistillConfig, FusionConfig, TrainConfig,
    TrainedModel,
};
use sparse_nerf::scene::{self, load_scene, save_scene, synthesize_scene, Scene, SyntheticSceneSpec};
use sparse_nerf::Error;

use crate::config::ConfigError;
use crate::manifest::RunManifest;

#[derive(Parser)]
#[command(name = "sparsenerf", version, about = "Sparse-view radiance field training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a radiance field on one or more scenes.
    Train(TrainArgs),
    /// Teacher, pseudo views, student and finetune in one run.
    Distill(TrainArgs),
    /// Render a trained model at a scene's target poses.
    Render(RenderArgs),
    /// Fuse candidate render directories.
    Fuse(FuseArgs),
    /// Score predictions against ground truth.
    Evaluate(EvaluateArgs),
    /// Write a procedural scene with exact ground truth.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Scene directories; each gets its own run directory under --out when
    /// more than one is given.
    #[arg(long, required = true, num_args = 1..)]
    scene: Vec<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Scenes processed in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    resolution_scale: Option<usize>,
    /// 1 keeps three input views, 2 keeps nine.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    track: Option<u8>,
}

#[derive(Args)]
struct RenderArgs {
    /// Model directory written by `train` or `distill`.
    #[arg(long)]
    model: PathBuf,
    /// Scene directory whose target poses are rendered.
    #[arg(long)]
    poses: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Render at 1/N resolution and upsample.
    #[arg(long, default_value_t = 1)]
    resolution_scale: usize,
}

#[derive(Args)]
struct FuseArgs {
    /// Directories of `<view>.png` candidates, in priority order.
    #[arg(long, required = true, num_args = 1..)]
    candidates: Vec<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scene directory with target ground truth (needed by metric_select).
    #[arg(long)]
    references: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SsimArg {
    Luma,
    ChannelMean,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    /// A scene directory, or a directory of scene directories.
    #[arg(long)]
    gt: PathBuf,
    /// CSV output; a text table is written next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "luma")]
    ssim_mode: SsimArg,
    /// Program run as `<cmd> [args] <pred.png> <gt.png>` printing a score.
    #[arg(long)]
    perceptual_cmd: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    perceptual_arg: Vec<String>,
}

#[derive(Args)]
struct SynthArgs {
    /// TOML scene spec; the sphere-and-box scene when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Skip writing exact depth rasters as input depth priors.
    #[arg(long)]
    no_depths: bool,
}

enum Failure {
    Config(String),
    MissingPredictions(Vec<String>),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Config(m),
            Error::MissingPredictions(v) => Failure::MissingPredictions(v),
            other => Failure::Run(other.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Distill(a) => cmd_distill(&a),
        Command::Render(a) => cmd_render(&a),
        Command::Fuse(a) => cmd_fuse(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Synth(a) => cmd_synth(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::MissingPredictions(v)) => {
            eprintln!("error: missing predictions for {} view(s): {}", v.len(), v.join(", "));
            ExitCode::from(3)
        }
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("configs serialize to JSON")
}

fn load_inputs(path: &Path, track: Option<u8>) -> Result<Scene, Failure> {
    let s = load_scene(path)?;
    Ok(match track {
        Some(t) => s.with_input_count(scene::track_view_count(t)?)?,
        None => s,
    })
}

/// Runs `f(scene_dir, run_dir)` for each scene on up to `jobs` threads.
fn for_each_scene(a: &TrainArgs, f: impl Fn(&Path, &Path) -> Outcome + Sync) -> Outcome {
    let runs: Vec<(PathBuf, PathBuf)> = if a.scene.len() == 1 {
        vec![(a.scene[0].clone(), a.out.clone())]
    } else {
        a.scene
            .iter()
            .map(|s| {
                let name = s.file_name().map(|n| n.to_owned()).unwrap_or_else(|| "scene".into());
                (s.clone(), a.out.join(name))
            })
            .collect()
    };
    let next = AtomicUsize::new(0);
    let failures = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..a.jobs.clamp(1, runs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((scene, out)) = runs.get(i) else { break };
                if let Err(e) = f(scene, out) {
                    failures.lock().expect("failure list").push((i, e));
                }
            });
        }
    });
    let mut failures = failures.into_inner().expect("failure list");
    failures.sort_by_key(|(i, _)| *i);
    match failures.into_iter().next() {
        Some((_, e)) => Err(e),
        None => Ok(()),
    }
}

fn write_report(dir: &Path, stem: &str, report: &MetricReport) -> Outcome {
    fs::write(dir.join(format!("{stem}.csv")), report.to_csv())?;
    fs::write(dir.join(format!("{stem}.txt")), report.to_table())?;
    Ok(())
}

/// Renders the target poses at full resolution, writes them and, when the
/// scene has ground truth, the metrics.
fn render_and_score(model: &TrainedModel, scene: &Scene, scale: usize, dir: &Path, stem: &str) -> Outcome {
    let cams = scene.target_cameras();
    let names: Vec<String> = scene.targets.iter().map(|t| t.name.clone()).collect();
    let renders = render_views(model, &cams, scale)?;
    write_renders(&dir.join(stem), &names, &renders)?;
    let have_gt: Vec<Image> = scene
        .targets
        .iter()
        .zip(&renders)
        .filter(|(t, _)| t.image.is_some())
        .map(|(_, r)| r.image.clone())
        .collect();
    if !have_gt.is_empty() {
        let report = score_images(scene, &have_gt)?;
        let metrics_stem = if stem == "renders" { "metrics".to_string() } else { format!("{stem}_metrics") };
        write_report(dir, &metrics_stem, &report)?;
    }
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig, Failure> {
    let mut cfg: TrainConfig = config::load(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(r) = a.resolution_scale {
        cfg.resolution_scale = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: &TrainArgs) -> Outcome {
    let cfg = train_config(a)?;
    for_each_scene(a, |scene_dir, out| {
        let manifest = RunManifest::start("train", json(&cfg), Some(cfg.seed));
        let full = load_scene(scene_dir)?;
        let inputs = load_inputs(scene_dir, a.track)?;
        fs::create_dir_all(out)?;
        fs::write(out.join("config.toml"), config::to_toml(&cfg))?;
        let trained = train_from(&inputs, &cfg, None, 0, Some(&out.join("diverged")))?;
        trained.model.save(&out.join("model"))?;
        fs::write(out.join("losses.csv"), trained.log.to_csv())?;
        render_and_score(&trained.model, &full, cfg.resolution_scale, out, "renders")?;
        manifest.finish(out)?;
        Ok(())
    })
}

fn cmd_distill(a: &TrainArgs) -> Outcome {
    let mut cfg: DistillConfig = config::load(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.teacher.seed = s;
        cfg.student.seed = s;
    }
    if let Some(r) = a.resolution_scale {
        cfg.teacher.resolution_scale = r;
    }
    cfg.validate()?;
    for_each_scene(a, |scene_dir, out| {
        let manifest = RunManifest::start("distill", json(&cfg), Some(cfg.teacher.seed));
        let full = load_scene(scene_dir)?;
        let inputs = load_inputs(scene_dir, a.track)?;
        fs::create_dir_all(out)?;
        fs::write(out.join("config.toml"), config::to_toml(&cfg))?;
        let stages = out.join("stages");
        let result = distill(&inputs, &cfg, Some(&stages))?;
        for (name, log) in [
            ("teacher", &result.teacher.log),
            ("student", &result.student.log),
            ("final", &result.finetuned.log),
        ] {
            fs::write(stages.join(name).join("losses.csv"), log.to_csv())?;
        }
        result.model().save(&out.join("model"))?;
        render_and_score(&result.teacher.model, &full, cfg.teacher.resolution_scale, out, "teacher_renders")?;
        render_and_score(result.model(), &full, cfg.student.resolution_scale, out, "renders")?;
        manifest.finish(out)?;
        Ok(())
    })
}

fn cmd_render(a: &RenderArgs) -> Outcome {
    let manifest = RunManifest::start(
        "render",
        serde_json::json!({ "model": a.model, "poses": a.poses, "resolution_scale": a.resolution_scale }),
        None,
    );
    let model = TrainedModel::load(&a.model)?;
    let scene = load_scene(&a.poses)?;
    fs::create_dir_all(&a.out)?;
    let names: Vec<String> = scene.targets.iter().map(|t| t.name.clone()).collect();
    let renders = render_views(&model, &scene.target_cameras(), a.resolution_scale)?;
    write_renders(&a.out, &names, &renders)?;
    manifest.finish(&a.out)?;
    Ok(())
}

fn read_candidate_dir(dir: &Path, names: &[String]) -> Result<Vec<Image>, Failure> {
    names
        .iter()
        .map(|n| {
            let p = dir.join(format!("{n}.png"));
            if !p.exists() {
                return Err(Failure::Run(format!("candidate {} lacks view {n}", dir.display())));
            }
            Ok(image::read_image(&p)?)
        })
        .collect()
}

fn cmd_fuse(a: &FuseArgs) -> Outcome {
    let cfg: FusionConfig = config::load(a.config.as_deref())?;
    let manifest = RunManifest::start("fuse", json(&cfg), None);
    let mut names: Vec<String> = fs::read_dir(&a.candidates[0])?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            (p.extension().is_some_and(|x| x == "png")).then(|| p.file_stem().map(|s| s.to_string_lossy().into_owned()))?
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Failure::Run(format!("no .png views in {}", a.candidates[0].display())));
    }
    let candidates = a
        .candidates
        .iter()
        .map(|d| read_candidate_dir(d, &names))
        .collect::<Result<Vec<_>, _>>()?;
    let references = match &a.references {
        Some(dir) => {
            let scene = load_scene(dir)?;
            let refs = names
                .iter()
                .map(|n| {
                    scene
                        .targets
                        .iter()
                        .find(|t| &t.name == n)
                        .and_then(|t| t.image.clone())
                        .ok_or_else(|| Failure::Run(format!("no reference image for view {n}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Some(refs)
        }
        None => None,
    };
    let fused = pipelines::fuse(&candidates, &cfg, references.as_deref())?;
    fs::create_dir_all(&a.out)?;
    for (n, img) in names.iter().zip(&fused) {
        image::write_image(&a.out.join(format!("{n}.png")), img)?;
    }
    manifest.finish(&a.out)?;
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs) -> Outcome {
    let mode = match a.ssim_mode {
        SsimArg::Luma => SsimMode::Luma,
        SsimArg::ChannelMean => SsimMode::ChannelMean,
    };
    let scorer = a.perceptual_cmd.as_ref().map(|p| ExternalScorer {
        program: p.clone(),
        args: a.perceptual_arg.clone(),
    });
    let report = metrics::evaluate_submission(&a.pred, &a.gt, mode, scorer.as_ref().map(|s| s as &dyn PerceptualScorer))?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&a.out, report.to_csv())?;
    let table = report.to_table();
    fs::write(a.out.with_extension("txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Outcome {
    let spec: SyntheticSceneSpec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Run(format!("cannot read {}: {e}", p.display())))?;
            config::parse(&text).map_err(|e| Failure::Config(format!("{}: {}", p.display(), e.0)))?
        }
        None => SyntheticSceneSpec::sphere_and_box(),
    };
    let manifest = RunManifest::start("synth", json(&spec), Some(a.seed));
    let synth = synthesize_scene(&spec, a.seed)?;
    let scene = if a.no_depths { synth.scene.clone() } else { synth.scene_with_depths() };
    save_scene(&scene, &a.out)?;
    fs::create_dir_all(a.out.join("targets/depths"))?;
    for (t, d) in scene.targets.iter().zip(&synth.target_depths) {
        image::write_depth(&a.out.join("targets/depths").join(format!("{}.depth", t.name)), d)?;
    }
    manifest.finish(&a.out)?;
    Ok(())
}
