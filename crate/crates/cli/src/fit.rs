use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Args;
use handfit::camera::{Intrinsics, Keypoints2D};
use handfit::config::FitConfig;
use handfit::energy::{BoneFrames, EnergyBreakdown, SkeletonPrior, TermRegistry};
use handfit::imaging::{save_mask_png, ColorImage};
use handfit::io::{export_obj, parse_keypoints, JointOrder, ParamsFile};
use handfit::model::{decode, HandModel};
use handfit::optim::{fit, FitReport, Problem, StageSummary};
use handfit::render::render;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::inputs::{self, file_sha256, sha256_hex, BBox};

#[derive(Args)]
pub struct FitArgs {
    /// Image file, or a directory of images fitted independently.
    #[arg(long)]
    image: PathBuf,
    /// Keypoint JSON, or a directory holding `<image stem>.json` per image.
    #[arg(long)]
    keypoints: PathBuf,
    /// Camera intrinsics JSON, or a directory with one per image stem.
    #[arg(long)]
    intrinsics: PathBuf,
    /// Second-detector keypoints for the consistency term (file or
    /// directory, like --keypoints).
    #[arg(long)]
    estimated: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model file; overrides the config. The builtin toy model when neither
    /// names one.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Entry order in the keypoint files: openpose or mano.
    #[arg(long, default_value = "openpose", value_parser = crate::joint_order_arg)]
    joint_order: JointOrder,
    /// Crop x,y,w,h (pixels) applied to every input before fitting.
    #[arg(long)]
    bbox: Option<BBox>,
    /// Output directory; one subdirectory per image in directory mode.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parallel fits in directory mode.
    #[arg(long)]
    jobs: Option<usize>,
}

struct Job {
    name: String,
    image: PathBuf,
    keypoints: PathBuf,
    intrinsics: PathBuf,
    estimated: Option<PathBuf>,
    out: PathBuf,
}

/// Shared, read-only settings of one invocation.
struct Setup {
    config: FitConfig,
    config_sha256: String,
    model: HandModel,
    model_source: serde_json::Value,
    prior: SkeletonPrior,
    prior_source: serde_json::Value,
    joint_order: JointOrder,
    bbox: Option<BBox>,
}

pub fn run(args: FitArgs) -> Result<ExitCode> {
    let (config, base) = match &args.config {
        Some(p) => (FitConfig::load(p)?, p.parent().map(Path::to_path_buf).unwrap_or_default()),
        None => (FitConfig::default(), PathBuf::new()),
    };
    let config_sha256 = sha256_hex(serde_json::to_string(&config)?.as_bytes());
    let model_path = args.model.clone().or_else(|| config.paths.model.as_ref().map(|p| base.join(p)));
    let model = inputs::load_model(model_path.as_deref())?;
    let model_source = source(model_path.as_deref())?;
    let prior_path = config.paths.skeleton_prior.as_ref().map(|p| base.join(p));
    let prior = match &prior_path {
        Some(p) => SkeletonPrior::load(p)?,
        None => SkeletonPrior::builtin(),
    };
    let prior_source = source(prior_path.as_deref())?;
    let Some(out) = args.out.clone().or_else(|| config.paths.out_dir.as_ref().map(|p| base.join(p))) else {
        bail!("no output directory: pass --out or set paths.out_dir in the config");
    };
    let setup = Setup {
        config,
        config_sha256,
        model,
        model_source,
        prior,
        prior_source,
        joint_order: args.joint_order,
        bbox: args.bbox,
    };

    if !args.image.is_dir() {
        let job = Job {
            name: stem(&args.image),
            image: args.image,
            keypoints: args.keypoints,
            intrinsics: args.intrinsics,
            estimated: args.estimated,
            out,
        };
        run_job(&setup, &job)?;
        return Ok(ExitCode::SUCCESS);
    }

    let jobs = directory_jobs(&args, &out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0))
        .build()
        .context("starting worker pool")?;
    let results: Vec<Result<()>> = pool.install(|| jobs.par_iter().map(|j| run_job(&setup, j)).collect());
    let (mut worst, mut failed) = (0, 0);
    for (job, r) in jobs.iter().zip(results) {
        if let Err(e) = r {
            eprintln!("error: {}: {e:#}", job.name);
            worst = worst.max(crate::exit_code(&e));
            failed += 1;
        }
    }
    log::info!("{} of {} fits succeeded", jobs.len() - failed, jobs.len());
    Ok(if worst == 0 { ExitCode::SUCCESS } else { ExitCode::from(worst) })
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

fn source(path: Option<&Path>) -> Result<serde_json::Value> {
    Ok(match path {
        Some(p) => json!({ "path": p, "sha256": file_sha256(p)? }),
        None => json!("builtin"),
    })
}

/// `dir/<stem>.json` when `p` is a directory, else `p` itself.
fn per_image(p: &Path, stem: &str) -> PathBuf {
    if p.is_dir() {
        p.join(format!("{stem}.json"))
    } else {
        p.to_path_buf()
    }
}

fn directory_jobs(args: &FitArgs, out: &Path) -> Result<Vec<Job>> {
    if !args.keypoints.is_dir() {
        bail!("--image is a directory, so --keypoints must be one too");
    }
    let mut images: Vec<PathBuf> = std::fs::read_dir(&args.image)
        .with_context(|| format!("reading {}", args.image.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    images.sort();
    if images.is_empty() {
        bail!("no PNG or JPEG images in {}", args.image.display());
    }
    Ok(images
        .into_iter()
        .map(|image| {
            let name = stem(&image);
            Job {
                keypoints: args.keypoints.join(format!("{name}.json")),
                intrinsics: per_image(&args.intrinsics, &name),
                estimated: args.estimated.as_deref().map(|p| per_image(p, &name)),
                out: out.join(&name),
                image,
                name,
            }
        })
        .collect())
}

/// Size after scaling `(w, h)` so that the longer side is `target`.
fn scaled_size(w: usize, h: usize, target: usize) -> (usize, usize) {
    if target == 0 {
        return (w, h);
    }
    let s = target as f64 / w.max(h) as f64;
    (((w as f64 * s).round() as usize).max(1), ((h as f64 * s).round() as usize).max(1))
}

struct Inputs {
    image: ColorImage,
    intrinsics: Intrinsics,
    keypoints: Keypoints2D,
    estimated: Option<Keypoints2D>,
}

fn load_inputs(setup: &Setup, job: &Job) -> Result<Inputs> {
    let mut image = ColorImage::load(&job.image)?;
    let mut intrinsics = Intrinsics::load(&job.intrinsics)?;
    if (intrinsics.width, intrinsics.height) != (image.width, image.height) {
        bail!(
            "{}: intrinsics are for {}x{} but the image is {}x{}",
            job.intrinsics.display(),
            intrinsics.width,
            intrinsics.height,
            image.width,
            image.height
        );
    }
    let mut keypoints = parse_keypoints(&job.keypoints, setup.joint_order)?;
    let mut estimated = job.estimated.as_ref().map(|p| parse_keypoints(p, setup.joint_order)).transpose()?;
    let b = setup.bbox.unwrap_or(BBox {
        x: 0,
        y: 0,
        w: image.width,
        h: image.height,
    });
    let (ow, oh) = scaled_size(b.w, b.h, setup.config.render_size);
    if (b.x, b.y, b.w, b.h, ow, oh) != (0, 0, image.width, image.height, image.width, image.height) {
        let (x, y, w, h) = (b.x as f64, b.y as f64, b.w as f64, b.h as f64);
        image = image.crop_resize(b.x, b.y, b.w, b.h, ow, oh)?;
        intrinsics = intrinsics.crop_resize(x, y, w, h, ow, oh);
        keypoints = keypoints.crop_resize(x, y, w, h, ow, oh);
        estimated = estimated.map(|e| e.crop_resize(x, y, w, h, ow, oh));
    }
    Ok(Inputs {
        image,
        intrinsics,
        keypoints,
        estimated,
    })
}

fn run_job(setup: &Setup, job: &Job) -> Result<()> {
    let inputs = load_inputs(setup, job)?;
    let model = &setup.model;
    let frames = BoneFrames::from_model(model);
    let registry = TermRegistry::builtin();
    let problem = Problem {
        model,
        frames: &frames,
        prior: &setup.prior,
        registry: &registry,
        intrinsics: &inputs.intrinsics,
        detected: &inputs.keypoints,
        estimated: inputs.estimated.as_ref().map(|e| &e.points),
        gt_joints: None,
        image: Some(&inputs.image),
        weights: setup.config.weights,
        normalize_con_sum: false,
    };
    let schedule = setup.config.schedule()?;
    let init = setup.config.initial_state(model.template_vertices.len());
    log::info!("{}: fitting {}x{}", job.name, inputs.image.width, inputs.image.height);
    let report = fit(&problem, init, &schedule)?;
    log::info!(
        "{}: objective {:.4e} after {} iterations ({:.1} s)",
        job.name,
        report.final_objective,
        report.trace.len(),
        report.seconds
    );
    write_artifacts(setup, job, &inputs, &report)
}

#[derive(Serialize)]
struct FitSummary<'a> {
    image: &'a Path,
    width: usize,
    height: usize,
    iterations: usize,
    final_objective: f64,
    final_breakdown: &'a EnergyBreakdown,
    converged: bool,
    seconds: f64,
    stages: &'a [StageSummary],
}

fn write_artifacts(setup: &Setup, job: &Job, inputs: &Inputs, report: &FitReport) -> Result<()> {
    let out = &job.out;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let model = &setup.model;
    let state = &report.state;
    ParamsFile::from_state(state).save(out.join("params.json"))?;
    let geometry = decode(model, &state.params)?;
    export_obj(&geometry.vertices, &model.faces, &state.appearance.colors, out.join("mesh.obj"))?;
    let k = &inputs.intrinsics;
    let r = render(&geometry.vertices, &model.faces, &state.appearance, k)?;
    r.image().save_png(out.join("render.png"))?;
    save_mask_png(&r.silhouette(), k.width, k.height, out.join("silhouette.png"))?;
    write(&out.join("energy_trace.csv"), &trace_csv(report))?;

    let summary = FitSummary {
        image: &job.image,
        width: k.width,
        height: k.height,
        iterations: report.trace.len(),
        final_objective: report.final_objective,
        final_breakdown: &report.final_breakdown,
        converged: report.converged,
        seconds: report.seconds,
        stages: &report.stages,
    };
    write(&out.join("report.json"), &(serde_json::to_string_pretty(&summary)? + "\n"))?;

    let mut files = serde_json::Map::new();
    files.insert("image".into(), json!({ "path": job.image, "sha256": file_sha256(&job.image)? }));
    files.insert("keypoints".into(), json!({ "path": job.keypoints, "sha256": file_sha256(&job.keypoints)? }));
    files.insert("intrinsics".into(), json!({ "path": job.intrinsics, "sha256": file_sha256(&job.intrinsics)? }));
    if let Some(p) = &job.estimated {
        files.insert("estimated".into(), json!({ "path": p, "sha256": file_sha256(p)? }));
    }
    files.insert("model".into(), setup.model_source.clone());
    files.insert("skeleton_prior".into(), setup.prior_source.clone());
    let manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config_sha256": setup.config_sha256,
        "config": setup.config,
        "seed": setup.config.seed,
        "joint_order": setup.joint_order,
        "bbox": setup.bbox,
        "inputs": files,
    });
    write(&out.join("manifest.json"), &(serde_json::to_string_pretty(&manifest)? + "\n"))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn trace_csv(report: &FitReport) -> String {
    let mut s = String::from("stage,iteration,lr,objective");
    for f in EnergyBreakdown::FIELDS {
        s.push(',');
        s.push_str(f);
    }
    s.push('\n');
    for r in &report.trace {
        let _ = write!(s, "{},{},{},{}", report.stages[r.stage].name, r.iteration, r.lr, r.objective);
        for v in r.breakdown.values() {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}
