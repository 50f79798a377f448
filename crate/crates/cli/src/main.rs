mod fit;
mod inputs;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use handfit::camera::Intrinsics;
use handfit::imaging::save_mask_png;
use handfit::io::{export_obj, load_ground_truth, JointOrder, ParamsFile};
use handfit::metrics::{mpjpe, mpvpe, pck_auc, point_errors_mm, procrustes_align, f_score};
use handfit::model::{decode, save_model};
use handfit::model::toy::{toy_model, TOY_SEED};
use handfit::optim::suite::gradient_suite;
use handfit::render::render;
use serde::Serialize;

const EXIT_BAD_INPUT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_TOLERANCE: u8 = 4;

#[derive(Parser)]
#[command(name = "handfit", version, about = "Fit a parametric hand model to an image and 2D keypoints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one image, or every image in a directory.
    Fit(fit::FitArgs),
    /// Render a params.json.
    Render {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        intrinsics: PathBuf,
        /// Model file; the builtin toy model when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a fitted params.json with ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        /// A params.json or {"joints": [[x, y, z] x 21], "vertices": [...]}.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Measure in camera space without Procrustes alignment.
        #[arg(long)]
        no_align: bool,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
    },
    /// Check every energy term's gradient against finite differences on a
    /// synthetic scene.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Coordinates checked per parameter block.
        #[arg(long, default_value_t = 12)]
        coords: usize,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Write the builtin toy model in the portable model format.
    ToyModel {
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Numerical failures map to 3, everything else to bad input.
fn exit_code(e: &anyhow::Error) -> u8 {
    let numerical = e
        .chain()
        .any(|c| c.downcast_ref::<handfit::error::Error>().is_some_and(|e| e.is_numerical()));
    if numerical {
        EXIT_NUMERICAL
    } else {
        EXIT_BAD_INPUT
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Fit(args) => fit::run(args),
        Command::Render {
            params,
            intrinsics,
            model,
            out,
        } => run_render(&params, &intrinsics, model.as_deref(), &out).map(|_| ExitCode::SUCCESS),
        Command::Evaluate {
            pred,
            gt,
            model,
            no_align,
            out,
        } => run_evaluate(&pred, &gt, model.as_deref(), !no_align, &out).map(|_| ExitCode::SUCCESS),
        Command::Gradcheck {
            seed,
            size,
            coords,
            model,
        } => run_gradcheck(seed, size, coords, model.as_deref()),
        Command::ToyModel { out } => {
            save_model(&toy_model(TOY_SEED), &out)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn run_render(params: &Path, intrinsics: &Path, model: Option<&Path>, out: &Path) -> Result<()> {
    let model = inputs::load_model(model)?;
    let k = Intrinsics::load(intrinsics)?;
    let state = ParamsFile::load(params)?.to_state()?;
    inputs::check_vertex_count(&state, &model)?;
    let geometry = decode(&model, &state.params)?;
    let r = render(&geometry.vertices, &model.faces, &state.appearance, &k)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    r.image().save_png(out.join("render.png"))?;
    save_mask_png(&r.silhouette(), k.width, k.height, out.join("silhouette.png"))?;
    export_obj(&geometry.vertices, &model.faces, &state.appearance.colors, out.join("mesh.obj"))?;
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    mpjpe_cm: f64,
    auc_j: f64,
    mpvpe_cm: Option<f64>,
    auc_v: Option<f64>,
    f5: Option<f64>,
    f15: Option<f64>,
    aligned: bool,
}

fn run_evaluate(pred: &Path, gt: &Path, model: Option<&Path>, align: bool, out: &Path) -> Result<()> {
    let model = inputs::load_model(model)?;
    let state = ParamsFile::load(pred)?.to_state()?;
    let geometry = decode(&model, &state.params)?;
    let truth = load_ground_truth(gt, &model)?;
    let joints = if align {
        procrustes_align(&geometry.joints21, &truth.joints)?
    } else {
        geometry.joints21.to_vec()
    };
    let mut report = EvalReport {
        mpjpe_cm: mpjpe(&joints, &truth.joints)?,
        auc_j: pck_auc(&point_errors_mm(&joints, &truth.joints)?),
        mpvpe_cm: None,
        auc_v: None,
        f5: None,
        f15: None,
        aligned: align,
    };
    if let Some(gv) = &truth.vertices {
        let v = if align {
            procrustes_align(&geometry.vertices, gv)?
        } else {
            geometry.vertices.clone()
        };
        report.mpvpe_cm = Some(mpvpe(&v, gv)?);
        report.auc_v = Some(pck_auc(&point_errors_mm(&v, gv)?));
        report.f5 = Some(f_score(&v, gv, 5.0)?);
        report.f15 = Some(f_score(&v, gv, 15.0)?);
    }
    let text = serde_json::to_string_pretty(&report)? + "\n";
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(out, &text).with_context(|| format!("writing {}", out.display()))?;
    print!("{text}");
    Ok(())
}

fn run_gradcheck(seed: u64, size: usize, coords: usize, model: Option<&Path>) -> Result<ExitCode> {
    let model = inputs::load_model(model)?;
    let rows = gradient_suite(&model, seed, size, coords)?;
    println!("{:<9} {:<9} {:>10} {:>10} {:>8} {:>8}  result", "term", "block", "rel_err", "tolerance", "checked", "skipped");
    let mut failed = 0;
    for r in &rows {
        let ok = r.passed();
        failed += usize::from(!ok);
        println!(
            "{:<9} {:<9} {:>10.2e} {:>10.0e} {:>8} {:>8}  {}",
            r.term,
            r.block,
            r.rel_err,
            r.tolerance,
            r.checked,
            r.skipped,
            if ok { "ok" } else { "FAIL" }
        );
    }
    if failed > 0 {
        eprintln!("{failed} of {} blocks exceed tolerance", rows.len());
        return Ok(ExitCode::from(EXIT_TOLERANCE));
    }
    Ok(ExitCode::SUCCESS)
}

pub(crate) fn joint_order_arg(s: &str) -> Result<JointOrder, String> {
    s.parse().map_err(|e: handfit::error::Error| e.to_string())
}
