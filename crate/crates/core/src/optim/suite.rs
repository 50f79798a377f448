//! The per-term gradient check on synthetic scenes, shared by the
//! `gradcheck` command and the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{check_gradient, Block, FitState, GradCheckOptions, MaskedObjective, ParamMask, Problem};
use crate::energy::{BoneFrames, Points2, SkeletonPrior, TermRegistry, Weights};
use crate::error::Result;
use crate::model::{HandModel, NUM_KEYPOINTS};
use crate::rotation::Vec3;
use crate::synth::{synthetic_scene, Scene};

pub const SUITE_TERMS: [&str; 11] = ["loc", "ori", "beta", "tex", "scale", "skel", "e2d", "con", "joints3d", "pixel", "ssim"];

const GEOMETRIC: [Block; 5] = [Block::Theta, Block::Beta, Block::Scale, Block::Rot, Block::Trans];

/// Blocks a term is checked on.
pub fn suite_blocks(term: &str) -> Vec<Block> {
    match term {
        "tex" => vec![Block::Colors],
        // Bone lengths do not depend on pose, rotation or translation.
        "scale" => vec![Block::Beta, Block::Scale],
        "pixel" | "ssim" => Block::ALL.to_vec(),
        _ => GEOMETRIC.to_vec(),
    }
}

/// Relative-error tolerance for one term and block.
pub fn suite_tolerance(term: &str, block: &str) -> f64 {
    match (term, block) {
        ("pixel" | "ssim", "colors" | "lighting") => 1e-6,
        ("pixel" | "ssim", _) => 1e-2,
        _ => 1e-4,
    }
}

/// Finite-difference step for one term and block. The photometric terms are
/// nearly linear in colour and lighting, where rounding noise dominates below
/// 1e-5.
pub fn suite_eps(term: &str, block: &str) -> f64 {
    match (term, block) {
        ("pixel" | "ssim", "colors" | "lighting") => 1e-5,
        _ => 1e-6,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteRow {
    pub term: String,
    pub seed: u64,
    pub block: String,
    pub rel_err: f64,
    pub tolerance: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl SuiteRow {
    pub fn passed(&self) -> bool {
        self.rel_err < self.tolerance
    }
}

/// A scene with noisy auxiliary observations and a state near the truth.
pub struct SuiteFixture {
    pub scene: Scene,
    pub estimated: Points2,
    pub gt: [Vec3; NUM_KEYPOINTS],
    pub state: FitState,
}

pub fn suite_fixture(model: &HandModel, seed: u64, size: usize) -> Result<SuiteFixture> {
    let scene = synthetic_scene(model, seed, size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let estimated = scene.keypoints.points.map(|p| [p[0] + rng.random_range(-2.0..2.0), p[1] + rng.random_range(-2.0..2.0)]);
    let gt = scene.geometry.joints21.map(|j| j.map(|v| v + rng.random_range(-0.005..0.005)));
    let state = perturbed(&scene.truth, seed + 100);
    Ok(SuiteFixture {
        scene,
        estimated,
        gt,
        state,
    })
}

fn perturbed(s: &FitState, seed: u64) -> FitState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = s.clone();
    for t in &mut s.params.theta {
        *t += rng.random_range(-0.05..0.05);
    }
    for b in &mut s.params.beta {
        *b += rng.random_range(-0.2..0.2);
    }
    s.params.scale *= 1.0 + rng.random_range(-0.05..0.05);
    for r in &mut s.params.rot {
        *r += rng.random_range(-0.05..0.05);
    }
    for t in &mut s.params.trans[..2] {
        *t += rng.random_range(-0.003..0.003);
    }
    for c in &mut s.appearance.colors {
        for k in 0..3 {
            c[k] = (c[k] + rng.random_range(-0.1..0.1)).clamp(0.05, 0.6);
        }
    }
    s.appearance.lighting.ambient = 0.5;
    s.appearance.lighting.directional = 0.4;
    s.appearance.lighting.direction = [0.2, -0.1, -1.0];
    s
}

/// Checks every term on its blocks at one synthetic configuration.
/// `max_coords` caps the coordinates checked per block.
pub fn gradient_suite(model: &HandModel, seed: u64, size: usize, max_coords: usize) -> Result<Vec<SuiteRow>> {
    let f = suite_fixture(model, seed, size)?;
    let frames = BoneFrames::from_model(model);
    let prior = SkeletonPrior::builtin();
    let registry = TermRegistry::builtin();
    let problem = Problem {
        model,
        frames: &frames,
        prior: &prior,
        registry: &registry,
        intrinsics: &f.scene.intrinsics,
        detected: &f.scene.keypoints,
        estimated: Some(&f.estimated),
        gt_joints: Some(&f.gt),
        image: Some(&f.scene.image),
        weights: Weights::default(),
        normalize_con_sum: false,
    };
    let mut rows = Vec::new();
    for term in SUITE_TERMS {
        let terms = registry.resolve(&[term])?;
        let obj = MaskedObjective::new(problem, f.state.clone(), ParamMask::from_blocks(&suite_blocks(term)), terms)?;
        let x = obj.gather(&f.state);
        for (block, range) in obj.block_ranges() {
            let opts = GradCheckOptions {
                eps: suite_eps(term, block.name()),
                max_coords_per_block: Some(max_coords),
                seed,
            };
            let b = check_gradient(&obj, &x, &[(block.name().to_string(), range)], &opts)?
                .pop()
                .expect("one block checked");
            rows.push(SuiteRow {
                term: term.to_string(),
                seed,
                tolerance: suite_tolerance(term, &b.block),
                block: b.block,
                rel_err: b.rel_err,
                checked: b.checked,
                skipped: b.skipped,
            });
        }
    }
    Ok(rows)
}
