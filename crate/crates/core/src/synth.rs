//! Synthetic scenes rendered from known parameters, for tests, the
//! gradient-check command and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::camera::{project, Intrinsics, Keypoints2D};
use crate::energy::{bone_angles, e_skeleton, BoneFrames, Points2, SkeletonPrior};
use crate::error::{Error, Result};
use crate::imaging::ColorImage;
use crate::model::{decode, HandGeometry, HandModel, HandParams, NUM_KEYPOINTS};
use crate::optim::FitState;
use crate::render::{render, Appearance, Lighting, DEFAULT_COLOR};

const MAX_TRIES: usize = 10_000;

/// A rendered hand with everything that produced it.
#[derive(Debug, Clone)]
pub struct Scene {
    pub truth: FitState,
    pub geometry: HandGeometry,
    pub intrinsics: Intrinsics,
    /// Exact projections of the true keypoints, confidence 1.
    pub keypoints: Keypoints2D,
    pub image: ColorImage,
}

/// Square camera looking down +z with the principal point at the centre.
pub fn square_camera(size: usize) -> Intrinsics {
    let c = (size as f64 - 1.0) / 2.0;
    Intrinsics {
        fx: 2.0 * size as f64,
        fy: 2.0 * size as f64,
        cx: c,
        cy: c,
        width: size,
        height: size,
    }
}

/// Default spread of sampled shape coefficients.
pub const SHAPE_STD: f64 = 0.25;

/// Draws hand parameters inside the joint-angle prior: moderate finger
/// flexion, small abduction and twist, shape coefficients with standard
/// deviation `shape_std`, small global rotation and a depth of 0.5 to 0.7 m.
pub fn sample_params(
    rng: &mut impl Rng,
    model: &HandModel,
    frames: &BoneFrames,
    prior: &SkeletonPrior,
    shape_std: f64,
) -> Result<HandParams> {
    let shape = Normal::new(0.0, shape_std).map_err(|e| Error::InvalidInput(e.to_string()))?;
    for _ in 0..MAX_TRIES {
        let mut p = HandParams::default();
        for (i, t) in p.theta.iter_mut().enumerate() {
            *t = match i {
                0..=2 => rng.random_range(-0.1..0.2),
                3..=14 => rng.random_range(-0.1..0.9),
                15..=19 => rng.random_range(-0.1..0.1),
                _ => rng.random_range(-0.05..0.05),
            };
        }
        for b in &mut p.beta {
            *b = shape.sample(rng);
        }
        p.scale = 1.0;
        p.rot = [
            rng.random_range(-0.25..0.25),
            rng.random_range(-0.25..0.25),
            rng.random_range(-0.25..0.25),
        ];
        p.trans = [
            rng.random_range(-0.02..0.02),
            rng.random_range(-0.02..0.02),
            rng.random_range(0.5..0.7),
        ];
        if e_skeleton(&bone_angles(&p.theta, model, frames), prior) == 0.0 {
            return Ok(p);
        }
    }
    Err(Error::Invariant(format!("no feasible pose in {MAX_TRIES} draws")))
}

/// Renders a scene from `params` with near-uniform skin colour and default
/// lighting.
pub fn render_scene(
    model: &HandModel,
    params: HandParams,
    rng: &mut impl Rng,
    intrinsics: Intrinsics,
) -> Result<Scene> {
    let mut appearance = Appearance {
        colors: Appearance::uniform(model.template_vertices.len(), DEFAULT_COLOR).colors,
        lighting: Lighting::default(),
    };
    for c in &mut appearance.colors {
        for k in 0..3 {
            c[k] += rng.random_range(-0.03..0.03);
        }
    }
    appearance.project_feasible();
    let geometry = decode(model, &params)?;
    let points: Points2 = project(&geometry.joints21, &intrinsics)?
        .try_into()
        .expect("21 keypoints");
    let image = render(&geometry.vertices, &model.faces, &appearance, &intrinsics)?.image();
    debug_assert_eq!(points.len(), NUM_KEYPOINTS);
    Ok(Scene {
        truth: FitState { params, appearance },
        geometry,
        intrinsics,
        keypoints: Keypoints2D::with_unit_confidence(points),
        image,
    })
}

/// A random feasible scene at `size` x `size` pixels, fully determined by
/// `seed`.
pub fn synthetic_scene(model: &HandModel, seed: u64, size: usize) -> Result<Scene> {
    synthetic_scene_with(model, seed, size, SHAPE_STD)
}

pub fn synthetic_scene_with(model: &HandModel, seed: u64, size: usize, shape_std: f64) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = BoneFrames::from_model(model);
    let params = sample_params(&mut rng, model, &frames, &SkeletonPrior::builtin(), shape_std)?;
    render_scene(model, params, &mut rng, square_camera(size))
}
