//! Anatomical bone frames, bone angles and the skeleton feasibility prior.

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{
    local_rotations, pose_from_pca, regress_joints21, HandModel, FINGER_BONES, FINGER_BONE_JOINTS, NUM_JOINTS,
    NUM_FINGER_BONES, NUM_KEYPOINTS, NUM_POSE_PCA, POSE_DIM,
};
use crate::rotation::{matrix_to_euler, matrix_to_euler_vjp, Mat3, Vec3};

const BUILTIN_PRIOR: &str = include_str!("../../data/skeleton_prior_v1.json");

/// `(azimuth, pitch, roll)` in degrees for each finger bone.
pub type BoneAngles = [[f64; 3]; NUM_FINGER_BONES];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PriorFile {
    version: u32,
    units: String,
    bones: Vec<PriorBone>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PriorBone {
    bone: [usize; 2],
    azimuth: [f64; 2],
    pitch: [f64; 2],
    roll: [f64; 2],
}

/// Feasible `(min, max)` degree ranges per finger bone and angle.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonPrior {
    pub ranges: [[(f64, f64); 3]; NUM_FINGER_BONES],
}

impl SkeletonPrior {
    /// The table shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_PRIOR).expect("shipped skeleton prior is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: PriorFile = serde_json::from_str(text).map_err(|source| Error::Json {
            context: "skeleton prior".into(),
            source,
        })?;
        if file.version != 1 || file.units != "degrees" {
            return Err(Error::Config(format!(
                "unsupported skeleton prior version {} with units `{}`",
                file.version, file.units
            )));
        }
        if file.bones.len() != NUM_FINGER_BONES {
            return Err(Error::Config(format!(
                "skeleton prior lists {} bones, expected {NUM_FINGER_BONES}",
                file.bones.len()
            )));
        }
        let mut ranges = [[(0.0, 0.0); 3]; NUM_FINGER_BONES];
        for (i, b) in file.bones.iter().enumerate() {
            let (a, c) = FINGER_BONES[i];
            if b.bone != [a, c] {
                return Err(Error::Config(format!(
                    "skeleton prior entry {i} is bone {:?}, expected [{a}, {c}]",
                    b.bone
                )));
            }
            for (k, r) in [b.azimuth, b.pitch, b.roll].iter().enumerate() {
                if !(r[0] < r[1]) || !r[0].is_finite() || !r[1].is_finite() {
                    return Err(Error::Config(format!("skeleton prior bone {:?}: bad range {r:?}", b.bone)));
                }
                ranges[i][k] = (r[0], r[1]);
            }
        }
        Ok(SkeletonPrior { ranges })
    }
}

/// Per-bone anatomical frames taken from the rest template. Rows are the
/// dorsal normal, the lateral axis and the bone axis (child minus parent),
/// forming a right-handed basis. Angles are measured in these frames.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneFrames {
    frames: [Mat3; NUM_FINGER_BONES],
}

impl BoneFrames {
    pub fn from_model(model: &HandModel) -> Self {
        let n = model.template_vertices.len();
        let mut joints = [Vec3::zeros(); NUM_JOINTS];
        for (j, out) in joints.iter_mut().enumerate() {
            let row = &model.joint_regressor[j * n..(j + 1) * n];
            *out = row.iter().zip(&model.template_vertices).map(|(w, v)| v * *w).sum();
        }
        Self::from_keypoints(&regress_joints21(&model.template_vertices, &joints, model))
    }

    pub fn from_keypoints(kp: &[Vec3; NUM_KEYPOINTS]) -> Self {
        // Right hand: (pinky base - wrist) x (index base - wrist) points out
        // of the back of the hand.
        let dorsal = (kp[17] - kp[0]).cross(&(kp[5] - kp[0])).normalize();
        let frames = FINGER_BONES.map(|(a, c)| {
            let axis = (kp[c] - kp[a]).normalize();
            let n = (dorsal - axis * axis.dot(&dorsal)).normalize();
            let l = axis.cross(&n);
            Mat3::from_rows(&[n.transpose(), l.transpose(), axis.transpose()])
        });
        BoneFrames { frames }
    }

    pub fn frame(&self, bone: usize) -> &Mat3 {
        &self.frames[bone]
    }

    pub fn dorsal(&self, bone: usize) -> Vec3 {
        self.frames[bone].row(0).transpose()
    }

    pub fn lateral(&self, bone: usize) -> Vec3 {
        self.frames[bone].row(1).transpose()
    }

    pub fn bone_axis(&self, bone: usize) -> Vec3 {
        self.frames[bone].row(2).transpose()
    }

    /// Local rotation expressed in the bone frame. Written as `I + F (R - I) F^T`
    /// so an identity rotation stays exactly the identity.
    fn to_frame(&self, bone: usize, r: &Mat3) -> Mat3 {
        let f = &self.frames[bone];
        Mat3::identity() + f * (r - Mat3::identity()) * f.transpose()
    }
}

/// Bone angles from the 16 local joint rotations.
pub fn angles_from_local(local: &[Mat3; NUM_JOINTS], frames: &BoneFrames) -> BoneAngles {
    std::array::from_fn(|b| {
        let e = matrix_to_euler(&frames.to_frame(b, &local[FINGER_BONE_JOINTS[b]]));
        [e.azimuth.to_degrees(), e.pitch.to_degrees(), e.roll.to_degrees()]
    })
}

/// Pulls degree-valued angle gradients back onto the local joint rotations.
pub fn angles_from_local_backward(
    local: &[Mat3; NUM_JOINTS],
    frames: &BoneFrames,
    g_angles: &BoneAngles,
) -> [Mat3; NUM_JOINTS] {
    let mut out = [Mat3::zeros(); NUM_JOINTS];
    let k = 180.0 / std::f64::consts::PI;
    for b in 0..NUM_FINGER_BONES {
        let g = g_angles[b];
        if g == [0.0; 3] {
            continue;
        }
        let j = FINGER_BONE_JOINTS[b];
        let rf = frames.to_frame(b, &local[j]);
        let g_rf = matrix_to_euler_vjp(&rf, k * g[0], k * g[1], k * g[2]);
        let f = frames.frame(b);
        out[j] += f.transpose() * g_rf * f;
    }
    out
}

/// `(azimuth, pitch, roll)` of every finger bone for a PCA pose, degrees.
pub fn bone_angles(theta: &[f64; NUM_POSE_PCA], model: &HandModel, frames: &BoneFrames) -> BoneAngles {
    let pose: [f64; POSE_DIM] = pose_from_pca(theta, model);
    angles_from_local(&local_rotations(&pose), frames)
}

fn penalty(a: f64, (lo, hi): (f64, f64)) -> f64 {
    if a < lo {
        lo - a
    } else if a > hi {
        a - hi
    } else {
        0.0
    }
}

/// Mean over the 15 bones of the summed out-of-range degrees.
pub fn e_skeleton(angles: &BoneAngles, prior: &SkeletonPrior) -> f64 {
    let mut sum = 0.0;
    for (a, r) in angles.iter().zip(&prior.ranges) {
        for k in 0..3 {
            sum += penalty(a[k], r[k]);
        }
    }
    sum / NUM_FINGER_BONES as f64
}

pub fn e_skeleton_grad(angles: &BoneAngles, prior: &SkeletonPrior) -> BoneAngles {
    let w = 1.0 / NUM_FINGER_BONES as f64;
    std::array::from_fn(|b| {
        std::array::from_fn(|k| {
            let (lo, hi) = prior.ranges[b][k];
            let a = angles[b][k];
            if a < lo {
                -w
            } else if a > hi {
                w
            } else {
                0.0
            }
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::toy::{toy_model, TOY_SEED};
    use crate::rotation::{euler_to_matrix, rodrigues};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn builtin_table_matches_reference_values() {
        let p = SkeletonPrior::builtin();
        assert_eq!(p.ranges[0], [(-22.5, 33.75), (-22.5, 22.5), (0.0, 90.0)]);
        assert_eq!(p.ranges[2], [(-5.0, 5.0), (-100.0, 20.0), (-5.0, 5.0)]);
        assert_eq!(p.ranges[12], [(-10.0, 20.0), (-100.0, 10.0), (-20.0, 5.0)]);
        for r in p.ranges.iter().flatten() {
            assert!(r.0 < r.1);
        }
    }

    #[test]
    fn malformed_tables_are_rejected() {
        let swapped = BUILTIN_PRIOR.replacen("[1, 2]", "[2, 1]", 1);
        assert!(SkeletonPrior::parse(&swapped).is_err());
        let inverted = BUILTIN_PRIOR.replacen("[-22.5, 33.75]", "[33.75, -22.5]", 1);
        assert!(SkeletonPrior::parse(&inverted).is_err());
    }

    #[test]
    fn frames_are_right_handed_and_orthonormal() {
        let frames = BoneFrames::from_model(&toy_model(TOY_SEED));
        for b in 0..NUM_FINGER_BONES {
            let f = frames.frame(b);
            assert!((f * f.transpose() - Mat3::identity()).norm() < 1e-12);
            assert!((f.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_pose_has_zero_angles() {
        let frames = BoneFrames::from_model(&toy_model(TOY_SEED));
        let a = angles_from_local(&[Mat3::identity(); NUM_JOINTS], &frames);
        assert_eq!(a, [[0.0; 3]; NUM_FINGER_BONES]);
        assert_eq!(e_skeleton(&a, &SkeletonPrior::builtin()), 0.0);
    }

    #[test]
    fn rest_pca_pose_is_feasible() {
        let model = toy_model(TOY_SEED);
        let frames = BoneFrames::from_model(&model);
        let a = bone_angles(&[0.0; NUM_POSE_PCA], &model, &frames);
        assert_eq!(e_skeleton(&a, &SkeletonPrior::builtin()), 0.0);
    }

    #[test]
    fn roll_about_bone_axis() {
        let frames = BoneFrames::from_model(&toy_model(TOY_SEED));
        let mut local = [Mat3::identity(); NUM_JOINTS];
        let bone = 7;
        local[FINGER_BONE_JOINTS[bone]] = rodrigues(&(frames.bone_axis(bone) * 30f64.to_radians()));
        let a = angles_from_local(&local, &frames);
        for (b, ang) in a.iter().enumerate() {
            let want = if b == bone { [0.0, 0.0, 30.0] } else { [0.0; 3] };
            for k in 0..3 {
                assert!((ang[k] - want[k]).abs() < 1e-9, "bone {b}: {ang:?}");
            }
        }
    }

    #[test]
    fn flexion_about_negative_lateral_is_negative_pitch() {
        let frames = BoneFrames::from_model(&toy_model(TOY_SEED));
        let mut local = [Mat3::identity(); NUM_JOINTS];
        local[FINGER_BONE_JOINTS[4]] = rodrigues(&(-frames.lateral(4) * 0.5));
        let a = angles_from_local(&local, &frames);
        assert!((a[4][1] + 0.5f64.to_degrees()).abs() < 1e-9);
    }

    #[test]
    fn factor_and_recompose_round_trip() {
        let frames = BoneFrames::from_model(&toy_model(TOY_SEED));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let local: [Mat3; NUM_JOINTS] = std::array::from_fn(|_| {
                rodrigues(&Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            });
            let a = angles_from_local(&local, &frames);
            for b in 0..NUM_FINGER_BONES {
                let r = euler_to_matrix(a[b][0].to_radians(), a[b][1].to_radians(), a[b][2].to_radians());
                let f = frames.frame(b);
                let back = f.transpose() * r * f;
                assert!((back - local[FINGER_BONE_JOINTS[b]]).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn one_angle_fifteen_degrees_over() {
        let mut a = [[0.0; 3]; NUM_FINGER_BONES];
        a[5][1] = 25.0;
        assert!((e_skeleton(&a, &SkeletonPrior::builtin()) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn e_skeleton_matches_loop_oracle() {
        let prior = SkeletonPrior::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let a: BoneAngles = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-120.0..120.0)));
            let mut sum = 0.0;
            for b in 0..15 {
                for k in 0..3 {
                    let (lo, hi) = prior.ranges[b][k];
                    if a[b][k] < lo {
                        sum += lo - a[b][k];
                    }
                    if a[b][k] > hi {
                        sum += a[b][k] - hi;
                    }
                }
            }
            assert!((e_skeleton(&a, &prior) - sum / 15.0).abs() < 1e-12);
        }
    }

    #[test]
    fn angle_backward_matches_central_differences() {
        let model = toy_model(TOY_SEED);
        let frames = BoneFrames::from_model(&model);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let local: [Mat3; NUM_JOINTS] = std::array::from_fn(|_| {
            rodrigues(&Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)))
        });
        let g: BoneAngles = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
        let loss = |l: &[Mat3; NUM_JOINTS]| -> f64 {
            angles_from_local(l, &frames).iter().zip(&g).map(|(a, g)| a[0] * g[0] + a[1] * g[1] + a[2] * g[2]).sum()
        };
        let grad = angles_from_local_backward(&local, &frames, &g);
        for j in 0..NUM_JOINTS {
            for r in 0..3 {
                for c in 0..3 {
                    let h = 1e-7;
                    let (mut p, mut m) = (local, local);
                    p[j][(r, c)] += h;
                    m[j][(r, c)] -= h;
                    let num = (loss(&p) - loss(&m)) / (2.0 * h);
                    assert!((num - grad[j][(r, c)]).abs() < 1e-5 * (1.0 + num.abs()), "{j} ({r},{c}): {num} vs {}", grad[j][(r, c)]);
                }
            }
        }
    }
}
