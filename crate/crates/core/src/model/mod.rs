//! The parametric hand model: portable file I/O, pose/shape decoding,
//! linear blend skinning and the global similarity transform.
//!
//! Points are stored as column vectors internally. The global transform
//! follows the row-vector convention `M = s * M0 * R + T`, i.e. for a single
//! column point `m = s * R^T * m0 + T` with `R = rodrigues(rot)`. Every caller
//! goes through [`apply_global`], so the convention is fixed in one place.

mod io;
mod skinning;
pub mod toy;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::{Mat3, Vec3};

pub use io::{load_model, parse_model, save_model, MODEL_FORMAT};
pub use skinning::{
    apply_global, apply_global_backward, pose_from_pca, regress_joints21,
    regress_joints21_backward, skin, GlobalGrad, SkinState,
};

pub const NUM_VERTICES: usize = 778;
pub const NUM_JOINTS: usize = 16;
pub const NUM_KEYPOINTS: usize = 21;
pub const NUM_SHAPE: usize = 10;
pub const NUM_POSE_PCA: usize = 30;
pub const POSE_DIM: usize = 45;
pub const POSE_FEATURES: usize = 135;
pub const NUM_FINGER_BONES: usize = 15;

/// Where each of the 21 output keypoints comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeypointSource {
    /// One of the 16 skinned joints.
    Joint(usize),
    /// A fingertip vertex; index into `fingertip_vertex_ids`
    /// (thumb, index, middle, ring, pinky).
    Tip(usize),
}

use KeypointSource::{Joint, Tip};

/// Keypoint layout: 0 wrist, 1-4 thumb, 5-8 index, 9-12 middle, 13-16 ring,
/// 17-20 pinky, each finger listed base to tip. The 16 skinned joints use the
/// usual model order (wrist, index, middle, pinky, ring, thumb).
pub const KEYPOINT_SOURCES: [KeypointSource; NUM_KEYPOINTS] = [
    Joint(0),
    Joint(13),
    Joint(14),
    Joint(15),
    Tip(0),
    Joint(1),
    Joint(2),
    Joint(3),
    Tip(1),
    Joint(4),
    Joint(5),
    Joint(6),
    Tip(2),
    Joint(10),
    Joint(11),
    Joint(12),
    Tip(3),
    Joint(7),
    Joint(8),
    Joint(9),
    Tip(4),
];

/// Inverse of [`KEYPOINT_SOURCES`] for the common detector export that lists
/// the 16 skinned joints first and the five tips after them.
pub const MODEL_ORDER_TO_KEYPOINT: [usize; NUM_KEYPOINTS] =
    [0, 5, 6, 7, 9, 10, 11, 17, 18, 19, 13, 14, 15, 1, 2, 3, 4, 8, 12, 16, 20];

/// The 20 bones of the keypoint skeleton: five palm bones from the wrist,
/// then three per finger.
pub const BONES: [(usize, usize); 20] = [
    (0, 1),
    (0, 5),
    (0, 9),
    (0, 13),
    (0, 17),
    (1, 2),
    (2, 3),
    (3, 4),
    (5, 6),
    (6, 7),
    (7, 8),
    (9, 10),
    (10, 11),
    (11, 12),
    (13, 14),
    (14, 15),
    (15, 16),
    (17, 18),
    (18, 19),
    (19, 20),
];

/// The 15 finger bones in prior-table order (thumb, index, middle, ring,
/// pinky; base to tip), as keypoint index pairs.
pub const FINGER_BONES: [(usize, usize); NUM_FINGER_BONES] = [
    (1, 2),
    (2, 3),
    (3, 4),
    (5, 6),
    (6, 7),
    (7, 8),
    (9, 10),
    (10, 11),
    (11, 12),
    (13, 14),
    (14, 15),
    (15, 16),
    (17, 18),
    (18, 19),
    (19, 20),
];

/// Skinned joint whose local rotation orients each finger bone.
pub const FINGER_BONE_JOINTS: [usize; NUM_FINGER_BONES] =
    [13, 14, 15, 1, 2, 3, 4, 5, 6, 10, 11, 12, 7, 8, 9];

/// Keypoint pair defining the middle finger's proximal phalanx.
pub const MIDDLE_PROXIMAL: (usize, usize) = (9, 10);

/// Parametric right-hand template. Immutable after loading.
#[derive(Debug, Clone, PartialEq)]
pub struct HandModel {
    pub template_vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    /// Row-major `[vertex][xyz][component]`, 778 x 3 x 10.
    pub shape_basis: Vec<f64>,
    /// Row-major `[vertex][xyz][feature]`, 778 x 3 x 135.
    pub pose_basis: Vec<f64>,
    /// Row-major 16 x 778.
    pub joint_regressor: Vec<f64>,
    /// Row-major 778 x 16.
    pub skin_weights: Vec<f64>,
    pub kinematic_parents: [Option<usize>; NUM_JOINTS],
    /// Row-major 30 x 45.
    pub pca_pose_components: Vec<f64>,
    pub pca_pose_mean: [f64; POSE_DIM],
    pub fingertip_vertex_ids: [usize; 5],
}

impl HandModel {
    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn skin_weight(&self, vertex: usize, joint: usize) -> f64 {
        self.skin_weights[vertex * NUM_JOINTS + joint]
    }

    /// Checks every structural invariant of the model arrays.
    pub fn validate(&self) -> Result<()> {
        let n = NUM_VERTICES;
        let check_len = |name: &str, got: usize, want: usize| {
            if got != want {
                Err(Error::shape(name, format!("expected {want} values, got {got}")))
            } else {
                Ok(())
            }
        };
        check_len("template_vertices", self.template_vertices.len(), n)?;
        check_len("shape_basis", self.shape_basis.len(), n * 3 * NUM_SHAPE)?;
        check_len("pose_basis", self.pose_basis.len(), n * 3 * POSE_FEATURES)?;
        check_len("joint_regressor", self.joint_regressor.len(), NUM_JOINTS * n)?;
        check_len("skin_weights", self.skin_weights.len(), n * NUM_JOINTS)?;
        check_len(
            "pca_pose_components",
            self.pca_pose_components.len(),
            NUM_POSE_PCA * POSE_DIM,
        )?;
        if self.faces.is_empty() {
            return Err(Error::Invariant("model has no faces".into()));
        }
        if let Some((f, _)) = self
            .faces
            .iter()
            .enumerate()
            .find(|(_, f)| f.iter().any(|&i| i >= n))
        {
            return Err(Error::Invariant(format!("face {f} indexes past vertex {n}")));
        }
        for (i, row) in self.skin_weights.chunks(NUM_JOINTS).enumerate() {
            if row.iter().any(|w| !(0.0..=1.0).contains(w)) {
                return Err(Error::Invariant(format!(
                    "skin weights of vertex {i} leave [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-5 {
                return Err(Error::Invariant(format!(
                    "skin weights of vertex {i} sum to {sum}"
                )));
            }
        }
        for (j, row) in self.joint_regressor.chunks(n).enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-4 {
                return Err(Error::Invariant(format!(
                    "joint regressor row {j} sums to {sum}"
                )));
            }
        }
        if self.kinematic_parents[0].is_some() {
            return Err(Error::Invariant("joint 0 must be the root".into()));
        }
        for (j, p) in self.kinematic_parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < j => {}
                _ => {
                    return Err(Error::Invariant(format!(
                        "joint {j} needs a parent with a smaller index, got {p:?}"
                    )))
                }
            }
        }
        if let Some(id) = self.fingertip_vertex_ids.iter().find(|&&id| id >= n) {
            return Err(Error::Invariant(format!("fingertip vertex {id} out of range")));
        }
        let finite = self
            .template_vertices
            .iter()
            .flat_map(|v| v.iter())
            .chain(&self.shape_basis)
            .chain(&self.pose_basis)
            .chain(&self.joint_regressor)
            .chain(&self.pca_pose_components)
            .chain(&self.pca_pose_mean)
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::Invariant("model contains non-finite values".into()));
        }
        Ok(())
    }
}

/// Geometry code: PCA pose, shape, scale, axis-angle rotation, translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandParams {
    pub theta: [f64; NUM_POSE_PCA],
    pub beta: [f64; NUM_SHAPE],
    pub scale: f64,
    pub rot: [f64; 3],
    pub trans: [f64; 3],
}

impl Default for HandParams {
    fn default() -> Self {
        HandParams {
            theta: [0.0; NUM_POSE_PCA],
            beta: [0.0; NUM_SHAPE],
            scale: 1.0,
            rot: [0.0; 3],
            trans: [0.0; 3],
        }
    }
}

impl HandParams {
    pub fn validate(&self) -> Result<()> {
        let all = self
            .theta
            .iter()
            .chain(&self.beta)
            .chain(std::iter::once(&self.scale))
            .chain(&self.rot)
            .chain(&self.trans);
        if let Some(x) = all.clone().find(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite hand parameter {x}")));
        }
        if self.scale <= 0.0 {
            return Err(Error::NonPositiveScale(self.scale));
        }
        Ok(())
    }

    pub fn rot_vec(&self) -> Vec3 {
        Vec3::from(self.rot)
    }

    pub fn trans_vec(&self) -> Vec3 {
        Vec3::from(self.trans)
    }
}

/// Camera-frame mesh and keypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct HandGeometry {
    pub vertices: Vec<Vec3>,
    pub joints21: [Vec3; NUM_KEYPOINTS],
}

/// Full forward decode of `params` into camera-frame geometry.
pub fn decode(model: &HandModel, params: &HandParams) -> Result<HandGeometry> {
    let state = skin(&params.theta, &params.beta, model);
    let joints = regress_joints21(&state.vertices, &state.joints, model);
    apply_global(
        &state.vertices,
        &joints,
        params.scale,
        &params.rot_vec(),
        &params.trans_vec(),
    )
}

/// Local joint rotations for a full 45-dim axis-angle pose (joint 0 is the
/// identity; global orientation lives in `HandParams::rot`).
pub fn local_rotations(pose: &[f64; POSE_DIM]) -> [Mat3; NUM_JOINTS] {
    let mut out = [Mat3::identity(); NUM_JOINTS];
    for (k, r) in out.iter_mut().enumerate().skip(1) {
        let o = 3 * (k - 1);
        *r = crate::rotation::rodrigues(&Vec3::new(pose[o], pose[o + 1], pose[o + 2]));
    }
    out
}
