use super::{
    HandGeometry, HandModel, KeypointSource, KEYPOINT_SOURCES, NUM_JOINTS, NUM_KEYPOINTS,
    NUM_POSE_PCA, NUM_SHAPE, NUM_VERTICES, POSE_DIM, POSE_FEATURES,
};
use crate::error::{Error, Result};
use crate::rotation::{rodrigues, rodrigues_vjp, Mat3, Vec3};

/// `pca_pose_mean + theta * pca_pose_components`.
pub fn pose_from_pca(theta: &[f64; NUM_POSE_PCA], model: &HandModel) -> [f64; POSE_DIM] {
    let mut pose = model.pca_pose_mean;
    for (c, &t) in theta.iter().enumerate() {
        if t == 0.0 {
            continue;
        }
        let row = &model.pca_pose_components[c * POSE_DIM..(c + 1) * POSE_DIM];
        for (p, r) in pose.iter_mut().zip(row) {
            *p += t * r;
        }
    }
    pose
}

/// Intermediates of one skinning pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct SkinState {
    pub pose: [f64; POSE_DIM],
    /// Local joint rotations; entry 0 is the identity.
    pub local: [Mat3; NUM_JOINTS],
    pub shaped: Vec<Vec3>,
    pub posed: Vec<Vec3>,
    /// Joint locations regressed from the shaped (unposed) template.
    pub rest_joints: [Vec3; NUM_JOINTS],
    pub world_rot: [Mat3; NUM_JOINTS],
    /// Posed joint locations in the hand frame.
    pub joints: [Vec3; NUM_JOINTS],
    /// Posed vertices `M0` in the hand frame.
    pub vertices: Vec<Vec3>,
}

/// Blend shapes plus linear blend skinning along the kinematic tree.
pub fn skin(theta: &[f64; NUM_POSE_PCA], beta: &[f64; NUM_SHAPE], model: &HandModel) -> SkinState {
    let pose = pose_from_pca(theta, model);
    let local = super::local_rotations(&pose);

    let shaped: Vec<Vec3> = (0..NUM_VERTICES)
        .map(|i| {
            let mut v = model.template_vertices[i];
            for c in 0..3 {
                let row = &model.shape_basis[(i * 3 + c) * NUM_SHAPE..(i * 3 + c + 1) * NUM_SHAPE];
                v[c] += row.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
            }
            v
        })
        .collect();

    let mut rest_joints = [Vec3::zeros(); NUM_JOINTS];
    for (j, out) in rest_joints.iter_mut().enumerate() {
        let row = &model.joint_regressor[j * NUM_VERTICES..(j + 1) * NUM_VERTICES];
        *out = row
            .iter()
            .zip(&shaped)
            .filter(|(w, _)| **w != 0.0)
            .fold(Vec3::zeros(), |acc, (w, v)| acc + v * *w);
    }

    let mut features = [0.0; POSE_FEATURES];
    for k in 1..NUM_JOINTS {
        let d = local[k] - Mat3::identity();
        for a in 0..3 {
            for b in 0..3 {
                features[9 * (k - 1) + 3 * a + b] = d[(a, b)];
            }
        }
    }
    let posed: Vec<Vec3> = shaped
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut v = *s;
            for c in 0..3 {
                let row = &model.pose_basis
                    [(i * 3 + c) * POSE_FEATURES..(i * 3 + c + 1) * POSE_FEATURES];
                v[c] += row.iter().zip(&features).map(|(a, b)| a * b).sum::<f64>();
            }
            v
        })
        .collect();

    let mut world_rot = [Mat3::identity(); NUM_JOINTS];
    let mut joints = [Vec3::zeros(); NUM_JOINTS];
    joints[0] = rest_joints[0];
    for k in 1..NUM_JOINTS {
        let p = model.kinematic_parents[k].expect("validated parent");
        world_rot[k] = world_rot[p] * local[k];
        joints[k] = world_rot[p] * (rest_joints[k] - rest_joints[p]) + joints[p];
    }

    // Skinning transform of joint k maps x to world_rot[k] * (x - rest_k) + joints[k].
    let offsets: Vec<Vec3> = (0..NUM_JOINTS)
        .map(|k| joints[k] - world_rot[k] * rest_joints[k])
        .collect();
    let vertices = posed
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let mut out = Vec3::zeros();
            for k in 0..NUM_JOINTS {
                let w = model.skin_weight(i, k);
                if w != 0.0 {
                    out += (world_rot[k] * x + offsets[k]) * w;
                }
            }
            out
        })
        .collect();

    SkinState {
        pose,
        local,
        shaped,
        posed,
        rest_joints,
        world_rot,
        joints,
        vertices,
    }
}

impl SkinState {
    /// Pulls gradients on the posed vertices, posed joints and local joint
    /// rotations back onto `(theta, beta)`.
    pub fn backward(
        &self,
        model: &HandModel,
        g_vertices: &[Vec3],
        g_joints: &[Vec3; NUM_JOINTS],
        g_local_extra: &[Mat3; NUM_JOINTS],
    ) -> ([f64; NUM_POSE_PCA], [f64; NUM_SHAPE]) {
        let mut g_world = [Mat3::zeros(); NUM_JOINTS];
        let mut g_offset = [Vec3::zeros(); NUM_JOINTS];
        let mut g_posed = vec![Vec3::zeros(); NUM_VERTICES];
        for (i, g) in g_vertices.iter().enumerate() {
            if *g == Vec3::zeros() {
                continue;
            }
            let x = self.posed[i];
            for k in 0..NUM_JOINTS {
                let w = model.skin_weight(i, k);
                if w != 0.0 {
                    let wg = g * w;
                    g_posed[i] += self.world_rot[k].transpose() * wg;
                    g_world[k] += wg * x.transpose();
                    g_offset[k] += wg;
                }
            }
        }

        let mut g_joint = *g_joints;
        let mut g_rest = [Vec3::zeros(); NUM_JOINTS];
        for k in 0..NUM_JOINTS {
            g_joint[k] += g_offset[k];
            g_world[k] -= g_offset[k] * self.rest_joints[k].transpose();
            g_rest[k] -= self.world_rot[k].transpose() * g_offset[k];
        }

        let mut g_local = *g_local_extra;
        for k in (1..NUM_JOINTS).rev() {
            let p = model.kinematic_parents[k].expect("validated parent");
            let d = self.rest_joints[k] - self.rest_joints[p];
            g_world[p] += g_world[k] * self.local[k].transpose();
            g_local[k] += self.world_rot[p].transpose() * g_world[k];
            g_world[p] += g_joint[k] * d.transpose();
            let gd = self.world_rot[p].transpose() * g_joint[k];
            g_rest[k] += gd;
            g_rest[p] -= gd;
            let gk = g_joint[k];
            g_joint[p] += gk;
        }
        g_rest[0] += g_joint[0];

        let mut g_features = [0.0; POSE_FEATURES];
        for (i, g) in g_posed.iter().enumerate() {
            for c in 0..3 {
                let gc = g[c];
                if gc == 0.0 {
                    continue;
                }
                let row = &model.pose_basis
                    [(i * 3 + c) * POSE_FEATURES..(i * 3 + c + 1) * POSE_FEATURES];
                for (gf, a) in g_features.iter_mut().zip(row) {
                    *gf += a * gc;
                }
            }
        }
        for k in 1..NUM_JOINTS {
            for a in 0..3 {
                for b in 0..3 {
                    g_local[k][(a, b)] += g_features[9 * (k - 1) + 3 * a + b];
                }
            }
        }

        let mut g_shaped = g_posed;
        for (j, g) in g_rest.iter().enumerate() {
            let row = &model.joint_regressor[j * NUM_VERTICES..(j + 1) * NUM_VERTICES];
            for (gs, w) in g_shaped.iter_mut().zip(row) {
                if *w != 0.0 {
                    *gs += g * *w;
                }
            }
        }
        let mut g_beta = [0.0; NUM_SHAPE];
        for (i, g) in g_shaped.iter().enumerate() {
            for c in 0..3 {
                let row = &model.shape_basis[(i * 3 + c) * NUM_SHAPE..(i * 3 + c + 1) * NUM_SHAPE];
                for (gb, a) in g_beta.iter_mut().zip(row) {
                    *gb += a * g[c];
                }
            }
        }

        let mut g_pose = [0.0; POSE_DIM];
        for k in 1..NUM_JOINTS {
            let o = 3 * (k - 1);
            let r = Vec3::new(self.pose[o], self.pose[o + 1], self.pose[o + 2]);
            let g = rodrigues_vjp(&r, &g_local[k]);
            g_pose[o..o + 3].copy_from_slice(g.as_slice());
        }
        let mut g_theta = [0.0; NUM_POSE_PCA];
        for (c, gt) in g_theta.iter_mut().enumerate() {
            let row = &model.pca_pose_components[c * POSE_DIM..(c + 1) * POSE_DIM];
            *gt = row.iter().zip(&g_pose).map(|(a, b)| a * b).sum();
        }
        (g_theta, g_beta)
    }
}

/// The 16 skinned joints plus the five fingertip vertices, in keypoint order.
pub fn regress_joints21(
    vertices: &[Vec3],
    joints16: &[Vec3; NUM_JOINTS],
    model: &HandModel,
) -> [Vec3; NUM_KEYPOINTS] {
    KEYPOINT_SOURCES.map(|s| match s {
        KeypointSource::Joint(j) => joints16[j],
        KeypointSource::Tip(t) => vertices[model.fingertip_vertex_ids[t]],
    })
}

/// Scatters keypoint gradients onto joints and (for tips) vertices.
pub fn regress_joints21_backward(
    g_keypoints: &[Vec3; NUM_KEYPOINTS],
    model: &HandModel,
    g_vertices: &mut [Vec3],
    g_joints16: &mut [Vec3; NUM_JOINTS],
) {
    for (g, s) in g_keypoints.iter().zip(KEYPOINT_SOURCES) {
        match s {
            KeypointSource::Joint(j) => g_joints16[j] += g,
            KeypointSource::Tip(t) => g_vertices[model.fingertip_vertex_ids[t]] += g,
        }
    }
}

/// `M = s * M0 * R + T` and `J = s * J0 * R + T` in row-vector form.
pub fn apply_global(
    vertices: &[Vec3],
    joints: &[Vec3; NUM_KEYPOINTS],
    scale: f64,
    rot: &Vec3,
    trans: &Vec3,
) -> Result<HandGeometry> {
    if !(scale > 0.0) {
        return Err(Error::NonPositiveScale(scale));
    }
    let rt = rodrigues(rot).transpose() * scale;
    Ok(HandGeometry {
        vertices: vertices.iter().map(|v| rt * v + trans).collect(),
        joints21: joints.map(|j| rt * j + trans),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalGrad {
    pub vertices: Vec<Vec3>,
    pub joints21: [Vec3; NUM_KEYPOINTS],
    pub scale: f64,
    pub rot: Vec3,
    pub trans: Vec3,
}

/// Backward pass of [`apply_global`].
pub fn apply_global_backward(
    vertices: &[Vec3],
    joints: &[Vec3; NUM_KEYPOINTS],
    scale: f64,
    rot: &Vec3,
    g_vertices: &[Vec3],
    g_joints: &[Vec3; NUM_KEYPOINTS],
) -> GlobalGrad {
    let r = rodrigues(rot);
    let mut g_r = Mat3::zeros();
    let mut g_scale = 0.0;
    let mut g_trans = Vec3::zeros();
    let mut pull = |p: &Vec3, g: &Vec3| -> Vec3 {
        g_trans += g;
        g_scale += g.dot(&(r.transpose() * p));
        g_r += p * g.transpose() * scale;
        r * g * scale
    };
    let gv = vertices.iter().zip(g_vertices).map(|(p, g)| pull(p, g)).collect();
    let mut gj = [Vec3::zeros(); NUM_KEYPOINTS];
    for (out, (p, g)) in gj.iter_mut().zip(joints.iter().zip(g_joints)) {
        *out = pull(p, g);
    }
    GlobalGrad {
        vertices: gv,
        joints21: gj,
        scale: g_scale,
        rot: rodrigues_vjp(rot, &g_r),
        trans: g_trans,
    }
}
