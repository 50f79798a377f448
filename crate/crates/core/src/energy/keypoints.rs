use crate::camera::Keypoints2D;
use crate::model::{BONES, NUM_KEYPOINTS};
use crate::rotation::Vec3;

/// Huber transition, in pixels.
pub const SMOOTH_L1_DELTA: f64 = 1.0;

pub type Points2 = [[f64; 2]; NUM_KEYPOINTS];

pub fn smooth_l1(r: f64, delta: f64) -> f64 {
    if r.abs() < delta {
        0.5 * r * r / delta
    } else {
        r.abs() - 0.5 * delta
    }
}

pub fn smooth_l1_grad(r: f64, delta: f64) -> f64 {
    if r.abs() < delta {
        r / delta
    } else {
        r.signum()
    }
}

fn point_loss(a: [f64; 2], b: [f64; 2]) -> f64 {
    0.5 * (smooth_l1(a[0] - b[0], SMOOTH_L1_DELTA) + smooth_l1(a[1] - b[1], SMOOTH_L1_DELTA))
}

/// Gradient of `point_loss(a, b)` with respect to `a`.
fn point_loss_grad(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [
        0.5 * smooth_l1_grad(a[0] - b[0], SMOOTH_L1_DELTA),
        0.5 * smooth_l1_grad(a[1] - b[1], SMOOTH_L1_DELTA),
    ]
}

/// Confidence-weighted keypoint distance, averaged over the 21 joints.
pub fn e_loc(detected: &Keypoints2D, projected: &Points2) -> f64 {
    let sum: f64 = (0..NUM_KEYPOINTS)
        .map(|i| detected.confidence[i] * point_loss(detected.points[i], projected[i]))
        .sum();
    sum / NUM_KEYPOINTS as f64
}

pub fn e_loc_grad(detected: &Keypoints2D, projected: &Points2) -> Points2 {
    let mut g = [[0.0; 2]; NUM_KEYPOINTS];
    for (i, gi) in g.iter_mut().enumerate() {
        let d = point_loss_grad(projected[i], detected.points[i]);
        let w = detected.confidence[i] / NUM_KEYPOINTS as f64;
        *gi = [w * d[0], w * d[1]];
    }
    g
}

fn unit(v: [f64; 2]) -> Option<([f64; 2], f64)> {
    let n = v[0].hypot(v[1]);
    (n > 0.0).then(|| ([v[0] / n, v[1] / n], n))
}

fn bone(p: &Points2, (a, b): (usize, usize)) -> [f64; 2] {
    [p[b][0] - p[a][0], p[b][1] - p[a][1]]
}

/// Squared distance between normalized 2D bone directions, weighted by the
/// product of endpoint confidences, averaged over the 20 bones. Bones with
/// zero length on either side contribute nothing.
pub fn e_ori(detected: &Keypoints2D, projected: &Points2) -> f64 {
    let mut sum = 0.0;
    for &(a, b) in &BONES {
        let w = detected.confidence[a] * detected.confidence[b];
        let (Some((nd, _)), Some((np, _))) = (unit(bone(&detected.points, (a, b))), unit(bone(projected, (a, b)))) else {
            continue;
        };
        sum += w * ((nd[0] - np[0]).powi(2) + (nd[1] - np[1]).powi(2));
    }
    sum / BONES.len() as f64
}

pub fn e_ori_grad(detected: &Keypoints2D, projected: &Points2) -> Points2 {
    let mut g = [[0.0; 2]; NUM_KEYPOINTS];
    for &(a, b) in &BONES {
        let w = detected.confidence[a] * detected.confidence[b] / BONES.len() as f64;
        let (Some((nd, _)), Some((np, len))) = (unit(bone(&detected.points, (a, b))), unit(bone(projected, (a, b)))) else {
            continue;
        };
        let gn = [2.0 * w * (np[0] - nd[0]), 2.0 * w * (np[1] - nd[1])];
        let dot = gn[0] * np[0] + gn[1] * np[1];
        let gv = [(gn[0] - np[0] * dot) / len, (gn[1] - np[1] * dot) / len];
        for c in 0..2 {
            g[b][c] += gv[c];
            g[a][c] -= gv[c];
        }
    }
    g
}

/// Unweighted 2D-3D consistency between projected and estimated joints.
pub fn e_con(projected: &Points2, estimated: &Points2) -> f64 {
    let sum: f64 = (0..NUM_KEYPOINTS).map(|i| point_loss(projected[i], estimated[i])).sum();
    sum / NUM_KEYPOINTS as f64
}

pub fn e_con_grad(projected: &Points2, estimated: &Points2) -> Points2 {
    std::array::from_fn(|i| {
        let d = point_loss_grad(projected[i], estimated[i]);
        [d[0] / NUM_KEYPOINTS as f64, d[1] / NUM_KEYPOINTS as f64]
    })
}

/// Mean squared 3D joint distance.
pub fn e_joints3d(joints: &[Vec3; NUM_KEYPOINTS], gt: &[Vec3; NUM_KEYPOINTS]) -> f64 {
    joints.iter().zip(gt).map(|(a, b)| (a - b).norm_squared()).sum::<f64>() / NUM_KEYPOINTS as f64
}

pub fn e_joints3d_grad(joints: &[Vec3; NUM_KEYPOINTS], gt: &[Vec3; NUM_KEYPOINTS]) -> [Vec3; NUM_KEYPOINTS] {
    std::array::from_fn(|i| (joints[i] - gt[i]) * (2.0 / NUM_KEYPOINTS as f64))
}
