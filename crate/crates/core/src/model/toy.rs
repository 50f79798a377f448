//! Procedural stand-in for the licensed hand model.
//!
//! Produces a right hand with the full array shapes (778 vertices, 16
//! joints, 10 shape and 135 pose-corrective components, 30 pose PCA rows)
//! built from tubes: a palm plus three segments per finger. Fingers point
//! along -y, the thumb sits on the -x side and the back of the hand faces -z,
//! so the default global transform shows the dorsal side to a camera looking
//! down +z. Fingertip vertices land on the conventional ids
//! (744, 320, 443, 554, 671).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    HandModel, NUM_FINGER_BONES, NUM_JOINTS, NUM_POSE_PCA, NUM_SHAPE, NUM_VERTICES, POSE_DIM,
    POSE_FEATURES,
};
use crate::energy::BoneFrames;
use crate::rotation::{Mat3, Vec3};

pub const TOY_SEED: u64 = 0x4841_4e44;
pub const DEFAULT_FINGERTIP_IDS: [usize; 5] = [744, 320, 443, 554, 671];

const FINGER_RING: usize = 8;
const PALM_RING: usize = 21;
const PALM_RINGS: usize = 15;
const WRIST_Y: f64 = 0.075;
const PALM_END_Y: f64 = -0.028;

/// Mean-pose flexion per finger joint, radians.
const MEAN_FLEXION: f64 = 0.1;

struct Finger {
    joints: [usize; 3],
    base: Vec3,
    dir: Vec3,
    lengths: [f64; 3],
    radii: [f64; 4],
    rings: [usize; 3],
}

fn fingers() -> [Finger; 5] {
    let d = |x: f64, y: f64| Vec3::new(x, y, 0.0).normalize();
    [
        Finger {
            joints: [13, 14, 15],
            base: Vec3::new(-0.030, 0.045, 0.0),
            dir: d(-0.6, -0.8),
            lengths: [0.034, 0.030, 0.026],
            radii: [0.012, 0.0105, 0.0095, 0.008],
            rings: [4, 3, 3],
        },
        Finger {
            joints: [1, 2, 3],
            base: Vec3::new(-0.027, -0.020, 0.0),
            dir: d(-0.08, -1.0),
            lengths: [0.028, 0.021, 0.019],
            radii: [0.0095, 0.0085, 0.0078, 0.007],
            rings: [4, 4, 4],
        },
        Finger {
            joints: [4, 5, 6],
            base: Vec3::new(-0.009, -0.024, 0.0),
            dir: d(0.0, -1.0),
            lengths: [0.030, 0.023, 0.020],
            radii: [0.0098, 0.0088, 0.008, 0.0072],
            rings: [4, 4, 4],
        },
        Finger {
            joints: [10, 11, 12],
            base: Vec3::new(0.009, -0.021, 0.0),
            dir: d(0.06, -1.0),
            lengths: [0.028, 0.021, 0.019],
            radii: [0.0092, 0.0083, 0.0076, 0.0068],
            rings: [4, 4, 4],
        },
        Finger {
            joints: [7, 8, 9],
            base: Vec3::new(0.026, -0.015, 0.0),
            dir: d(0.15, -1.0),
            lengths: [0.022, 0.017, 0.017],
            radii: [0.0082, 0.0073, 0.0067, 0.006],
            rings: [4, 4, 3],
        },
    ]
}

const PARENTS: [Option<usize>; NUM_JOINTS] = [
    None,
    Some(0),
    Some(1),
    Some(2),
    Some(0),
    Some(4),
    Some(5),
    Some(0),
    Some(7),
    Some(8),
    Some(0),
    Some(10),
    Some(11),
    Some(0),
    Some(13),
    Some(14),
];

#[derive(Default)]
struct Builder {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    /// Sparse skin weights per vertex.
    weights: Vec<Vec<(usize, f64)>>,
    /// Vertex ring used to regress each joint.
    joint_rings: [Vec<usize>; NUM_JOINTS],
    tips: [usize; 5],
}

impl Builder {
    fn ring(&mut self, center: Vec3, e1: Vec3, e2: Vec3, r1: f64, r2: f64, n: usize) -> Vec<usize> {
        (0..n)
            .map(|j| {
                let phi = std::f64::consts::TAU * j as f64 / n as f64;
                self.vertices.push(center + e1 * (r1 * phi.cos()) + e2 * (r2 * phi.sin()));
                self.weights.push(Vec::new());
                self.vertices.len() - 1
            })
            .collect()
    }

    fn point(&mut self, p: Vec3) -> usize {
        self.vertices.push(p);
        self.weights.push(Vec::new());
        self.vertices.len() - 1
    }

    /// Quads between consecutive rings; `(e1, e2, axis)` must be right-handed
    /// so the winding faces outward.
    fn tube(&mut self, rings: &[Vec<usize>]) {
        for pair in rings.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            let n = a.len();
            for j in 0..n {
                let k = (j + 1) % n;
                self.faces.push([a[j], a[k], b[j]]);
                self.faces.push([a[k], b[k], b[j]]);
            }
        }
    }

    /// Fan closing `ring`; `forward` says whether the cap lies along the tube axis.
    fn cap(&mut self, ring: &[usize], center: usize, forward: bool) {
        let n = ring.len();
        for j in 0..n {
            let k = (j + 1) % n;
            if forward {
                self.faces.push([ring[j], ring[k], center]);
            } else {
                self.faces.push([ring[k], ring[j], center]);
            }
        }
    }
}

fn build_mesh() -> Builder {
    let mut b = Builder::default();
    let z = Vec3::z();

    // Palm: axis -y, e1 = x, e2 = z.
    let mut palm = Vec::with_capacity(PALM_RINGS);
    for r in 0..PALM_RINGS {
        let t = r as f64 / (PALM_RINGS - 1) as f64;
        let y = WRIST_Y + t * (PALM_END_Y - WRIST_Y);
        let ring = b.ring(Vec3::new(0.0, y, 0.0), Vec3::x(), z, 0.034 + 0.012 * t, 0.014, PALM_RING);
        for &v in &ring {
            b.weights[v].push((0, 1.0));
        }
        palm.push(ring);
    }
    b.joint_rings[0] = palm[0].clone();
    b.tube(&palm);
    let wrist_cap = b.point(Vec3::new(0.0, WRIST_Y + 0.002, 0.0));
    b.weights[wrist_cap].push((0, 1.0));
    b.cap(&palm[0].clone(), wrist_cap, false);
    let palm_cap = b.point(Vec3::new(0.0, PALM_END_Y - 0.003, 0.0));
    b.weights[palm_cap].push((0, 1.0));
    b.cap(&palm[PALM_RINGS - 1].clone(), palm_cap, true);

    for (fi, f) in fingers().iter().enumerate() {
        let e1 = z.cross(&f.dir);
        let mut rings = Vec::new();
        let mut start = f.base;
        let total: f64 = f.lengths.iter().sum();
        let mut travelled = 0.0;
        for s in 0..3 {
            let parent = PARENTS[f.joints[s]].unwrap();
            for k in 0..f.rings[s] {
                let u = k as f64 / f.rings[s] as f64;
                let along = travelled + u * f.lengths[s];
                let radius = interp_radius(&f.radii, f.lengths, along);
                let center = start + f.dir * (u * f.lengths[s]);
                let ring = b.ring(center, e1, z, radius, radius * 0.85, FINGER_RING);
                let w_parent = if u < 0.25 { 0.5 * (1.0 - u / 0.25) } else { 0.0 };
                for &v in &ring {
                    b.weights[v].push((f.joints[s], 1.0 - w_parent));
                    if w_parent > 0.0 {
                        b.weights[v].push((parent, w_parent));
                    }
                }
                if k == 0 {
                    b.joint_rings[f.joints[s]] = ring.clone();
                }
                rings.push(ring);
            }
            travelled += f.lengths[s];
            start += f.dir * f.lengths[s];
        }
        debug_assert!((travelled - total).abs() < 1e-12);
        b.tube(&rings);
        let tip = b.point(start);
        b.weights[tip].push((f.joints[2], 1.0));
        b.cap(rings.last().unwrap(), tip, true);
        b.tips[fi] = tip;
    }
    assert_eq!(b.vertices.len(), NUM_VERTICES, "toy mesh vertex budget");
    b
}

fn interp_radius(radii: &[f64; 4], lengths: [f64; 3], along: f64) -> f64 {
    let mut acc = 0.0;
    for s in 0..3 {
        if along <= acc + lengths[s] || s == 2 {
            let u = ((along - acc) / lengths[s]).clamp(0.0, 1.0);
            return radii[s] + u * (radii[s + 1] - radii[s]);
        }
        acc += lengths[s];
    }
    radii[3]
}

/// Reorders vertices so the fingertips land on `targets`.
fn tip_permutation(tips: [usize; 5], targets: [usize; 5]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..NUM_VERTICES).collect();
    let mut pos: Vec<usize> = (0..NUM_VERTICES).collect();
    for (tip, target) in tips.into_iter().zip(targets) {
        let a = pos[tip];
        let (oa, ob) = (order[a], order[target]);
        order.swap(a, target);
        pos[oa] = target;
        pos[ob] = a;
    }
    order
}

/// Generates the toy model deterministically from `seed`.
pub fn toy_model(seed: u64) -> HandModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = build_mesh();
    let n = NUM_VERTICES;

    let order = tip_permutation(b.tips, DEFAULT_FINGERTIP_IDS);
    let mut new_index = vec![0; n];
    for (new, &old) in order.iter().enumerate() {
        new_index[old] = new;
    }

    let template_vertices: Vec<Vec3> = order.iter().map(|&o| b.vertices[o]).collect();
    let faces = b
        .faces
        .iter()
        .map(|f| f.map(|v| new_index[v]))
        .collect();
    let mut skin_weights = vec![0.0; n * NUM_JOINTS];
    for (new, &old) in order.iter().enumerate() {
        for &(j, w) in &b.weights[old] {
            skin_weights[new * NUM_JOINTS + j] += w;
        }
    }
    let mut joint_regressor = vec![0.0; NUM_JOINTS * n];
    for (j, ring) in b.joint_rings.iter().enumerate() {
        let w = 1.0 / ring.len() as f64;
        for &v in ring {
            joint_regressor[j * n + new_index[v]] = w;
        }
    }

    let wrist = Vec3::new(0.0, WRIST_Y, 0.0);
    let gauss = Normal::new(0.0, 1.0).unwrap();
    let mut shape_basis = vec![0.0; n * 3 * NUM_SHAPE];
    for c in 0..NUM_SHAPE {
        let a = if c == 0 {
            Mat3::identity() * 0.04
        } else {
            Mat3::from_fn(|_, _| 0.02 * gauss.sample(&mut rng))
        };
        for (i, v) in template_vertices.iter().enumerate() {
            let d = a * (v - wrist);
            for k in 0..3 {
                shape_basis[(i * 3 + k) * NUM_SHAPE + c] = d[k];
            }
        }
    }

    let mut pose_basis = vec![0.0; n * 3 * POSE_FEATURES];
    for i in 0..n {
        for k in 1..NUM_JOINTS {
            let w = skin_weights[i * NUM_JOINTS + k];
            if w == 0.0 {
                continue;
            }
            for f in 0..9 {
                for c in 0..3 {
                    pose_basis[(i * 3 + c) * POSE_FEATURES + 9 * (k - 1) + f] =
                        w * 0.002 * gauss.sample(&mut rng);
                }
            }
        }
    }

    let mut model = HandModel {
        template_vertices,
        faces,
        shape_basis,
        pose_basis,
        joint_regressor,
        skin_weights,
        kinematic_parents: PARENTS,
        pca_pose_components: vec![0.0; NUM_POSE_PCA * POSE_DIM],
        pca_pose_mean: [0.0; POSE_DIM],
        fingertip_vertex_ids: DEFAULT_FINGERTIP_IDS,
    };

    let frames = BoneFrames::from_model(&model);
    let (components, mean) = pose_space(&frames);
    model.pca_pose_components = components;
    model.pca_pose_mean = mean;
    model
}

/// Orthonormal pose rows built from per-bone anatomical axes: one flexion
/// row per finger joint, then base-joint abduction and twist, then
/// middle-joint abduction. Positive flexion coefficients curl the finger.
fn pose_space(frames: &BoneFrames) -> (Vec<f64>, [f64; POSE_DIM]) {
    let slot = |bone: usize| 3 * (super::FINGER_BONE_JOINTS[bone] - 1);
    let mut rows = vec![[0.0; POSE_DIM]; NUM_POSE_PCA];
    let mut put = |row: usize, bone: usize, axis: Vec3| {
        let o = slot(bone);
        rows[row][o..o + 3].copy_from_slice(axis.as_slice());
    };
    for bone in 0..NUM_FINGER_BONES {
        put(bone, bone, -frames.lateral(bone));
    }
    for finger in 0..5 {
        put(15 + finger, 3 * finger, frames.dorsal(3 * finger));
        put(20 + finger, 3 * finger, frames.bone_axis(3 * finger));
        put(25 + finger, 3 * finger + 1, frames.dorsal(3 * finger + 1));
    }
    // The thumb base rests on the lower bound of its roll range; leave it at
    // the identity so the mean pose stays feasible.
    let mut mean = [0.0; POSE_DIM];
    for row in rows.iter().take(NUM_FINGER_BONES).skip(1) {
        for (m, r) in mean.iter_mut().zip(row) {
            *m += MEAN_FLEXION * r;
        }
    }
    (rows.concat(), mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_model_satisfies_invariants() {
        let m = toy_model(TOY_SEED);
        m.validate().unwrap();
        assert_eq!(m.template_vertices.len(), NUM_VERTICES);
        for (t, &id) in DEFAULT_FINGERTIP_IDS.iter().enumerate() {
            assert_eq!(m.fingertip_vertex_ids[t], id);
        }
    }

    #[test]
    fn faces_wind_outward_on_fingers() {
        let m = toy_model(TOY_SEED);
        // Every finger-tube face normal points away from the finger axis; a
        // cheap proxy is that mesh volume via the divergence theorem is positive.
        let vol: f64 = m
            .faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| m.template_vertices[i]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum();
        assert!(vol > 0.0, "signed volume {vol}");
    }

    #[test]
    fn pose_rows_are_orthonormal() {
        let m = toy_model(TOY_SEED);
        let rows: Vec<&[f64]> = m.pca_pose_components.chunks(POSE_DIM).collect();
        for i in 0..NUM_POSE_PCA {
            for j in 0..NUM_POSE_PCA {
                let d: f64 = rows[i].iter().zip(rows[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-12, "rows {i},{j}: {d}");
            }
        }
    }
}
