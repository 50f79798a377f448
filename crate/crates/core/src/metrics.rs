//! Pose and shape accuracy metrics against ground truth: Procrustes
//! alignment, mean joint/vertex errors, PCK area under curve and F-scores.
//!
//! Positions are metres; errors are reported in centimetres (mean errors)
//! or millimetres (PCK thresholds and F-score thresholds).

use std::collections::HashMap;

use nalgebra::{Matrix3, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::{Mat3, Vec3};

/// Upper end of the PCK threshold range, millimetres.
pub const PCK_MAX_MM: f64 = 50.0;
pub const PCK_STEPS: usize = 100;

/// Similarity transform `x -> s * R * x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Similarity {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p * self.scale + self.translation
    }
}

fn centroid(p: &[Vec3]) -> Vec3 {
    p.iter().sum::<Vec3>() / p.len() as f64
}

/// Least-squares similarity taking `pred` onto `gt` (Umeyama).
pub fn procrustes(pred: &[Vec3], gt: &[Vec3]) -> Result<Similarity> {
    if pred.len() != gt.len() {
        return Err(Error::shape("procrustes", format!("{} vs {} points", pred.len(), gt.len())));
    }
    if pred.len() < 3 {
        return Err(Error::RankDeficient);
    }
    let (mp, mg) = (centroid(pred), centroid(gt));
    let n = pred.len() as f64;
    let mut cov = Matrix3::zeros();
    let mut var_p = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let (dp, dg) = (p - mp, g - mg);
        cov += dg * dp.transpose();
        var_p += dp.norm_squared();
    }
    cov /= n;
    var_p /= n;
    let svd = SVD::new(cov, true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let mut sv = svd.singular_values;
    // nalgebra does not sort singular values.
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    if var_p <= f64::MIN_POSITIVE || sv[order[1]] <= 1e-12 * sv[order[0]].max(f64::MIN_POSITIVE) {
        return Err(Error::RankDeficient);
    }
    let mut d = Matrix3::identity();
    if (u.determinant() * vt.determinant()) < 0.0 {
        d[(order[2], order[2])] = -1.0;
        sv[order[2]] = -sv[order[2]];
    }
    let rotation = u * d * vt;
    let scale = sv.sum() / var_p;
    Ok(Similarity {
        scale,
        rotation,
        translation: mg - rotation * mp * scale,
    })
}

/// `pred` after the best similarity onto `gt`.
pub fn procrustes_align(pred: &[Vec3], gt: &[Vec3]) -> Result<Vec<Vec3>> {
    let t = procrustes(pred, gt)?;
    Ok(pred.iter().map(|p| t.apply(p)).collect())
}

fn check_pair(name: &str, pred: &[Vec3], gt: &[Vec3]) -> Result<()> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::shape(name, format!("{} vs {} points", pred.len(), gt.len())));
    }
    Ok(())
}

/// Per-point Euclidean distances in millimetres.
pub fn point_errors_mm(pred: &[Vec3], gt: &[Vec3]) -> Result<Vec<f64>> {
    check_pair("errors", pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(p, g)| (p - g).norm() * 1000.0).collect())
}

fn mean_error_cm(name: &str, pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    check_pair(name, pred, gt)?;
    let sum: f64 = pred.iter().zip(gt).map(|(p, g)| (p - g).norm()).sum();
    Ok(sum / pred.len() as f64 * 100.0)
}

/// Mean per-joint position error, centimetres.
pub fn mpjpe(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    mean_error_cm("mpjpe", pred, gt)
}

/// Mean per-vertex position error, centimetres.
pub fn mpvpe(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    mean_error_cm("mpvpe", pred, gt)
}

/// The 100 thresholds `0, 50/99, ..., 50` mm and the fraction of errors at
/// or below each.
pub fn pck_curve(errors_mm: &[f64]) -> Vec<(f64, f64)> {
    let n = errors_mm.len().max(1) as f64;
    (0..PCK_STEPS)
        .map(|i| {
            let t = PCK_MAX_MM * i as f64 / (PCK_STEPS - 1) as f64;
            (t, errors_mm.iter().filter(|e| **e <= t).count() as f64 / n)
        })
        .collect()
}

/// Trapezoid-rule area under [`pck_curve`], divided by the threshold range.
pub fn pck_auc(errors_mm: &[f64]) -> f64 {
    let c = pck_curve(errors_mm);
    let area: f64 = c.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum();
    area / PCK_MAX_MM
}

/// Distances from each point of `from` to its nearest point of `to`,
/// computed exactly for every distance below `radius` (larger ones are
/// reported as infinity).
fn nearest_within(from: &[Vec3], to: &[Vec3], radius: f64) -> Vec<f64> {
    let key = |p: &Vec3| -> [i64; 3] { [0, 1, 2].map(|k| (p[k] / radius).floor() as i64) };
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in to.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    from.iter()
        .map(|p| {
            let c = key(p);
            let mut best = f64::INFINITY;
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(ids) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                            for &j in ids {
                                best = best.min((p - to[j]).norm());
                            }
                        }
                    }
                }
            }
            best
        })
        .collect()
}

/// Harmonic mean of precision and recall at `threshold_mm`; a point counts
/// when its nearest neighbour is strictly closer than the threshold.
pub fn f_score(pred: &[Vec3], gt: &[Vec3], threshold_mm: f64) -> Result<f64> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::shape("f_score", "empty point cloud"));
    }
    if !(threshold_mm > 0.0) {
        return Err(Error::InvalidInput(format!("threshold {threshold_mm} mm must be positive")));
    }
    let t = threshold_mm / 1000.0;
    let frac = |a: &[Vec3], b: &[Vec3]| {
        nearest_within(a, b, t).iter().filter(|d| **d < t).count() as f64 / a.len() as f64
    };
    let (p, r) = (frac(pred, gt), frac(gt, pred));
    Ok(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 })
}

/// All metrics for one predicted hand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mpjpe_cm: f64,
    pub mpvpe_cm: f64,
    pub auc_j: f64,
    pub auc_v: f64,
    pub f5: f64,
    pub f15: f64,
    /// Whether joints and vertices were Procrustes-aligned (each separately)
    /// before measuring.
    pub aligned: bool,
}

/// Compares predicted joints and vertices with ground truth.
pub fn evaluate(
    pred_joints: &[Vec3],
    gt_joints: &[Vec3],
    pred_vertices: &[Vec3],
    gt_vertices: &[Vec3],
    align: bool,
) -> Result<EvalResult> {
    let (j, v) = if align {
        (procrustes_align(pred_joints, gt_joints)?, procrustes_align(pred_vertices, gt_vertices)?)
    } else {
        (pred_joints.to_vec(), pred_vertices.to_vec())
    };
    Ok(EvalResult {
        mpjpe_cm: mpjpe(&j, gt_joints)?,
        mpvpe_cm: mpvpe(&v, gt_vertices)?,
        auc_j: pck_auc(&point_errors_mm(&j, gt_joints)?),
        auc_v: pck_auc(&point_errors_mm(&v, gt_vertices)?),
        f5: f_score(&v, gt_vertices, 5.0)?,
        f15: f_score(&v, gt_vertices, 15.0)?,
        aligned: align,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::rodrigues;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut impl Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)))
            .collect()
    }

    fn residual(a: &[Vec3], b: &[Vec3]) -> f64 {
        a.iter().zip(b).map(|(p, q)| (p - q).norm_squared()).sum()
    }

    #[test]
    fn procrustes_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = cloud(&mut rng, 21);
        let t = procrustes(&g, &g).unwrap();
        assert!((t.rotation - Mat3::identity()).norm() < 1e-12);
        assert!((t.scale - 1.0).abs() < 1e-12 && t.translation.norm() < 1e-12);
    }

    #[test]
    fn procrustes_recovers_a_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = cloud(&mut rng, 21);
        let r = rodrigues(&Vec3::new(0.4, -1.1, 2.0));
        let p: Vec<Vec3> = g.iter().map(|x| r * x * 2.5 + Vec3::new(0.3, -0.2, 1.0)).collect();
        let a = procrustes_align(&p, &g).unwrap();
        assert!(residual(&a, &g) < 1e-18);
    }

    #[test]
    fn procrustes_beats_random_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (p, g) = (cloud(&mut rng, 30), cloud(&mut rng, 30));
        let best = residual(&procrustes_align(&p, &g).unwrap(), &g);
        assert!(best <= residual(&p, &g));
        for _ in 0..100 {
            let s = Similarity {
                scale: rng.random_range(0.5..2.0),
                rotation: rodrigues(&Vec3::new(rng.random(), rng.random(), rng.random())),
                translation: Vec3::new(rng.random(), rng.random(), rng.random()) * 0.1,
            };
            let q: Vec<Vec3> = p.iter().map(|x| s.apply(x)).collect();
            assert!(best <= residual(&q, &g) + 1e-15);
        }
    }

    #[test]
    fn procrustes_rejects_degenerate_input() {
        let line: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(procrustes(&line, &line), Err(Error::RankDeficient)));
        let same = vec![Vec3::new(1.0, 2.0, 3.0); 4];
        assert!(matches!(procrustes(&same, &same), Err(Error::RankDeficient)));
        assert!(procrustes(&line[..2], &line[..2]).is_err());
    }

    #[test]
    fn planar_clouds_align_without_reflection() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g: Vec<Vec3> = cloud(&mut rng, 10).into_iter().map(|p| Vec3::new(p.x, p.y, 0.0)).collect();
        let r = rodrigues(&Vec3::new(0.0, 0.0, 0.7));
        let p: Vec<Vec3> = g.iter().map(|x| r * x).collect();
        let t = procrustes(&p, &g).unwrap();
        assert!((t.rotation.determinant() - 1.0).abs() < 1e-12);
        assert!(residual(&procrustes_align(&p, &g).unwrap(), &g) < 1e-20);
    }

    #[test]
    fn mean_errors() {
        let g = vec![Vec3::zeros(); 21];
        assert_eq!(mpjpe(&g, &g).unwrap(), 0.0);
        let mut p = g.clone();
        p[4].x = 0.01;
        assert!((mpjpe(&p, &g).unwrap() - 1.0 / 21.0).abs() < 1e-12);
        let v: Vec<Vec3> = (0..778).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let shifted: Vec<Vec3> = v.iter().map(|x| x + Vec3::new(0.0, 0.02, 0.0)).collect();
        assert!((mpvpe(&shifted, &v).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mean_error_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (p, g) = (cloud(&mut rng, 21), cloud(&mut rng, 21));
        let mut sum = 0.0;
        for i in 0..21 {
            let d = p[i] - g[i];
            sum += (d.x * d.x + d.y * d.y + d.z * d.z).sqrt();
        }
        assert_eq!(mpjpe(&p, &g).unwrap(), sum / 21.0 * 100.0);
    }

    #[test]
    fn auc_extremes() {
        assert_eq!(pck_auc(&[0.0; 21]), 1.0);
        assert_eq!(pck_auc(&[50.1; 21]), 0.0);
    }

    #[test]
    fn auc_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e: Vec<f64> = (0..500).map(|_| rng.random_range(0.0..70.0)).collect();
        let step = 50.0 / 99.0;
        let pck = |t: f64| e.iter().filter(|x| **x <= t).count() as f64 / e.len() as f64;
        let mut direct = 0.0;
        for i in 0..99 {
            direct += (pck(i as f64 * step) + pck((i + 1) as f64 * step)) * step / 2.0;
        }
        assert!((pck_auc(&e) - direct / 50.0).abs() < 1e-12);
    }

    fn f_score_brute(p: &[Vec3], g: &[Vec3], th_mm: f64) -> f64 {
        let t = th_mm / 1000.0;
        let frac = |a: &[Vec3], b: &[Vec3]| {
            a.iter()
                .filter(|x| b.iter().map(|y| (*x - y).norm()).fold(f64::INFINITY, f64::min) < t)
                .count() as f64
                / a.len() as f64
        };
        let (pr, rc) = (frac(p, g), frac(g, p));
        if pr + rc > 0.0 {
            2.0 * pr * rc / (pr + rc)
        } else {
            0.0
        }
    }

    #[test]
    fn f_score_extremes_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = cloud(&mut rng, 300);
        assert_eq!(f_score(&g, &g, 0.1).unwrap(), 1.0);
        let far: Vec<Vec3> = g.iter().map(|x| x + Vec3::new(1.0, 0.0, 0.0)).collect();
        assert_eq!(f_score(&far, &g, 15.0).unwrap(), 0.0);
        for th in [5.0, 15.0, 40.0] {
            let p = cloud(&mut rng, 250);
            assert_eq!(f_score(&p, &g, th).unwrap(), f_score_brute(&p, &g, th));
        }
    }

    proptest! {
        #[test]
        fn aligned_mpjpe_ignores_similarities(
            seed in 0u64..1000,
            axis in prop::array::uniform3(-3.0f64..3.0),
            scale in 0.2f64..5.0,
            shift in prop::array::uniform3(-1.0f64..1.0),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (p, g) = (cloud(&mut rng, 21), cloud(&mut rng, 21));
            let r = rodrigues(&Vec3::from(axis));
            let q: Vec<Vec3> = p.iter().map(|x| r * x * scale + Vec3::from(shift)).collect();
            let a = mpjpe(&procrustes_align(&p, &g).unwrap(), &g).unwrap();
            let b = mpjpe(&procrustes_align(&q, &g).unwrap(), &g).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn f_score_is_symmetric(seed in 0u64..1000, th in 1.0f64..60.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (p, g) = (cloud(&mut rng, 60), cloud(&mut rng, 80));
            prop_assert_eq!(f_score(&p, &g, th).unwrap(), f_score(&g, &p, th).unwrap());
        }

        #[test]
        fn auc_is_monotone(errs in prop::collection::vec(0.0f64..80.0, 1..50), cut in 0.0f64..1.0) {
            let better: Vec<f64> = errs.iter().map(|e| e * cut).collect();
            prop_assert!(pck_auc(&better) >= pck_auc(&errs));
        }
    }
}
