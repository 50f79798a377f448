//! Axis-angle rotations and the bone-angle Euler factorization, each with a
//! hand-written vector-Jacobian product for the backward pass.

use nalgebra::{Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `sin t / t`, `(1 - cos t) / t^2` and their derivatives divided by `t`,
/// with series expansions near zero.
#[derive(Debug, Clone, Copy)]
struct Coeffs {
    a: f64,
    b: f64,
    da_t: f64,
    db_t: f64,
}

fn coeffs(t2: f64) -> Coeffs {
    if t2 < 1e-4 {
        let t4 = t2 * t2;
        Coeffs {
            a: 1.0 - t2 / 6.0 + t4 / 120.0,
            b: 0.5 - t2 / 24.0 + t4 / 720.0,
            da_t: -1.0 / 3.0 + t2 / 30.0 - t4 / 840.0,
            db_t: -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0,
        }
    } else {
        let t = t2.sqrt();
        let (s, c) = t.sin_cos();
        let half = (0.5 * t).sin();
        let one_minus_cos = 2.0 * half * half;
        Coeffs {
            a: s / t,
            b: one_minus_cos / t2,
            da_t: (t * c - s) / (t2 * t),
            db_t: (t * s - 2.0 * one_minus_cos) / (t2 * t2),
        }
    }
}

/// Rodrigues formula `R = I + A [v]x + B [v]x^2`. The zero vector maps to
/// the identity.
pub fn rodrigues(v: &Vec3) -> Mat3 {
    let k = skew(v);
    let c = coeffs(v.norm_squared());
    Mat3::identity() + k * c.a + k * k * c.b
}

/// Pulls a gradient with respect to `rodrigues(v)` back onto `v`.
pub fn rodrigues_vjp(v: &Vec3, grad: &Mat3) -> Vec3 {
    let k = skew(v);
    let k2 = k * k;
    let c = coeffs(v.norm_squared());
    let radial = (k * c.da_t + k2 * c.db_t).component_mul(grad).sum();
    let mut out = Vec3::zeros();
    for i in 0..3 {
        let ei = skew(&Vec3::ith(i, 1.0));
        let d = ei * c.a + (ei * k + k * ei) * c.b;
        out[i] = d.component_mul(grad).sum() + radial * v[i];
    }
    out
}

/// Rotation about the second axis, then the first, then the third:
/// `Ry(pitch) * Rx(azimuth) * Rz(roll)`, angles in radians.
pub fn euler_to_matrix(azimuth: f64, pitch: f64, roll: f64) -> Mat3 {
    let (sa, ca) = azimuth.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sr, cr) = roll.sin_cos();
    let rx = Mat3::new(1.0, 0.0, 0.0, 0.0, ca, -sa, 0.0, sa, ca);
    let ry = Mat3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
    let rz = Mat3::new(cr, -sr, 0.0, sr, cr, 0.0, 0.0, 0.0, 1.0);
    ry * rx * rz
}

/// Result of factoring a rotation into `(azimuth, pitch, roll)` radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerAngles {
    pub azimuth: f64,
    pub pitch: f64,
    pub roll: f64,
    /// Set when azimuth is at +-90 degrees and roll was pinned to zero.
    pub gimbal_lock: bool,
}

const GIMBAL_EPS: f64 = 1e-12;

/// Inverse of [`euler_to_matrix`]. Identity maps to all zeros.
pub fn matrix_to_euler(r: &Mat3) -> EulerAngles {
    let s = (-r[(1, 2)]).clamp(-1.0, 1.0);
    if s.abs() > 1.0 - GIMBAL_EPS {
        EulerAngles {
            azimuth: s.asin(),
            pitch: (-r[(2, 0)]).atan2(r[(0, 0)]),
            roll: 0.0,
            gimbal_lock: true,
        }
    } else {
        EulerAngles {
            azimuth: s.asin(),
            pitch: r[(0, 2)].atan2(r[(2, 2)]),
            roll: r[(1, 0)].atan2(r[(1, 1)]),
            gimbal_lock: false,
        }
    }
}

/// Gradient of `matrix_to_euler` pulled back onto the matrix entries.
/// Returns zero in the gimbal-locked branch.
pub fn matrix_to_euler_vjp(r: &Mat3, g_azimuth: f64, g_pitch: f64, g_roll: f64) -> Mat3 {
    let mut out = Mat3::zeros();
    let s = -r[(1, 2)];
    if s.abs() > 1.0 - GIMBAL_EPS {
        return out;
    }
    out[(1, 2)] = -g_azimuth / (1.0 - s * s).sqrt();

    let (y, x) = (r[(0, 2)], r[(2, 2)]);
    let d = x * x + y * y;
    out[(0, 2)] += g_pitch * x / d;
    out[(2, 2)] -= g_pitch * y / d;

    let (y, x) = (r[(1, 0)], r[(1, 1)]);
    let d = x * x + y * y;
    out[(1, 0)] += g_roll * x / d;
    out[(1, 1)] -= g_roll * y / d;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vec3 {
        Vec3::new(
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
        )
    }

    /// Axis-angle -> unit quaternion -> matrix, written out by hand.
    fn quaternion_oracle(v: &Vec3) -> Mat3 {
        let t = v.norm();
        if t == 0.0 {
            return Mat3::identity();
        }
        let axis = v / t;
        let (s, w) = (0.5 * t).sin_cos();
        let (x, y, z) = (axis.x * s, axis.y * s, axis.z * s);
        Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - z * w),
            2.0 * (x * z + y * w),
            2.0 * (x * y + z * w),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - x * w),
            2.0 * (x * z - y * w),
            2.0 * (y * z + x * w),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    #[test]
    fn zero_vector_is_identity() {
        assert_eq!(rodrigues(&Vec3::zeros()), Mat3::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = rodrigues(&Vec3::new(0.0, 0.0, FRAC_PI_2));
        let p = r * Vec3::x();
        assert!((p - Vec3::y()).abs().max() < 1e-12);
    }

    #[test]
    fn matches_quaternion_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..500 {
            let scale = if i % 5 == 0 { 1e-5 } else { 3.0 };
            let v = random_vec(&mut rng, scale);
            let diff = (rodrigues(&v) - quaternion_oracle(&v)).abs().max();
            assert!(diff < 1e-12, "diff {diff} at {v:?}");
            let nalg = UnitQuaternion::from_scaled_axis(v).to_rotation_matrix();
            assert!((rodrigues(&v) - nalg.matrix()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn orthonormal_with_unit_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for i in 0..1000 {
            let scale = [1e-9, 1e-4, 1e-2, 4.0][i % 4];
            let r = rodrigues(&random_vec(&mut rng, scale));
            assert!((r.transpose() * r - Mat3::identity()).abs().max() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn vjp_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..200 {
            let scale = [1e-3, 0.05, 1.0, 2.5][i % 4];
            let v = random_vec(&mut rng, scale);
            let g = Mat3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let analytic = rodrigues_vjp(&v, &g);
            let h = 1e-6;
            for k in 0..3 {
                let mut vp = v;
                let mut vm = v;
                vp[k] += h;
                vm[k] -= h;
                let num = (rodrigues(&vp) - rodrigues(&vm)).component_mul(&g).sum() / (2.0 * h);
                assert!((num - analytic[k]).abs() < 1e-8, "{num} vs {}", analytic[k]);
            }
        }
    }

    #[test]
    fn euler_identity_and_axis_aligned_roll() {
        let e = matrix_to_euler(&Mat3::identity());
        assert_eq!((e.azimuth, e.pitch, e.roll), (0.0, 0.0, 0.0));
        let roll = 30f64.to_radians();
        let e = matrix_to_euler(&rodrigues(&Vec3::new(0.0, 0.0, roll)));
        assert!(e.azimuth.abs() < 1e-14 && e.pitch.abs() < 1e-14);
        assert!((e.roll - roll).abs() < 1e-14);
    }

    #[test]
    fn euler_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..500 {
            let r = rodrigues(&random_vec(&mut rng, 2.0));
            let e = matrix_to_euler(&r);
            let back = euler_to_matrix(e.azimuth, e.pitch, e.roll);
            assert!((back - r).abs().max() < 1e-9);
        }
    }

    #[test]
    fn euler_gimbal_branch_still_recomposes() {
        let r = euler_to_matrix(FRAC_PI_2, 0.4, 0.0);
        let e = matrix_to_euler(&r);
        assert!(e.gimbal_lock);
        assert!((euler_to_matrix(e.azimuth, e.pitch, e.roll) - r).abs().max() < 1e-9);
    }

    #[test]
    fn euler_vjp_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let v = random_vec(&mut rng, 1.0);
            let g = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let f = |v: &Vec3| {
                let e = matrix_to_euler(&rodrigues(v));
                g[0] * e.azimuth + g[1] * e.pitch + g[2] * e.roll
            };
            let gr = matrix_to_euler_vjp(&rodrigues(&v), g[0], g[1], g[2]);
            let analytic = rodrigues_vjp(&v, &gr);
            for k in 0..3 {
                let h = 1e-6;
                let mut vp = v;
                let mut vm = v;
                vp[k] += h;
                vm[k] -= h;
                let num = (f(&vp) - f(&vm)) / (2.0 * h);
                assert!((num - analytic[k]).abs() < 1e-7);
            }
        }
    }
}
