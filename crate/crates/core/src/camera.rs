//! Pinhole projection. Pixel (0, 0) is the centre of the top-left pixel, u
//! grows rightward and v downward. No lens distortion.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NUM_KEYPOINTS;
use crate::rotation::Vec3;

/// Points closer than this to the camera plane are rejected.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|x| x.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be positive and finite: {self:?}"
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("image size must be positive".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let k: Intrinsics = serde_json::from_str(&text).map_err(|source| Error::Json {
            context: path.display().to_string(),
            source,
        })?;
        k.validate()?;
        Ok(k)
    }

    /// Intrinsics after cropping `(x, y, w, h)` out of the image and
    /// resizing the crop to `out_w` x `out_h`.
    pub fn crop_resize(&self, x: f64, y: f64, w: f64, h: f64, out_w: usize, out_h: usize) -> Self {
        let sx = out_w as f64 / w;
        let sy = out_h as f64 / h;
        // Pixel centres: crop pixel centre c maps to (c + 0.5) * s - 0.5.
        Intrinsics {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx - x + 0.5) * sx - 0.5,
            cy: (self.cy - y + 0.5) * sy - 0.5,
            width: out_w,
            height: out_h,
        }
    }

    pub fn project_point(&self, p: &Vec3) -> Result<[f64; 2]> {
        project_one(self, p, 0)
    }
}

fn project_one(k: &Intrinsics, p: &Vec3, index: usize) -> Result<[f64; 2]> {
    if !(p.z > MIN_DEPTH) {
        return Err(Error::DegenerateDepth { index, z: p.z });
    }
    Ok([k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy])
}

/// `u = fx x / z + cx`, `v = fy y / z + cy` for every point.
pub fn project(points: &[Vec3], k: &Intrinsics) -> Result<Vec<[f64; 2]>> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| project_one(k, p, i))
        .collect()
}

/// Pulls a gradient on the projected pixel back to the 3D point.
pub fn project_vjp(k: &Intrinsics, p: &Vec3, g: [f64; 2]) -> Vec3 {
    let iz = 1.0 / p.z;
    let gu = g[0] * k.fx * iz;
    let gv = g[1] * k.fy * iz;
    Vec3::new(gu, gv, -(gu * p.x + gv * p.y) * iz)
}

/// 21 image-space keypoints with per-joint confidences in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Keypoints2D {
    pub points: [[f64; 2]; NUM_KEYPOINTS],
    pub confidence: [f64; NUM_KEYPOINTS],
}

impl Keypoints2D {
    pub fn new(points: [[f64; 2]; NUM_KEYPOINTS], confidence: [f64; NUM_KEYPOINTS]) -> Result<Self> {
        let k = Keypoints2D { points, confidence };
        k.validate()?;
        Ok(k)
    }

    pub fn with_unit_confidence(points: [[f64; 2]; NUM_KEYPOINTS]) -> Self {
        Keypoints2D {
            points,
            confidence: [1.0; NUM_KEYPOINTS],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite keypoint".into()));
        }
        if let Some(c) = self.confidence.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::InvalidInput(format!("confidence {c} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn confidence_sum(&self) -> f64 {
        self.confidence.iter().sum()
    }

    /// Keypoints in the image produced by [`Intrinsics::crop_resize`] with
    /// the same arguments.
    pub fn crop_resize(&self, x: f64, y: f64, w: f64, h: f64, out_w: usize, out_h: usize) -> Self {
        let sx = out_w as f64 / w;
        let sy = out_h as f64 / h;
        Keypoints2D {
            points: self.points.map(|p| [(p[0] - x + 0.5) * sx - 0.5, (p[1] - y + 0.5) * sy - 0.5]),
            confidence: self.confidence,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k() -> Intrinsics {
        Intrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 112.0,
            cy: 112.0,
            width: 224,
            height: 224,
        }
    }

    #[test]
    fn on_axis_point_hits_principal_point() {
        assert_eq!(k().project_point(&Vec3::new(0.0, 0.0, 1.0)).unwrap(), [112.0, 112.0]);
        assert_eq!(k().project_point(&Vec3::new(0.1, 0.0, 1.0)).unwrap(), [122.0, 112.0]);
    }

    #[test]
    fn points_behind_camera_are_rejected() {
        let err = project(&[Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 0.0, 0.0)], &k()).unwrap_err();
        assert!(matches!(err, Error::DegenerateDepth { index: 1, .. }));
        assert!(k().project_point(&Vec3::new(0.0, 0.0, -1.0)).is_err());
    }

    #[test]
    fn batch_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec3> = (0..100)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(0.2..3.0),
                )
            })
            .collect();
        let batch = project(&pts, &k()).unwrap();
        for (p, b) in pts.iter().zip(&batch) {
            let u = 100.0 * p.x / p.z + 112.0;
            let v = 100.0 * p.y / p.z + 112.0;
            assert_eq!(*b, [u, v]);
        }
    }

    #[test]
    fn projection_is_scale_covariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let p = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.2..3.0));
            let lambda = rng.random_range(0.1..10.0);
            let a = k().project_point(&p).unwrap();
            let b = k().project_point(&(p * lambda)).unwrap();
            assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let p = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.1..3.0));
            for out in 0..2 {
                let mut g = [0.0; 2];
                g[out] = 1.0;
                let analytic = project_vjp(&k(), &p, g);
                for c in 0..3 {
                    let h = 1e-6 * p[c].abs().max(1e-3);
                    let (mut pp, mut pm) = (p, p);
                    pp[c] += h;
                    pm[c] -= h;
                    let num = (k().project_point(&pp).unwrap()[out] - k().project_point(&pm).unwrap()[out]) / (2.0 * h);
                    let rel = (num - analytic[c]).abs() / analytic[c].abs().max(1e-8);
                    assert!(rel < 1e-6 || (num - analytic[c]).abs() < 1e-7, "{num} vs {}", analytic[c]);
                }
            }
        }
    }

    #[test]
    fn crop_resize_maps_pixel_centres() {
        let k = k();
        let c = k.crop_resize(50.0, 40.0, 100.0, 100.0, 200, 200);
        let p = Vec3::new(0.03, -0.02, 0.7);
        let a = k.project_point(&p).unwrap();
        let b = c.project_point(&p).unwrap();
        assert!((b[0] - ((a[0] - 50.0 + 0.5) * 2.0 - 0.5)).abs() < 1e-9);
        assert!((b[1] - ((a[1] - 40.0 + 0.5) * 2.0 - 0.5)).abs() < 1e-9);
    }
}
