use crate::model::{MIDDLE_PROXIMAL, NUM_KEYPOINTS, NUM_SHAPE};
use crate::rotation::Vec3;

/// Reference length of the middle finger's proximal phalanx, metres.
pub const MIDDLE_PROXIMAL_LENGTH: f64 = 0.0282;

pub fn e_beta(beta: &[f64; NUM_SHAPE]) -> f64 {
    beta.iter().map(|b| b * b).sum()
}

pub fn e_beta_grad(beta: &[f64; NUM_SHAPE]) -> [f64; NUM_SHAPE] {
    beta.map(|b| 2.0 * b)
}

struct ColorStats {
    mean: Vec3,
    std: Vec3,
}

fn color_stats(colors: &[Vec3]) -> ColorStats {
    let n = colors.len() as f64;
    let mean = colors.iter().sum::<Vec3>() / n;
    let var = colors.iter().map(|c| (c - mean).component_mul(&(c - mean))).sum::<Vec3>() / n;
    ColorStats {
        mean,
        std: var.map(f64::sqrt),
    }
}

fn is_outlier(c: &Vec3, s: &ColorStats) -> bool {
    (0..3).any(|k| !(c[k] > s.mean[k] - 2.0 * s.std[k] && c[k] < s.mean[k] + 2.0 * s.std[k]))
}

/// Which colours fall outside the two-sigma band.
pub fn texture_outliers(colors: &[Vec3]) -> Vec<bool> {
    if colors.is_empty() {
        return Vec::new();
    }
    let s = color_stats(colors);
    colors.iter().map(|c| is_outlier(c, &s)).collect()
}

/// Penalizes vertex colours outside a two-sigma band around the mean colour
/// (per-channel population statistics). A vertex counts as inside only if all
/// three channels are inside.
pub fn e_texture(colors: &[Vec3], con_sum: f64) -> f64 {
    if colors.is_empty() {
        return 0.0;
    }
    let s = color_stats(colors);
    let sum: f64 = colors
        .iter()
        .filter(|c| is_outlier(c, &s))
        .map(|c| (c - s.mean).norm_squared())
        .sum();
    con_sum / colors.len() as f64 * sum
}

/// Gradient of [`e_texture`] with the inside/outside assignment held fixed;
/// includes the dependency of the mean on every colour.
pub fn e_texture_grad(colors: &[Vec3], con_sum: f64) -> Vec<Vec3> {
    let n = colors.len() as f64;
    let s = color_stats(colors);
    let w = con_sum / n;
    let outlier: Vec<bool> = colors.iter().map(|c| is_outlier(c, &s)).collect();
    let dev_sum: Vec3 = colors
        .iter()
        .zip(&outlier)
        .filter(|(_, &o)| o)
        .map(|(c, _)| c - s.mean)
        .sum();
    colors
        .iter()
        .zip(&outlier)
        .map(|(c, &o)| {
            let own = if o { (c - s.mean) * 2.0 } else { Vec3::zeros() };
            (own - dev_sum * (2.0 / n)) * w
        })
        .collect()
}

pub fn middle_proximal_length(joints: &[Vec3; NUM_KEYPOINTS]) -> f64 {
    (joints[MIDDLE_PROXIMAL.1] - joints[MIDDLE_PROXIMAL.0]).norm()
}

pub fn e_scale(joints: &[Vec3; NUM_KEYPOINTS]) -> f64 {
    (middle_proximal_length(joints) - MIDDLE_PROXIMAL_LENGTH).powi(2)
}

pub fn e_scale_grad(joints: &[Vec3; NUM_KEYPOINTS]) -> [Vec3; NUM_KEYPOINTS] {
    let mut g = [Vec3::zeros(); NUM_KEYPOINTS];
    let d = joints[MIDDLE_PROXIMAL.1] - joints[MIDDLE_PROXIMAL.0];
    let l = d.norm();
    if l > 0.0 {
        let v = d * (2.0 * (l - MIDDLE_PROXIMAL_LENGTH) / l);
        g[MIDDLE_PROXIMAL.1] = v;
        g[MIDDLE_PROXIMAL.0] = -v;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_colors(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect()
    }

    #[test]
    fn e_beta_examples() {
        assert_eq!(e_beta(&[0.0; 10]), 0.0);
        let mut b = [0.0; 10];
        b[0] = 2.0;
        assert_eq!(e_beta(&b), 4.0);
        assert_eq!(e_beta_grad(&b)[0], 4.0);
    }

    #[test]
    fn e_texture_uniform_is_zero() {
        assert_eq!(e_texture(&vec![Vec3::new(0.7, 0.55, 0.45); 778], 21.0), 0.0);
    }

    #[test]
    fn e_texture_single_outlier() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut colors: Vec<Vec3> = (0..199)
            .map(|_| Vec3::new(rng.random_range(0.4..0.6), rng.random_range(0.4..0.6), rng.random_range(0.4..0.6)))
            .collect();
        colors.push(Vec3::new(1.0, 0.5, 0.5));
        let s = color_stats(&colors);
        let outliers: Vec<usize> = (0..200).filter(|&i| is_outlier(&colors[i], &s)).collect();
        assert_eq!(outliers, vec![199]);
        let want = (colors[199] - s.mean).norm_squared() / 200.0;
        assert!((e_texture(&colors, 1.0) - want).abs() < 1e-15);
    }

    #[test]
    fn e_texture_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let colors = random_colors(&mut rng, 778);
            let n = colors.len() as f64;
            let mut mean = [0.0; 3];
            for c in &colors {
                for k in 0..3 {
                    mean[k] += c[k] / n;
                }
            }
            let mut std = [0.0; 3];
            for c in &colors {
                for k in 0..3 {
                    std[k] += (c[k] - mean[k]).powi(2) / n;
                }
            }
            let std = std.map(f64::sqrt);
            let mut sum = 0.0;
            for c in &colors {
                let inside = (0..3).all(|k| mean[k] - 2.0 * std[k] < c[k] && c[k] < mean[k] + 2.0 * std[k]);
                if !inside {
                    sum += (0..3).map(|k| (c[k] - mean[k]).powi(2)).sum::<f64>();
                }
            }
            let got = e_texture(&colors, 21.0);
            assert!((got - 21.0 * sum / n).abs() < 1e-12 * (1.0 + got));
        }
    }

    #[test]
    fn e_texture_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let colors = random_colors(&mut rng, 60);
        let g = e_texture_grad(&colors, 5.0);
        let base = color_stats(&colors);
        for i in 0..colors.len() {
            for k in 0..3 {
                let h = 1e-7;
                let (mut p, mut m) = (colors.clone(), colors.clone());
                p[i][k] += h;
                m[i][k] -= h;
                // Skip perturbations that flip a band membership.
                let (sp, sm) = (color_stats(&p), color_stats(&m));
                let flips = |s: &ColorStats, c: &[Vec3]| (0..c.len()).any(|j| is_outlier(&c[j], s) != is_outlier(&colors[j], &base));
                if flips(&sp, &p) || flips(&sm, &m) {
                    continue;
                }
                let num = (e_texture(&p, 5.0) - e_texture(&m, 5.0)) / (2.0 * h);
                assert!((num - g[i][k]).abs() < 1e-6, "{num} vs {}", g[i][k]);
            }
        }
    }

    #[test]
    fn e_scale_examples() {
        let mut j = [Vec3::zeros(); 21];
        j[10] = Vec3::new(0.0, 0.0282, 0.0);
        assert_eq!(e_scale(&j), 0.0);
        j[10] = Vec3::new(0.0, 0.0382, 0.0);
        assert!((e_scale(&j) - 1e-4).abs() < 1e-15);
        let g = e_scale_grad(&j);
        assert!((g[10].y - 2.0 * 0.01).abs() < 1e-15);
        assert!((g[9].y + 2.0 * 0.01).abs() < 1e-15);
    }
}
