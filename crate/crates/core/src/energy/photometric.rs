use crate::error::{Error, Result};
use crate::imaging::ColorImage;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn check_size(image: &ColorImage, render: &[f64], silhouette: &[bool]) -> Result<()> {
    let n = image.width * image.height;
    if render.len() != 3 * n || silhouette.len() != n {
        return Err(Error::InvalidInput(format!(
            "render buffer does not match the {}x{} input image",
            image.width, image.height
        )));
    }
    Ok(())
}

/// `(con_sum / |S|) * sum over silhouette pixels of the RGB Euclidean
/// distance`. Zero when the silhouette is empty.
pub fn e_pixel(image: &ColorImage, render: &[f64], silhouette: &[bool], con_sum: f64) -> Result<f64> {
    check_size(image, render, silhouette)?;
    let count = silhouette.iter().filter(|&&s| s).count();
    if count == 0 {
        return Ok(0.0);
    }
    let sum: f64 = silhouette
        .iter()
        .enumerate()
        .filter(|(_, &s)| s)
        .map(|(p, _)| pixel_dist(image, render, p))
        .sum();
    Ok(con_sum / count as f64 * sum)
}

fn pixel_dist(image: &ColorImage, render: &[f64], p: usize) -> f64 {
    let o = 3 * p;
    let d = [
        image.data[o] - render[o],
        image.data[o + 1] - render[o + 1],
        image.data[o + 2] - render[o + 2],
    ];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Gradient of [`e_pixel`] with respect to the rendered colours, with the
/// silhouette held fixed.
pub fn e_pixel_grad(image: &ColorImage, render: &[f64], silhouette: &[bool], con_sum: f64) -> Result<Vec<f64>> {
    check_size(image, render, silhouette)?;
    let mut g = vec![0.0; render.len()];
    let count = silhouette.iter().filter(|&&s| s).count();
    if count == 0 {
        return Ok(g);
    }
    let w = con_sum / count as f64;
    for (p, _) in silhouette.iter().enumerate().filter(|(_, &s)| s) {
        let d = pixel_dist(image, render, p);
        if d == 0.0 {
            continue;
        }
        for c in 0..3 {
            let o = 3 * p + c;
            g[o] = w * (render[o] - image.data[o]) / d;
        }
    }
    Ok(g)
}

/// The input image with every pixel outside the silhouette set to zero.
pub fn mask_image(image: &ColorImage, silhouette: &[bool]) -> ColorImage {
    let mut out = image.clone();
    for (p, &s) in silhouette.iter().enumerate() {
        if !s {
            out.data[3 * p..3 * p + 3].fill(0.0);
        }
    }
    out
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable valid-mode correlation of a single-channel plane.
fn filter(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Adjoint of [`filter`]: scatters an output-sized map back onto the plane.
fn filter_adjoint(map: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let m = map[y * ow + x];
            for i in 0..SSIM_WINDOW {
                rows[(y + i) * ow + x] += k[i] * m;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let r = rows[y * ow + x];
            for i in 0..SSIM_WINDOW {
                out[y * w + x + i] += k[i] * r;
            }
        }
    }
    out
}

fn channel(data: &[f64], c: usize) -> Vec<f64> {
    data.iter().skip(c).step_by(3).cloned().collect()
}

struct SsimMaps {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    b1: Vec<f64>,
    b2: Vec<f64>,
}

fn ssim_maps(x: &[f64], y: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> SsimMaps {
    let mu_x = filter(x, w, h, k);
    let mu_y = filter(y, w, h, k);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let (exx, eyy, exy) = (filter(&xx, w, h, k), filter(&yy, w, h, k), filter(&xy, w, h, k));
    let n = mu_x.len();
    let mut m = SsimMaps {
        a1: vec![0.0; n],
        a2: vec![0.0; n],
        b1: vec![0.0; n],
        b2: vec![0.0; n],
        mu_x,
        mu_y,
    };
    for i in 0..n {
        let (mx, my) = (m.mu_x[i], m.mu_y[i]);
        m.a1[i] = 2.0 * mx * my + SSIM_C1;
        m.a2[i] = 2.0 * (exy[i] - mx * my) + SSIM_C2;
        m.b1[i] = mx * mx + my * my + SSIM_C1;
        m.b2[i] = (exx[i] - mx * mx) + (eyy[i] - my * my) + SSIM_C2;
    }
    m
}

fn check_ssim_size(a: &ColorImage, b: &ColorImage) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::InvalidInput(format!(
            "SSIM inputs differ in size: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            width: a.width,
            height: a.height,
            window: SSIM_WINDOW,
        });
    }
    Ok(())
}

/// Mean SSIM over valid windows and the three channels.
pub fn ssim(a: &ColorImage, b: &ColorImage) -> Result<f64> {
    check_ssim_size(a, b)?;
    let k = gaussian_kernel();
    let (w, h) = (a.width, a.height);
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..3 {
        let m = ssim_maps(&channel(&a.data, c), &channel(&b.data, c), w, h, &k);
        for i in 0..m.a1.len() {
            total += m.a1[i] * m.a2[i] / (m.b1[i] * m.b2[i]);
        }
        count += m.a1.len();
    }
    Ok(total / count as f64)
}

/// `1 - SSIM(I * S, I_render)`.
pub fn e_ssim(image: &ColorImage, render: &ColorImage, silhouette: &[bool]) -> Result<f64> {
    check_ssim_size(image, render)?;
    Ok(1.0 - ssim(&mask_image(image, silhouette), render)?)
}

/// Gradient of [`e_ssim`] with respect to the rendered image, interleaved RGB.
pub fn e_ssim_grad(image: &ColorImage, render: &ColorImage, silhouette: &[bool]) -> Result<Vec<f64>> {
    check_ssim_size(image, render)?;
    let masked = mask_image(image, silhouette);
    let k = gaussian_kernel();
    let (w, h) = (image.width, image.height);
    let n_map = (w + 1 - SSIM_WINDOW) * (h + 1 - SSIM_WINDOW);
    let scale = -1.0 / (3 * n_map) as f64;
    let mut out = vec![0.0; 3 * w * h];
    for c in 0..3 {
        let x = channel(&masked.data, c);
        let y = channel(&render.data, c);
        let m = ssim_maps(&x, &y, w, h, &k);
        let mut c_mu = vec![0.0; n_map];
        let mut c_xy = vec![0.0; n_map];
        let mut c_yy = vec![0.0; n_map];
        for i in 0..n_map {
            let d = m.b1[i] * m.b2[i];
            let s = m.a1[i] * m.a2[i] / d;
            let (mx, my) = (m.mu_x[i], m.mu_y[i]);
            c_mu[i] = scale * (2.0 * mx * (m.a2[i] - m.a1[i]) / d - 2.0 * my * s / m.b1[i] + 2.0 * my * s / m.b2[i]);
            c_xy[i] = scale * 2.0 * m.a1[i] / d;
            c_yy[i] = -scale * s / m.b2[i];
        }
        let g_mu = filter_adjoint(&c_mu, w, h, &k);
        let g_xy = filter_adjoint(&c_xy, w, h, &k);
        let g_yy = filter_adjoint(&c_yy, w, h, &k);
        for p in 0..w * h {
            out[3 * p + c] = g_mu[p] + x[p] * g_xy[p] + 2.0 * y[p] * g_yy[p];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ColorImage {
        ColorImage::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    #[test]
    fn e_pixel_single_pixel_example() {
        let img = ColorImage::new(10, 10);
        let mut render = img.data.clone();
        render[3 * 42] = 0.3;
        let sil = vec![true; 100];
        assert!((e_pixel(&img, &render, &sil, 21.0).unwrap() - 0.063).abs() < 1e-15);
        assert_eq!(e_pixel(&img, &img.data, &sil, 21.0).unwrap(), 0.0);
        assert_eq!(e_pixel(&img, &render, &[false; 100], 21.0).unwrap(), 0.0);
    }

    #[test]
    fn e_pixel_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_image(&mut rng, 12, 9);
        let ren = random_image(&mut rng, 12, 9);
        let sil: Vec<bool> = (0..108).map(|_| rng.random_bool(0.4)).collect();
        let mut sum = 0.0;
        let mut n = 0;
        for y in 0..9 {
            for x in 0..12 {
                if sil[y * 12 + x] {
                    let (a, b) = (img.get(x, y), ren.get(x, y));
                    sum += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
                    n += 1;
                }
            }
        }
        let got = e_pixel(&img, &ren.data, &sil, 13.5).unwrap();
        assert!((got - 13.5 * sum / n as f64).abs() < 1e-12);
    }

    #[test]
    fn ssim_identity_symmetry_and_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_image(&mut rng, 20, 16);
        let b = random_image(&mut rng, 20, 16);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        let neg = ColorImage {
            data: a.data.iter().map(|v| 1.0 - v).collect(),
            ..a.clone()
        };
        let e = 1.0 - ssim(&a, &neg).unwrap();
        assert!(e > 0.5 && e <= 2.0, "{e}");
    }

    #[test]
    fn e_ssim_zero_when_render_equals_masked_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = random_image(&mut rng, 16, 16);
        let sil: Vec<bool> = (0..256).map(|i| (i / 16) % 5 != 0).collect();
        let render = mask_image(&img, &sil);
        assert!(e_ssim(&img, &render, &sil).unwrap().abs() < 1e-12);
    }

    #[test]
    fn small_image_is_rejected() {
        let a = ColorImage::new(10, 20);
        assert!(matches!(ssim(&a, &a), Err(Error::ImageTooSmall { .. })));
    }

    #[test]
    fn filter_adjoint_is_the_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (w, h) = (17, 13);
        let k = gaussian_kernel();
        let x: Vec<f64> = (0..w * h).map(|_| rng.random()).collect();
        let m: Vec<f64> = (0..(w - 10) * (h - 10)).map(|_| rng.random()).collect();
        let lhs: f64 = filter(&x, w, h, &k).iter().zip(&m).map(|(a, b)| a * b).sum();
        let rhs: f64 = filter_adjoint(&m, w, h, &k).iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn ssim_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = random_image(&mut rng, 14, 13);
        let ren = random_image(&mut rng, 14, 13);
        let sil: Vec<bool> = (0..14 * 13).map(|_| rng.random_bool(0.7)).collect();
        let g = e_ssim_grad(&img, &ren, &sil).unwrap();
        for i in (0..ren.data.len()).step_by(7) {
            let h = 1e-6;
            let (mut p, mut m) = (ren.clone(), ren.clone());
            p.data[i] += h;
            m.data[i] -= h;
            let num = (e_ssim(&img, &p, &sil).unwrap() - e_ssim(&img, &m, &sil).unwrap()) / (2.0 * h);
            assert!((num - g[i]).abs() < 1e-8, "{i}: {num} vs {}", g[i]);
        }
    }

    #[test]
    fn pixel_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let img = random_image(&mut rng, 8, 8);
        let ren = random_image(&mut rng, 8, 8);
        let sil: Vec<bool> = (0..64).map(|_| rng.random_bool(0.5)).collect();
        let g = e_pixel_grad(&img, &ren.data, &sil, 7.0).unwrap();
        for i in 0..ren.data.len() {
            let h = 1e-6;
            let (mut p, mut m) = (ren.data.clone(), ren.data.clone());
            p[i] += h;
            m[i] -= h;
            let num = (e_pixel(&img, &p, &sil, 7.0).unwrap() - e_pixel(&img, &m, &sil, 7.0).unwrap()) / (2.0 * h);
            assert!((num - g[i]).abs() < 1e-7);
        }
    }
}
