use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::Vec3;

pub const LIGHTING_DIM: usize = 11;

/// Ambient plus one directional light. `direction` points toward the light:
/// a surface is lit when its normal has a positive component along it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lighting {
    pub ambient: f64,
    pub ambient_color: [f64; 3],
    pub directional: f64,
    pub directional_color: [f64; 3],
    pub direction: [f64; 3],
}

impl Default for Lighting {
    fn default() -> Self {
        Lighting {
            ambient: 0.8,
            ambient_color: [1.0; 3],
            directional: 0.8,
            directional_color: [1.0; 3],
            direction: [0.0, 0.0, -1.0],
        }
    }
}

impl Lighting {
    /// `(l_a, l_a_color, l_d, l_d_color, direction)` flattened.
    pub fn to_array(&self) -> [f64; LIGHTING_DIM] {
        let mut a = [0.0; LIGHTING_DIM];
        a[0] = self.ambient;
        a[1..4].copy_from_slice(&self.ambient_color);
        a[4] = self.directional;
        a[5..8].copy_from_slice(&self.directional_color);
        a[8..11].copy_from_slice(&self.direction);
        a
    }

    pub fn from_array(a: &[f64; LIGHTING_DIM]) -> Self {
        Lighting {
            ambient: a[0],
            ambient_color: [a[1], a[2], a[3]],
            directional: a[4],
            directional_color: [a[5], a[6], a[7]],
            direction: [a[8], a[9], a[10]],
        }
    }

    /// Projects intensities to `>= 0` and colors into `[0, 1]`.
    pub fn project_feasible(&mut self) {
        self.ambient = self.ambient.max(0.0);
        self.directional = self.directional.max(0.0);
        for c in self.ambient_color.iter_mut().chain(self.directional_color.iter_mut()) {
            *c = c.clamp(0.0, 1.0);
        }
    }

    fn unit_direction(&self) -> Result<(Vec3, f64)> {
        let d = Vec3::from(self.direction);
        let len = d.norm();
        if !(len >= 1e-9) {
            return Err(Error::DegenerateLight(len));
        }
        Ok((d / len, len))
    }

    fn intensity(&self, cos: f64) -> Vec3 {
        Vec3::from(self.ambient_color) * self.ambient
            + Vec3::from(self.directional_color) * (self.directional * cos)
    }
}

/// `c' = clamp(c * (l_a l_a_color + l_d l_d_color max(0, <n, d>)), 0, 1)`.
pub fn shade_vertices(colors: &[Vec3], normals: &[Vec3], lighting: &Lighting) -> Result<Vec<Vec3>> {
    let (d, _) = lighting.unit_direction()?;
    Ok(colors
        .iter()
        .zip(normals)
        .map(|(c, n)| {
            let raw = c.component_mul(&lighting.intensity(n.dot(&d).max(0.0)));
            raw.map(|x| x.clamp(0.0, 1.0))
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct ShadeGrad {
    pub colors: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub lighting: [f64; LIGHTING_DIM],
}

/// Backward pass of [`shade_vertices`]; clamped channels pass no gradient.
pub fn shade_backward(
    colors: &[Vec3],
    normals: &[Vec3],
    lighting: &Lighting,
    g_shaded: &[Vec3],
) -> Result<ShadeGrad> {
    let (d, dlen) = lighting.unit_direction()?;
    let la_c = Vec3::from(lighting.ambient_color);
    let ld_c = Vec3::from(lighting.directional_color);
    let mut g_colors = vec![Vec3::zeros(); colors.len()];
    let mut g_normals = vec![Vec3::zeros(); colors.len()];
    let mut g_l = [0.0; LIGHTING_DIM];
    let mut g_d = Vec3::zeros();
    for i in 0..colors.len() {
        let g = g_shaded[i];
        if g == Vec3::zeros() {
            continue;
        }
        let dot = normals[i].dot(&d);
        let cos = dot.max(0.0);
        let light = lighting.intensity(cos);
        let raw = colors[i].component_mul(&light);
        let g_raw = Vec3::from_fn(|k, _| if (0.0..=1.0).contains(&raw[k]) { g[k] } else { 0.0 });
        g_colors[i] = g_raw.component_mul(&light);
        let g_light = g_raw.component_mul(&colors[i]);
        g_l[0] += g_light.dot(&la_c);
        for k in 0..3 {
            g_l[1 + k] += g_light[k] * lighting.ambient;
            g_l[5 + k] += g_light[k] * lighting.directional * cos;
        }
        g_l[4] += g_light.dot(&ld_c) * cos;
        if dot > 0.0 {
            let g_cos = lighting.directional * g_light.dot(&ld_c);
            g_normals[i] = d * g_cos;
            g_d += normals[i] * g_cos;
        }
    }
    let g_dir = (g_d - d * d.dot(&g_d)) / dlen;
    g_l[8..11].copy_from_slice(g_dir.as_slice());
    Ok(ShadeGrad {
        colors: g_colors,
        normals: g_normals,
        lighting: g_l,
    })
}
