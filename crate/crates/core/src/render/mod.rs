//! Differentiable-by-hand mesh renderer: per-vertex shading, hard
//! rasterization and an analytic backward pass that holds the pixel-to-face
//! assignment fixed.

mod normals;
mod raster;
mod shading;

pub use normals::{normals_backward, normals_forward, vertex_normals, NormalState};
pub use raster::{interpolate, interpolate_backward, rasterize, Fragments, NO_FACE};
pub use shading::{shade_backward, shade_vertices, Lighting, ShadeGrad, LIGHTING_DIM};

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::camera::{project, project_vjp, Intrinsics};
use crate::error::{Error, Result};
use crate::imaging::ColorImage;
use crate::rotation::Vec3;

/// Default skin tone for a fresh fit.
pub const DEFAULT_COLOR: [f64; 3] = [0.7, 0.55, 0.45];

#[derive(Debug, Clone, PartialEq)]
pub struct Appearance {
    pub colors: Vec<Vec3>,
    pub lighting: Lighting,
}

impl Appearance {
    pub fn uniform(n: usize, color: [f64; 3]) -> Self {
        Appearance {
            colors: vec![Vec3::from(color); n],
            lighting: Lighting::default(),
        }
    }

    pub fn project_feasible(&mut self) {
        for c in &mut self.colors {
            *c = c.map(|x| x.clamp(0.0, 1.0));
        }
        self.lighting.project_feasible();
    }
}

/// Forward render plus the intermediates the backward pass needs.
#[derive(Debug, Clone)]
pub struct Rendered {
    /// Row-major `height x width x 3`, background zero.
    pub color: Vec<f64>,
    pub fragments: Fragments,
    screen: Vec<[f64; 2]>,
    normals: NormalState,
    shaded: Vec<Vec3>,
}

#[derive(Debug, Clone)]
pub struct RenderGrad {
    pub vertices: Vec<Vec3>,
    pub colors: Vec<Vec3>,
    pub lighting: [f64; LIGHTING_DIM],
}

impl Rendered {
    pub fn width(&self) -> usize {
        self.fragments.width
    }

    pub fn height(&self) -> usize {
        self.fragments.height
    }

    pub fn silhouette(&self) -> Vec<bool> {
        self.fragments.face_ids.iter().map(|&f| f != NO_FACE).collect()
    }

    pub fn depth(&self) -> &[f64] {
        &self.fragments.depth
    }

    pub fn image(&self) -> ColorImage {
        ColorImage {
            width: self.width(),
            height: self.height(),
            data: self.color.clone(),
        }
    }

    /// Hash of the discrete choices the backward pass holds fixed: the
    /// pixel-to-face assignment, clamped shading channels and unlit vertices.
    pub fn branch_signature(&self, lighting: &Lighting) -> u64 {
        let mut h = DefaultHasher::new();
        self.fragments.face_ids.hash(&mut h);
        let d = Vec3::from(lighting.direction);
        for (s, n) in self.shaded.iter().zip(&self.normals.normals) {
            let flags = s.iter().fold(0u8, |acc, &c| (acc << 1) | u8::from(c == 0.0 || c == 1.0));
            (flags, n.dot(&d) > 0.0).hash(&mut h);
        }
        h.finish()
    }

    pub fn backward(
        &self,
        vertices: &[Vec3],
        faces: &[[usize; 3]],
        appearance: &Appearance,
        k: &Intrinsics,
        g_color: &[f64],
    ) -> Result<RenderGrad> {
        let (g_shaded, g_screen) = interpolate_backward(&self.fragments, faces, &self.screen, &self.shaded, g_color);
        let sg = shade_backward(&appearance.colors, &self.normals.normals, &appearance.lighting, &g_shaded)?;
        let mut g_vertices = normals_backward(&self.normals, vertices, faces, &sg.normals);
        for (i, (gv, gs)) in g_vertices.iter_mut().zip(&g_screen).enumerate() {
            if gs[0] != 0.0 || gs[1] != 0.0 {
                *gv += project_vjp(k, &vertices[i], *gs);
            }
        }
        Ok(RenderGrad {
            vertices: g_vertices,
            colors: sg.colors,
            lighting: sg.lighting,
        })
    }
}

/// Renders camera-space vertices at the intrinsics' image size.
pub fn render(vertices: &[Vec3], faces: &[[usize; 3]], appearance: &Appearance, k: &Intrinsics) -> Result<Rendered> {
    if appearance.colors.len() != vertices.len() {
        return Err(Error::shape(
            "colors",
            format!("{} colors for {} vertices", appearance.colors.len(), vertices.len()),
        ));
    }
    let screen = project(vertices, k)?;
    let normals = normals_forward(vertices, faces)?;
    let shaded = shade_vertices(&appearance.colors, &normals.normals, &appearance.lighting)?;
    let depth: Vec<f64> = vertices.iter().map(|v| v.z).collect();
    let fragments = rasterize(&screen, &depth, faces, k.width, k.height);
    let color = interpolate(&fragments, faces, &shaded);
    Ok(Rendered {
        color,
        fragments,
        screen,
        normals,
        shaded,
    })
}

/// Closed UV sphere with outward winding.
pub fn uv_sphere(center: Vec3, radius: f64, rings: usize, segments: usize) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let mut v = vec![center + Vec3::new(0.0, -radius, 0.0)];
    for r in 1..rings {
        let phi = std::f64::consts::PI * r as f64 / rings as f64;
        for s in 0..segments {
            let t = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
            v.push(center + radius * Vec3::new(phi.sin() * t.cos(), -phi.cos(), phi.sin() * t.sin()));
        }
    }
    v.push(center + Vec3::new(0.0, radius, 0.0));
    let ring = |r: usize, s: usize| 1 + (r - 1) * segments + s % segments;
    let bottom = v.len() - 1;
    let mut faces = Vec::new();
    for s in 0..segments {
        faces.push([0, ring(1, s), ring(1, s + 1)]);
        faces.push([bottom, ring(rings - 1, s + 1), ring(rings - 1, s)]);
        for r in 1..rings - 1 {
            faces.push([ring(r, s), ring(r + 1, s), ring(r + 1, s + 1)]);
            faces.push([ring(r, s), ring(r + 1, s + 1), ring(r, s + 1)]);
        }
    }
    for f in &mut faces {
        let [a, b, c] = f.map(|i| v[i]);
        if (b - a).cross(&(c - a)).dot(&((a + b + c) / 3.0 - center)) < 0.0 {
            f.swap(1, 2);
        }
    }
    (v, faces)
}
