use crate::error::{Error, Result};
use crate::rotation::Vec3;

/// Area-weighted vertex normals plus the unnormalized sums needed to
/// differentiate them.
#[derive(Debug, Clone)]
pub struct NormalState {
    pub sums: Vec<Vec3>,
    pub normals: Vec<Vec3>,
}

/// Sum of the adjacent face normals `(b - a) x (c - a)` (twice the face area
/// times the unit normal), normalized. Winding decides orientation.
pub fn vertex_normals(vertices: &[Vec3], faces: &[[usize; 3]]) -> Result<Vec<Vec3>> {
    Ok(normals_forward(vertices, faces)?.normals)
}

pub fn normals_forward(vertices: &[Vec3], faces: &[[usize; 3]]) -> Result<NormalState> {
    let mut sums = vec![Vec3::zeros(); vertices.len()];
    for f in faces {
        let [a, b, c] = f.map(|i| vertices[i]);
        let n = (b - a).cross(&(c - a));
        for &i in f {
            sums[i] += n;
        }
    }
    let normals = sums
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let len = s.norm();
            if len <= f64::MIN_POSITIVE || !len.is_finite() {
                Err(Error::DegenerateNormal(i))
            } else {
                Ok(s / len)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NormalState { sums, normals })
}

/// Pulls gradients on unit vertex normals back onto vertex positions.
pub fn normals_backward(
    state: &NormalState,
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    g_normals: &[Vec3],
) -> Vec<Vec3> {
    let g_sums: Vec<Vec3> = state
        .sums
        .iter()
        .zip(&state.normals)
        .zip(g_normals)
        .map(|((s, n), g)| (g - n * n.dot(g)) / s.norm())
        .collect();
    let mut out = vec![Vec3::zeros(); vertices.len()];
    for f in faces {
        let [a, b, c] = f.map(|i| vertices[i]);
        let gn = g_sums[f[0]] + g_sums[f[1]] + g_sums[f[2]];
        if gn == Vec3::zeros() {
            continue;
        }
        let (e1, e2) = (b - a, c - a);
        // n = e1 x e2
        let g_e1 = e2.cross(&gn);
        let g_e2 = gn.cross(&e1);
        out[f[0]] -= g_e1 + g_e2;
        out[f[1]] += g_e1;
        out[f[2]] += g_e2;
    }
    out
}
