//! Portable model file: one JSON document holding a format tag and named
//! arrays, each `{"shape": [...], "data": [flat row-major numbers]}`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    HandModel, NUM_JOINTS, NUM_POSE_PCA, NUM_SHAPE, NUM_VERTICES, POSE_DIM, POSE_FEATURES,
};
use crate::error::{Error, Result};
use crate::rotation::Vec3;

pub const MODEL_FORMAT: &str = "handmodel-v1";

#[derive(Debug, Deserialize, Serialize)]
struct Array<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

#[derive(Debug, Deserialize)]
struct RawModelFile {
    format: String,
    #[serde(flatten)]
    arrays: BTreeMap<String, Array<f64>>,
}

pub fn load_model(path: impl AsRef<Path>) -> Result<HandModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model(&text).map_err(|e| match e {
        Error::Json { source, .. } => Error::Json {
            context: path.display().to_string(),
            source,
        },
        other => other,
    })
}

pub fn parse_model(text: &str) -> Result<HandModel> {
    let raw: RawModelFile = serde_json::from_str(text).map_err(|source| Error::Json {
        context: "model file".into(),
        source,
    })?;
    if raw.format != MODEL_FORMAT {
        return Err(Error::InvalidInput(format!(
            "unsupported model format `{}` (expected `{MODEL_FORMAT}`)",
            raw.format
        )));
    }
    let mut arrays = raw.arrays;
    let mut take = |name: &str, expected: &[Option<usize>]| -> Result<Array<f64>> {
        let a = arrays
            .remove(name)
            .ok_or_else(|| Error::shape(name, "missing from model file"))?;
        let declared: usize = a.shape.iter().product();
        if declared != a.data.len() {
            return Err(Error::shape(
                name,
                format!(
                    "header shape {:?} needs {declared} values, payload has {}",
                    a.shape,
                    a.data.len()
                ),
            ));
        }
        let matches = a.shape.len() == expected.len()
            && a.shape.iter().zip(expected).all(|(s, e)| e.is_none_or(|e| *s == e));
        if !matches {
            return Err(Error::shape(
                name,
                format!("shape {:?} does not match expected {expected:?}", a.shape),
            ));
        }
        if let Some(index) = a.data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                name: name.into(),
                index,
            });
        }
        Ok(a)
    };
    let n = Some(NUM_VERTICES);

    let template = take("template_vertices", &[n, Some(3)])?;
    let faces = take("faces", &[None, Some(3)])?;
    let shape_basis = take("shape_basis", &[n, Some(3), Some(NUM_SHAPE)])?;
    let pose_basis = take("pose_basis", &[n, Some(3), Some(POSE_FEATURES)])?;
    let regressor = take("joint_regressor", &[Some(NUM_JOINTS), n])?;
    let weights = take("skin_weights", &[n, Some(NUM_JOINTS)])?;
    let parents = take("kinematic_parents", &[Some(NUM_JOINTS)])?;
    let pca = take("pca_pose_components", &[None, Some(POSE_DIM)])?;
    let mean = take("pca_pose_mean", &[Some(POSE_DIM)])?;
    let tips = take("fingertip_vertex_ids", &[Some(5)])?;

    if pca.shape[0] < NUM_POSE_PCA {
        return Err(Error::shape(
            "pca_pose_components",
            format!("needs at least {NUM_POSE_PCA} rows, got {}", pca.shape[0]),
        ));
    }

    let index = |name: &str, x: f64| -> Result<usize> {
        if x < 0.0 || x.fract() != 0.0 {
            return Err(Error::shape(name, format!("{x} is not a valid index")));
        }
        Ok(x as usize)
    };
    let faces = faces
        .data
        .chunks(3)
        .map(|f| Ok([index("faces", f[0])?, index("faces", f[1])?, index("faces", f[2])?]))
        .collect::<Result<Vec<_>>>()?;
    let mut kinematic_parents = [None; NUM_JOINTS];
    for (slot, &p) in kinematic_parents.iter_mut().zip(&parents.data) {
        // -1 and the unsigned 32-bit wrap both mark the root.
        *slot = if p < 0.0 || p >= u32::MAX as f64 {
            None
        } else {
            Some(index("kinematic_parents", p)?)
        };
    }
    let mut fingertip_vertex_ids = [0; 5];
    for (slot, &t) in fingertip_vertex_ids.iter_mut().zip(&tips.data) {
        *slot = index("fingertip_vertex_ids", t)?;
    }

    let model = HandModel {
        template_vertices: template
            .data
            .chunks(3)
            .map(|c| Vec3::new(c[0], c[1], c[2]))
            .collect(),
        faces,
        shape_basis: shape_basis.data,
        pose_basis: pose_basis.data,
        joint_regressor: regressor.data,
        skin_weights: weights.data,
        kinematic_parents,
        pca_pose_components: pca.data[..NUM_POSE_PCA * POSE_DIM].to_vec(),
        pca_pose_mean: mean.data.try_into().expect("shape checked"),
        fingertip_vertex_ids,
    };
    model.validate()?;
    Ok(model)
}

#[derive(Serialize)]
struct ModelFileOut {
    format: &'static str,
    template_vertices: Array<f32>,
    faces: Array<i64>,
    shape_basis: Array<f32>,
    pose_basis: Array<f32>,
    joint_regressor: Array<f32>,
    skin_weights: Array<f32>,
    kinematic_parents: Array<i64>,
    pca_pose_components: Array<f32>,
    pca_pose_mean: Array<f32>,
    fingertip_vertex_ids: Array<i64>,
}

fn f32_array(shape: Vec<usize>, data: impl IntoIterator<Item = f64>) -> Array<f32> {
    Array {
        shape,
        data: data.into_iter().map(|x| x as f32).collect(),
    }
}

/// Writes `model` in the portable format with values rounded to f32.
pub fn save_model(model: &HandModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let n = NUM_VERTICES;
    let out = ModelFileOut {
        format: MODEL_FORMAT,
        template_vertices: f32_array(
            vec![n, 3],
            model.template_vertices.iter().flat_map(|v| [v.x, v.y, v.z]),
        ),
        faces: Array {
            shape: vec![model.faces.len(), 3],
            data: model.faces.iter().flatten().map(|&i| i as i64).collect(),
        },
        shape_basis: f32_array(vec![n, 3, NUM_SHAPE], model.shape_basis.iter().copied()),
        pose_basis: f32_array(vec![n, 3, POSE_FEATURES], model.pose_basis.iter().copied()),
        joint_regressor: f32_array(vec![NUM_JOINTS, n], model.joint_regressor.iter().copied()),
        skin_weights: f32_array(vec![n, NUM_JOINTS], model.skin_weights.iter().copied()),
        kinematic_parents: Array {
            shape: vec![NUM_JOINTS],
            data: model
                .kinematic_parents
                .iter()
                .map(|p| p.map_or(-1, |p| p as i64))
                .collect(),
        },
        pca_pose_components: f32_array(
            vec![NUM_POSE_PCA, POSE_DIM],
            model.pca_pose_components.iter().copied(),
        ),
        pca_pose_mean: f32_array(vec![POSE_DIM], model.pca_pose_mean.iter().copied()),
        fingertip_vertex_ids: Array {
            shape: vec![5],
            data: model.fingertip_vertex_ids.iter().map(|&i| i as i64).collect(),
        },
    };
    let text = serde_json::to_string(&out).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
