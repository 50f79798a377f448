//! File formats: detector keypoint JSON, parameter files, ground truth and
//! OBJ export.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::camera::Keypoints2D;
use crate::error::{Error, Result};
use crate::model::{decode, HandModel, HandParams, MODEL_ORDER_TO_KEYPOINT, NUM_KEYPOINTS, NUM_POSE_PCA, NUM_SHAPE};
use crate::optim::FitState;
use crate::render::{Appearance, Lighting, LIGHTING_DIM};
use crate::rotation::Vec3;

/// Order of the 21 entries in a keypoint file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointOrder {
    /// Wrist, then each finger base to tip (thumb, index, middle, ring,
    /// pinky). This is the internal order.
    #[default]
    OpenPose,
    /// The 16 skinned joints in model order followed by the five tips.
    Mano,
}

impl FromStr for JointOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "openpose" => Ok(JointOrder::OpenPose),
            "mano" => Ok(JointOrder::Mano),
            _ => Err(Error::InvalidInput(format!("unknown joint order `{s}` (expected openpose or mano)"))),
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn json(text: &str, context: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|source| Error::Json {
        context: context.to_string(),
        source,
    })
}

fn number(v: &Value, context: &str, what: &str) -> Result<f64> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::InvalidInput(format!("{context}: {what} is not a finite number: {v}")))
}

pub fn parse_keypoints(path: impl AsRef<Path>, order: JointOrder) -> Result<Keypoints2D> {
    let path = path.as_ref();
    parse_keypoints_str(&read(path)?, &path.display().to_string(), order)
}

/// Reads `{"people": [{"hand_right_keypoints_2d": [x, y, c, ...]}]}` (first
/// person) or `{"points": [[x, y, c], ...]}`. Confidences outside `[0, 1]`
/// are clamped with a warning.
pub fn parse_keypoints_str(text: &str, context: &str, order: JointOrder) -> Result<Keypoints2D> {
    let doc = json(text, context)?;
    let mut triples = Vec::new();
    if let Some(people) = doc.get("people") {
        let flat = people
            .get(0)
            .and_then(|p| p.get("hand_right_keypoints_2d"))
            .and_then(Value::as_array)
            .ok_or_else(|| Error::InvalidInput(format!("{context}: no hand_right_keypoints_2d in people[0]")))?;
        if flat.len() % 3 != 0 {
            return Err(Error::InvalidInput(format!(
                "{context}: {} values is not a whole number of (x, y, c) triples",
                flat.len()
            )));
        }
        for (i, t) in flat.chunks(3).enumerate() {
            let what = format!("keypoint {i}");
            triples.push([number(&t[0], context, &what)?, number(&t[1], context, &what)?, number(&t[2], context, &what)?]);
        }
    } else if let Some(points) = doc.get("points").and_then(Value::as_array) {
        for (i, p) in points.iter().enumerate() {
            let what = format!("keypoint {i}");
            let t = p
                .as_array()
                .filter(|t| t.len() == 3)
                .ok_or_else(|| Error::InvalidInput(format!("{context}: {what} is not an [x, y, c] triple")))?;
            triples.push([number(&t[0], context, &what)?, number(&t[1], context, &what)?, number(&t[2], context, &what)?]);
        }
    } else {
        return Err(Error::InvalidInput(format!("{context}: expected a `people` or `points` key")));
    }
    if triples.len() != NUM_KEYPOINTS {
        return Err(Error::InvalidInput(format!(
            "{context}: expected {NUM_KEYPOINTS} keypoints, found {}",
            triples.len()
        )));
    }

    let mut points = [[0.0; 2]; NUM_KEYPOINTS];
    let mut confidence = [0.0; NUM_KEYPOINTS];
    for (i, t) in triples.iter().enumerate() {
        let k = match order {
            JointOrder::OpenPose => i,
            JointOrder::Mano => MODEL_ORDER_TO_KEYPOINT[i],
        };
        points[k] = [t[0], t[1]];
        let c = t[2].clamp(0.0, 1.0);
        if c != t[2] {
            log::warn!("{context}: keypoint {i} confidence {} clamped to {c}", t[2]);
        }
        confidence[k] = c;
    }
    Keypoints2D::new(points, confidence)
}

/// The on-disk form of a fit result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub theta: [f64; NUM_POSE_PCA],
    pub beta: [f64; NUM_SHAPE],
    pub scale: f64,
    pub rot: [f64; 3],
    pub trans: [f64; 3],
    pub colors: Vec<[f64; 3]>,
    pub lighting: [f64; LIGHTING_DIM],
}

impl ParamsFile {
    pub fn from_state(s: &FitState) -> Self {
        let p = &s.params;
        ParamsFile {
            theta: p.theta,
            beta: p.beta,
            scale: p.scale,
            rot: p.rot,
            trans: p.trans,
            colors: s.appearance.colors.iter().map(|c| [c.x, c.y, c.z]).collect(),
            lighting: s.appearance.lighting.to_array(),
        }
    }

    pub fn to_state(&self) -> Result<FitState> {
        let params = HandParams {
            theta: self.theta,
            beta: self.beta,
            scale: self.scale,
            rot: self.rot,
            trans: self.trans,
        };
        params.validate()?;
        Ok(FitState {
            params,
            appearance: Appearance {
                colors: self.colors.iter().map(|c| Vec3::from(*c)).collect(),
                lighting: Lighting::from_array(&self.lighting),
            },
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        serde_json::from_str(&read(path)?).map_err(|source| Error::Json {
            context: path.display().to_string(),
            source,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            context: path.display().to_string(),
            source,
        })?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Ground-truth 3D keypoints (internal order, metres) and optionally the
/// mesh vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub joints: [Vec3; NUM_KEYPOINTS],
    pub vertices: Option<Vec<Vec3>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GroundTruthFile {
    joints: Vec<[f64; 3]>,
    #[serde(default)]
    vertices: Option<Vec<[f64; 3]>>,
}

/// Loads either `{"joints": [[x, y, z] x 21], "vertices": [...]}` or a
/// parameter file, which is decoded with `model`.
pub fn load_ground_truth(path: impl AsRef<Path>, model: &HandModel) -> Result<GroundTruth> {
    let path = path.as_ref();
    let text = read(path)?;
    let context = path.display().to_string();
    let doc = json(&text, &context)?;
    if doc.get("theta").is_some() {
        let p: ParamsFile = serde_json::from_value(doc).map_err(|source| Error::Json { context, source })?;
        let g = decode(model, &p.to_state()?.params)?;
        return Ok(GroundTruth {
            joints: g.joints21,
            vertices: Some(g.vertices),
        });
    }
    let f: GroundTruthFile = serde_json::from_value(doc).map_err(|source| Error::Json {
        context: context.clone(),
        source,
    })?;
    let joints: [[f64; 3]; NUM_KEYPOINTS] = f.joints.as_slice().try_into().map_err(|_| {
        Error::InvalidInput(format!("{context}: expected {NUM_KEYPOINTS} joints, found {}", f.joints.len()))
    })?;
    Ok(GroundTruth {
        joints: joints.map(Vec3::from),
        vertices: f.vertices.map(|v| v.into_iter().map(Vec3::from).collect()),
    })
}

/// Wavefront OBJ text; colours, when given, are appended to the `v` lines.
pub fn obj_string(vertices: &[Vec3], faces: &[[usize; 3]], colors: &[Vec3]) -> Result<String> {
    if !colors.is_empty() && colors.len() != vertices.len() {
        return Err(Error::shape(
            "colors",
            format!("{} colours for {} vertices", colors.len(), vertices.len()),
        ));
    }
    let mut out = String::new();
    for (i, v) in vertices.iter().enumerate() {
        write!(out, "v {} {} {}", v.x, v.y, v.z).unwrap();
        if let Some(c) = colors.get(i) {
            write!(out, " {} {} {}", c.x, c.y, c.z).unwrap();
        }
        out.push('\n');
    }
    for f in faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    Ok(out)
}

pub fn export_obj(vertices: &[Vec3], faces: &[[usize; 3]], colors: &[Vec3], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, obj_string(vertices, faces, colors)?).map_err(|e| Error::io(path, e))
}

/// A parsed OBJ: vertices, per-vertex colours (empty when absent) and
/// zero-based triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjMesh {
    pub vertices: Vec<Vec3>,
    pub colors: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

/// Reads the subset of OBJ that [`obj_string`] writes.
pub fn parse_obj(text: &str) -> Result<ObjMesh> {
    let mut mesh = ObjMesh {
        vertices: Vec::new(),
        colors: Vec::new(),
        faces: Vec::new(),
    };
    for (n, line) in text.lines().enumerate() {
        let bad = || Error::InvalidInput(format!("obj line {}: `{line}`", n + 1));
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let x: Vec<f64> = it.map(|t| t.parse().map_err(|_| bad())).collect::<Result<_>>()?;
                match x.len() {
                    3 => {}
                    6 => mesh.colors.push(Vec3::new(x[3], x[4], x[5])),
                    _ => return Err(bad()),
                }
                mesh.vertices.push(Vec3::new(x[0], x[1], x[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = it
                    .map(|t| t.split('/').next().unwrap_or("").parse::<usize>().map_err(|_| bad()))
                    .collect::<Result<_>>()?;
                if idx.len() != 3 || idx.contains(&0) {
                    return Err(bad());
                }
                mesh.faces.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
            }
            _ => {}
        }
    }
    if !mesh.colors.is_empty() && mesh.colors.len() != mesh.vertices.len() {
        return Err(Error::InvalidInput("obj mixes coloured and plain vertices".into()));
    }
    Ok(mesh)
}
