use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use handfit::model::toy::{toy_model, TOY_SEED};
use handfit::model::{load_model as load_model_file, HandModel};
use handfit::optim::FitState;
use sha2::{Digest, Sha256};

/// The model at `path`, or the builtin toy model.
pub fn load_model(path: Option<&Path>) -> Result<HandModel> {
    match path {
        Some(p) => Ok(load_model_file(p)?),
        None => Ok(toy_model(TOY_SEED)),
    }
}

pub fn check_vertex_count(state: &FitState, model: &HandModel) -> Result<()> {
    let (n, m) = (state.num_vertices(), model.template_vertices.len());
    if n != m {
        bail!("params have {n} vertex colours, the model has {m} vertices");
    }
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Pixel rectangle `x,y,w,h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct BBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl FromStr for BBox {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let v: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("bbox `{s}`: {e}"))?;
        match v[..] {
            [x, y, w, h] if w > 0 && h > 0 => Ok(BBox { x, y, w, h }),
            _ => Err(format!("bbox `{s}`: expected x,y,w,h with positive w and h")),
        }
    }
}
