//! Analytic gradients of the fitting objective, a finite-difference checker,
//! Adam, and the staged fitting loop.

mod adam;
mod fit;
mod gradcheck;
mod problem;
pub mod suite;

pub use adam::Adam;
pub use fit::{fit, initial_state, FitReport, IterationRecord, Schedule, StageConfig, StageSummary, MIN_SCALE};
pub use gradcheck::{check_gradient, BlockError, GradCheckOptions};
pub use problem::{Evaluation, MaskedObjective, Objective, Problem};

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HandParams, NUM_POSE_PCA, NUM_SHAPE};
use crate::render::{Appearance, Lighting, LIGHTING_DIM};
use crate::rotation::Vec3;

/// A contiguous group of fit parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    Theta,
    Beta,
    Scale,
    Rot,
    Trans,
    Colors,
    Lighting,
}

impl Block {
    pub const ALL: [Block; 7] = [
        Block::Theta,
        Block::Beta,
        Block::Scale,
        Block::Rot,
        Block::Trans,
        Block::Colors,
        Block::Lighting,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::Theta => "theta",
            Block::Beta => "beta",
            Block::Scale => "scale",
            Block::Rot => "rot",
            Block::Trans => "trans",
            Block::Colors => "colors",
            Block::Lighting => "lighting",
        }
    }

    pub fn len(self, num_vertices: usize) -> usize {
        match self {
            Block::Theta => NUM_POSE_PCA,
            Block::Beta => NUM_SHAPE,
            Block::Scale => 1,
            Block::Rot | Block::Trans => 3,
            Block::Colors => 3 * num_vertices,
            Block::Lighting => LIGHTING_DIM,
        }
    }

    /// Position of the block in the flat parameter vector.
    pub fn range(self, num_vertices: usize) -> Range<usize> {
        let start: usize = Block::ALL
            .iter()
            .take_while(|&&b| b != self)
            .map(|b| b.len(num_vertices))
            .sum();
        start..start + self.len(num_vertices)
    }
}

/// Which blocks an optimizer may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParamMask {
    pub theta: bool,
    pub beta: bool,
    pub scale: bool,
    pub rot: bool,
    pub trans: bool,
    pub colors: bool,
    pub lighting: bool,
}

impl ParamMask {
    pub fn all() -> Self {
        Self::from_blocks(&Block::ALL)
    }

    pub fn from_blocks(blocks: &[Block]) -> Self {
        let mut m = ParamMask::default();
        for b in blocks {
            *m.slot(*b) = true;
        }
        m
    }

    fn slot(&mut self, b: Block) -> &mut bool {
        match b {
            Block::Theta => &mut self.theta,
            Block::Beta => &mut self.beta,
            Block::Scale => &mut self.scale,
            Block::Rot => &mut self.rot,
            Block::Trans => &mut self.trans,
            Block::Colors => &mut self.colors,
            Block::Lighting => &mut self.lighting,
        }
    }

    pub fn enabled(&self, b: Block) -> bool {
        let mut m = *self;
        *m.slot(b)
    }

    pub fn blocks(&self) -> Vec<Block> {
        Block::ALL.iter().copied().filter(|b| self.enabled(*b)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks().is_empty() {
            return Err(Error::InvalidInput("parameter mask enables no block".into()));
        }
        Ok(())
    }

    /// Flat indices of every enabled entry, in layout order.
    pub fn indices(&self, num_vertices: usize) -> Vec<usize> {
        self.blocks().into_iter().flat_map(|b| b.range(num_vertices)).collect()
    }
}

/// Everything the fit optimizes: geometry code plus appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct FitState {
    pub params: HandParams,
    pub appearance: Appearance,
}

impl FitState {
    pub fn num_vertices(&self) -> usize {
        self.appearance.colors.len()
    }

    pub fn dim(&self) -> usize {
        Block::ALL.iter().map(|b| b.len(self.num_vertices())).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let p = &self.params;
        let mut x = Vec::with_capacity(self.dim());
        x.extend_from_slice(&p.theta);
        x.extend_from_slice(&p.beta);
        x.push(p.scale);
        x.extend_from_slice(&p.rot);
        x.extend_from_slice(&p.trans);
        for c in &self.appearance.colors {
            x.extend_from_slice(c.as_slice());
        }
        x.extend_from_slice(&self.appearance.lighting.to_array());
        x
    }

    pub fn from_flat(x: &[f64], num_vertices: usize) -> Self {
        let get = |b: Block| &x[b.range(num_vertices)];
        let mut params = HandParams::default();
        params.theta.copy_from_slice(get(Block::Theta));
        params.beta.copy_from_slice(get(Block::Beta));
        params.scale = get(Block::Scale)[0];
        params.rot.copy_from_slice(get(Block::Rot));
        params.trans.copy_from_slice(get(Block::Trans));
        let colors = get(Block::Colors).chunks(3).map(Vec3::from_row_slice).collect();
        let mut light = [0.0; LIGHTING_DIM];
        light.copy_from_slice(get(Block::Lighting));
        FitState {
            params,
            appearance: Appearance {
                colors,
                lighting: Lighting::from_array(&light),
            },
        }
    }
}
