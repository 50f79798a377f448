//! TOML fit configuration. Every section is optional and overrides the
//! defaults field by field; unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::energy::Weights;
use crate::error::{Error, Result};
use crate::model::{NUM_POSE_PCA, NUM_SHAPE};
use crate::optim::{initial_state, Block, FitState, Schedule, StageConfig};
use crate::render::{Lighting, LIGHTING_DIM};
use crate::rotation::Vec3;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_RENDER_SIZE: usize = 224;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub schema: u32,
    #[serde(default)]
    pub weights: Weights,
    #[serde(default)]
    pub schedule: ScheduleOverrides,
    #[serde(default)]
    pub init: InitOverrides,
    /// Longer image side used while fitting; 0 keeps the input size.
    #[serde(default = "default_render_size")]
    pub render_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub paths: Paths,
}

fn default_render_size() -> usize {
    DEFAULT_RENDER_SIZE
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            schema: SCHEMA_VERSION,
            weights: Weights::default(),
            schedule: ScheduleOverrides::default(),
            init: InitOverrides::default(),
            render_size: DEFAULT_RENDER_SIZE,
            seed: 0,
            paths: Paths::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageOverride {
    pub blocks: Option<Vec<Block>>,
    pub terms: Option<Vec<String>>,
    pub iterations: Option<usize>,
    pub lr: Option<f64>,
    pub final_lr_factor: Option<f64>,
}

impl StageOverride {
    fn apply(&self, s: &mut StageConfig) {
        if let Some(b) = &self.blocks {
            s.blocks = b.clone();
        }
        if let Some(t) = &self.terms {
            s.terms = t.clone();
        }
        if let Some(n) = self.iterations {
            s.iterations = n;
        }
        if let Some(lr) = self.lr {
            s.lr = lr;
        }
        if let Some(f) = self.final_lr_factor {
            s.final_lr_factor = f;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleOverrides {
    pub stage_a: Option<StageOverride>,
    pub stage_b: Option<StageOverride>,
    pub stage_c: Option<StageOverride>,
    pub max_restarts: Option<usize>,
    pub convergence_tol: Option<f64>,
    pub window: Option<usize>,
    pub monotone: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitOverrides {
    pub theta: Option<[f64; NUM_POSE_PCA]>,
    pub beta: Option<[f64; NUM_SHAPE]>,
    pub scale: Option<f64>,
    pub rot: Option<[f64; 3]>,
    pub trans: Option<[f64; 3]>,
    /// Uniform starting colour for every vertex.
    pub color: Option<[f64; 3]>,
    pub lighting: Option<[f64; LIGHTING_DIM]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub model: Option<PathBuf>,
    pub skeleton_prior: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl FitConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let c: FitConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema = {} is not supported (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        self.weights.validate()?;
        self.schedule()?;
        if let Some(s) = self.init.scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("init.scale = {s} must be positive")));
            }
        }
        Ok(())
    }

    /// The default schedule with this config's overrides applied.
    pub fn schedule(&self) -> Result<Schedule> {
        let mut s = Schedule::default();
        let o = &self.schedule;
        for (i, stage) in [&o.stage_a, &o.stage_b, &o.stage_c].into_iter().enumerate() {
            if let Some(stage) = stage {
                stage.apply(&mut s.stages[i]);
            }
        }
        if let Some(n) = o.max_restarts {
            s.max_restarts = n;
        }
        if let Some(t) = o.convergence_tol {
            s.convergence_tol = t;
        }
        if let Some(w) = o.window {
            s.window = w;
        }
        if let Some(m) = o.monotone {
            s.monotone = m;
        }
        s.validate()?;
        Ok(s)
    }

    /// The default starting state with this config's overrides applied.
    pub fn initial_state(&self, num_vertices: usize) -> FitState {
        let mut s = initial_state(num_vertices);
        let o = &self.init;
        let p = &mut s.params;
        if let Some(t) = o.theta {
            p.theta = t;
        }
        if let Some(b) = o.beta {
            p.beta = b;
        }
        if let Some(v) = o.scale {
            p.scale = v;
        }
        if let Some(r) = o.rot {
            p.rot = r;
        }
        if let Some(t) = o.trans {
            p.trans = t;
        }
        if let Some(c) = o.color {
            s.appearance.colors = vec![Vec3::from(c); num_vertices];
        }
        if let Some(l) = o.lighting {
            s.appearance.lighting = Lighting::from_array(&l);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_is_all_defaults() {
        let c = FitConfig::parse("schema = 1").unwrap();
        assert_eq!(c, FitConfig::default());
        assert_eq!(c.schedule().unwrap(), Schedule::default());
    }

    #[test]
    fn partial_overrides() {
        let c = FitConfig::parse(
            r#"
schema = 1
seed = 9
[weights]
w_ori = 50.0
[schedule.stage_b]
iterations = 10
[schedule.stage_c]
lr = 0.002
blocks = ["colors", "lighting"]
[init]
trans = [0.0, 0.0, 0.5]
"#,
        )
        .unwrap();
        assert_eq!(c.weights.w_ori, 50.0);
        assert_eq!(c.weights.w_s, Weights::default().w_s);
        let s = c.schedule().unwrap();
        assert_eq!(s.stages[1].iterations, 10);
        assert_eq!(s.stages[1].lr, Schedule::default().stages[1].lr);
        assert_eq!(s.stages[2].lr, 0.002);
        assert_eq!(s.stages[2].blocks, vec![Block::Colors, Block::Lighting]);
        assert_eq!(c.initial_state(778).params.trans, [0.0, 0.0, 0.5]);
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_name() {
        for (text, key) in [
            ("schema = 1\nbogus = 2", "bogus"),
            ("schema = 1\n[weights]\nw_x = 1.0", "w_x"),
            ("schema = 1\n[schedule.stage_a]\nsteps = 3", "steps"),
        ] {
            let msg = FitConfig::parse(text).unwrap_err().to_string();
            assert!(msg.contains(key), "{msg}");
        }
    }

    #[test]
    fn wrong_schema_or_values_fail() {
        assert!(FitConfig::parse("").is_err());
        assert!(FitConfig::parse("schema = 2").is_err());
        assert!(FitConfig::parse("schema = 1\n[weights]\nw_ori = -1.0").is_err());
        assert!(FitConfig::parse("schema = 1\n[schedule.stage_a]\nlr = 0.0").is_err());
        assert!(FitConfig::parse("schema = 1\n[schedule.stage_a]\nblocks = [\"wrist\"]").is_err());
        assert!(FitConfig::parse("schema = 1\n[init]\nscale = 0.0").is_err());
    }
}
