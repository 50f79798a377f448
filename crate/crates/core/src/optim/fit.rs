use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::problem::{MaskedObjective, Problem};
use super::{Adam, Block, FitState, ParamMask};
use crate::energy::EnergyBreakdown;
use crate::error::{Error, Result};
use crate::model::HandParams;
use crate::render::{Appearance, Lighting, DEFAULT_COLOR};

/// Learning-rate growth per accepted step after a rejection, up to the
/// stage's own rate.
const RECOVERY: f64 = 1.05;

/// Smallest scale a projection step leaves in place.
pub const MIN_SCALE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub name: String,
    pub blocks: Vec<Block>,
    /// Leaf term names; terms whose inputs are missing contribute nothing.
    pub terms: Vec<String>,
    pub iterations: usize,
    pub lr: f64,
    /// The learning rate decays geometrically from `lr` to
    /// `lr * final_lr_factor` over the stage.
    #[serde(default = "one")]
    pub final_lr_factor: f64,
}

fn one() -> f64 {
    1.0
}

impl StageConfig {
    fn new(name: &str, blocks: &[Block], terms: &[&str], iterations: usize, lr: f64) -> Self {
        StageConfig {
            name: name.into(),
            blocks: blocks.to_vec(),
            terms: terms.iter().map(|t| t.to_string()).collect(),
            iterations,
            lr,
            final_lr_factor: 1.0,
        }
    }
}

const GEO_REGU: [&str; 8] = ["loc", "ori", "beta", "tex", "scale", "skel", "e2d", "con"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub stages: Vec<StageConfig>,
    /// Restarts allowed per stage after a numerical failure.
    pub max_restarts: usize,
    /// Converged if the objective moved by less than this (relative) over
    /// the last `window` iterations of the final stage.
    pub convergence_tol: f64,
    pub window: usize,
    /// Reject steps that would leave the trace higher than it was `window`
    /// iterations earlier within a stage.
    #[serde(default)]
    pub monotone: bool,
}

impl Default for Schedule {
    fn default() -> Self {
        let photo: Vec<&str> = GEO_REGU.iter().copied().chain(["pixel", "ssim"]).collect();
        Schedule {
            stages: vec![
                // Rotation waits for stage B: with the fingers held at the
                // mean pose, a rigid fit tilts the palm to foreshorten curled
                // fingers and lands on the wrong side of the depth ambiguity.
                StageConfig::new("stage_a", &[Block::Scale, Block::Trans], &GEO_REGU, 200, 0.05),
                StageConfig::new(
                    "stage_b",
                    &[Block::Theta, Block::Beta, Block::Scale, Block::Rot, Block::Trans],
                    &GEO_REGU,
                    1000,
                    0.01,
                ),
                StageConfig::new("stage_c", &Block::ALL, &photo, 1000, 0.01),
            ],
            max_restarts: 3,
            convergence_tol: 1e-3,
            window: 25,
            monotone: false,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("schedule has no stages".into()));
        }
        for s in &self.stages {
            if s.blocks.is_empty() {
                return Err(Error::Config(format!("{}: no parameter blocks", s.name)));
            }
            if !(s.lr > 0.0 && s.lr.is_finite()) {
                return Err(Error::Config(format!("{}: learning rate {} must be positive", s.name, s.lr)));
            }
            if !(s.final_lr_factor > 0.0 && s.final_lr_factor <= 1.0) {
                return Err(Error::Config(format!(
                    "{}: final_lr_factor {} must be in (0, 1]",
                    s.name, s.final_lr_factor
                )));
            }
        }
        if self.window == 0 {
            return Err(Error::Config("convergence window must be positive".into()));
        }
        Ok(())
    }
}

/// Starting point of a fit: mean pose and shape, unit scale, hand 0.6 m in
/// front of the camera, uniform skin colour, default lighting.
pub fn initial_state(num_vertices: usize) -> FitState {
    FitState {
        params: HandParams {
            trans: [0.0, 0.0, 0.6],
            ..HandParams::default()
        },
        appearance: Appearance {
            colors: Appearance::uniform(num_vertices, DEFAULT_COLOR).colors,
            lighting: Lighting::default(),
        },
    }
}

fn project_feasible(state: &mut FitState) {
    state.params.scale = state.params.scale.max(MIN_SCALE);
    state.appearance.project_feasible();
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub stage: usize,
    pub iteration: usize,
    pub lr: f64,
    /// The stage objective (weighted sum of the stage's terms).
    pub objective: f64,
    /// All terms, evaluated before the step.
    pub breakdown: EnergyBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageSummary {
    pub name: String,
    pub iterations: usize,
    pub restarts: usize,
    /// Steps rejected by the windowed descent check.
    pub rejected: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub trace: Vec<IterationRecord>,
    pub state: FitState,
    pub final_breakdown: EnergyBreakdown,
    pub final_objective: f64,
    pub stages: Vec<StageSummary>,
    pub converged: bool,
    pub seconds: f64,
}

impl FitReport {
    /// Equality of everything but the wall-clock time.
    pub fn same_result(&self, other: &FitReport) -> bool {
        FitReport {
            seconds: 0.0,
            ..self.clone()
        } == FitReport {
            seconds: 0.0,
            ..other.clone()
        }
    }
}

/// An evaluated iterate of one stage.
#[derive(Clone)]
struct Point {
    x: Vec<f64>,
    objective: f64,
    breakdown: EnergyBreakdown,
    gradient: Vec<f64>,
}

impl Point {
    fn new(obj: &MaskedObjective, x: Vec<f64>) -> Result<Self> {
        let e = obj.evaluate(&x, true)?;
        let full = e.gradient.expect("gradient requested");
        Ok(Point {
            gradient: obj.restrict(&full),
            x,
            objective: e.objective,
            breakdown: e.breakdown,
        })
    }
}

/// Runs the staged schedule from `init`.
///
/// Each stage optimizes its blocks with a fresh Adam and hands the best
/// iterate it visited to the next stage. A numerical failure (degenerate
/// depth, non-finite energy or gradient) keeps the last good iterate and
/// halves the learning rate, at most `max_restarts` times per stage.
///
/// With `schedule.monotone`, a step whose objective exceeds the one
/// recorded `window` iterations earlier is rejected: the stage returns to
/// its best iterate and halves the learning rate, which then grows back
/// after accepted steps.
pub fn fit(problem: &Problem, init: FitState, schedule: &Schedule) -> Result<FitReport> {
    schedule.validate()?;
    let start = Instant::now();
    let mut state = init;
    project_feasible(&mut state);
    let mut trace = Vec::new();
    let mut stages = Vec::new();
    let mut last_terms = Vec::new();

    for (si, stage) in schedule.stages.iter().enumerate() {
        let terms = problem.registry.resolve(&stage.terms)?;
        let obj = MaskedObjective::new(*problem, state.clone(), ParamMask::from_blocks(&stage.blocks), terms.clone())?;
        let aborted = |restarts: usize, e: &Error| Error::FitAborted {
            stage: stage.name.clone(),
            restarts,
            reason: e.to_string(),
        };
        let mut cur = match Point::new(&obj, obj.gather(&state)) {
            Ok(p) => p,
            Err(e) if e.is_numerical() => return Err(aborted(0, &e)),
            Err(e) => return Err(e),
        };
        let initial = cur.objective;
        let mut best = cur.clone();
        let mut recorded = Vec::with_capacity(stage.iterations);
        let mut lr = stage.lr;
        let mut adam = Adam::new(cur.x.len(), lr);
        let (mut restarts, mut rejected) = (0, 0);
        while recorded.len() < stage.iterations {
            let it = recorded.len();
            adam.lr = lr * stage.final_lr_factor.powf(it as f64 / stage.iterations as f64);
            trace.push(IterationRecord {
                stage: si,
                iteration: it,
                lr: adam.lr,
                objective: cur.objective,
                breakdown: cur.breakdown,
            });
            recorded.push(cur.objective);
            if cur.objective < best.objective {
                best = cur.clone();
            }
            if recorded.len() == stage.iterations {
                break;
            }
            let mut x = cur.x.clone();
            adam.step(&mut x, &cur.gradient)?;
            let mut s = obj.scatter(&x);
            project_feasible(&mut s);
            match Point::new(&obj, obj.gather(&s)) {
                Ok(next) => {
                    let bound = match recorded.len().checked_sub(schedule.window) {
                        Some(k) => recorded[k],
                        None => f64::INFINITY,
                    };
                    if !schedule.monotone {
                        cur = next;
                    } else if next.objective <= bound {
                        cur = next;
                        lr = (lr * RECOVERY).min(stage.lr);
                    } else {
                        rejected += 1;
                        lr *= 0.5;
                        cur = best.clone();
                        adam = Adam::new(cur.x.len(), lr);
                    }
                }
                Err(e) if e.is_numerical() => {
                    if restarts >= schedule.max_restarts {
                        return Err(aborted(restarts, &e));
                    }
                    restarts += 1;
                    lr *= 0.5;
                    log::warn!("{}: iteration {it}: {e}; restarting with lr {lr}", stage.name);
                    adam = Adam::new(cur.x.len(), lr);
                }
                Err(e) => return Err(e),
            }
        }
        state = obj.scatter(&best.x);
        stages.push(StageSummary {
            name: stage.name.clone(),
            iterations: recorded.len(),
            restarts,
            rejected,
            initial_objective: initial,
            final_objective: best.objective,
        });
        last_terms = terms;
    }

    let final_eval = problem.evaluate(&state, &last_terms, false)?;
    let converged = match trace.len().checked_sub(schedule.window + 1) {
        Some(k) if trace[k].stage + 1 == schedule.stages.len() => {
            let (a, b) = (trace[k].objective, final_eval.objective);
            (a - b).abs() <= schedule.convergence_tol * a.abs().max(1e-12)
        }
        _ => false,
    };
    Ok(FitReport {
        trace,
        state,
        final_breakdown: final_eval.breakdown,
        final_objective: final_eval.objective,
        stages,
        converged,
        seconds: start.elapsed().as_secs_f64(),
    })
}
