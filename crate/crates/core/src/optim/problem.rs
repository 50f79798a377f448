use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::{Block, FitState, ParamMask};
use crate::camera::{project, project_vjp, Intrinsics, Keypoints2D};
use crate::energy::{
    angles_from_local, angles_from_local_backward, texture_outliers, Adjoints, BoneFrames, EnergyBreakdown, Points2, SkeletonPrior,
    TermInputs, TermRegistry, Weights,
};
use crate::error::{Error, Result};
use crate::imaging::ColorImage;
use crate::model::{
    apply_global, apply_global_backward, regress_joints21, regress_joints21_backward, skin, HandGeometry, HandModel,
    NUM_JOINTS, NUM_KEYPOINTS,
};
use crate::render::{render, Rendered};
use crate::rotation::Vec3;

/// Observations and fixed settings of one fitting problem.
#[derive(Clone, Copy)]
pub struct Problem<'a> {
    pub model: &'a HandModel,
    pub frames: &'a BoneFrames,
    pub prior: &'a SkeletonPrior,
    pub registry: &'a TermRegistry,
    pub intrinsics: &'a Intrinsics,
    pub detected: &'a Keypoints2D,
    pub estimated: Option<&'a Points2>,
    pub gt_joints: Option<&'a [Vec3; NUM_KEYPOINTS]>,
    pub image: Option<&'a ColorImage>,
    pub weights: Weights,
    /// Divide the confidence sum by 21 before it scales the photometric and
    /// texture terms.
    pub normalize_con_sum: bool,
}

/// Result of one forward (and optionally backward) pass.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub breakdown: EnergyBreakdown,
    /// Weighted sum of the active terms.
    pub objective: f64,
    /// Full flat gradient of `objective` (see [`Block`] layout).
    pub gradient: Option<Vec<f64>>,
    pub geometry: HandGeometry,
    pub projected: Points2,
    pub render: Option<Rendered>,
    /// Hash of every discrete branch the gradient holds fixed.
    pub signature: u64,
}

impl<'a> Problem<'a> {
    pub fn con_sum(&self) -> f64 {
        let s = self.detected.confidence_sum();
        if self.normalize_con_sum {
            s / NUM_KEYPOINTS as f64
        } else {
            s
        }
    }

    /// Forward pass over every term, plus the gradient of the `active` ones.
    pub fn evaluate(&self, state: &FitState, active: &[&str], want_gradient: bool) -> Result<Evaluation> {
        let p = &state.params;
        let skin_state = skin(&p.theta, &p.beta, self.model);
        let local_joints = regress_joints21(&skin_state.vertices, &skin_state.joints, self.model);
        let geometry = apply_global(&skin_state.vertices, &local_joints, p.scale, &p.rot_vec(), &p.trans_vec())?;
        let projected: Points2 = project(&geometry.joints21, self.intrinsics)?
            .try_into()
            .expect("21 projected keypoints");
        let angles = angles_from_local(&skin_state.local, self.frames);
        let rendered = match self.image {
            Some(_) => Some(render(&geometry.vertices, &self.model.faces, &state.appearance, self.intrinsics)?),
            None => None,
        };
        let inputs = TermInputs {
            detected: self.detected,
            estimated: self.estimated,
            gt_joints: self.gt_joints,
            image: self.image,
            render: rendered.as_ref(),
            projected: &projected,
            joints21: &geometry.joints21,
            beta: &p.beta,
            colors: &state.appearance.colors,
            angles: &angles,
            prior: self.prior,
            con_sum: self.con_sum(),
        };
        let breakdown = self.registry.breakdown(&inputs, &self.weights)?;
        let objective = self.registry.objective(active, &breakdown, &inputs, &self.weights)?;
        if !objective.is_finite() {
            return Err(Error::NonFiniteEnergy {
                term: "objective".into(),
                value: objective,
            });
        }

        let mut h = DefaultHasher::new();
        if let Some(r) = &rendered {
            r.branch_signature(&state.appearance.lighting).hash(&mut h);
        }
        let signature = branch_hash(&inputs, h);

        let gradient = if want_gradient {
            let nv = state.num_vertices();
            let mut adj = Adjoints::new(nv);
            self.registry.backward(active, &inputs, &self.weights, &mut adj)?;

            let mut g_vertices = vec![Vec3::zeros(); nv];
            let mut g_colors = adj.colors.clone();
            let mut g_lighting = [0.0; crate::render::LIGHTING_DIM];
            if let (Some(r), false) = (&rendered, adj.render_color.is_empty()) {
                let rg = r.backward(
                    &geometry.vertices,
                    &self.model.faces,
                    &state.appearance,
                    self.intrinsics,
                    &adj.render_color,
                )?;
                g_vertices = rg.vertices;
                for (a, b) in g_colors.iter_mut().zip(&rg.colors) {
                    *a += b;
                }
                g_lighting = rg.lighting;
            }
            let mut g_joints = adj.joints21;
            for i in 0..NUM_KEYPOINTS {
                if adj.projected[i] != [0.0; 2] {
                    g_joints[i] += project_vjp(self.intrinsics, &geometry.joints21[i], adj.projected[i]);
                }
            }
            let gg = apply_global_backward(
                &skin_state.vertices,
                &local_joints,
                p.scale,
                &p.rot_vec(),
                &g_vertices,
                &g_joints,
            );
            let mut g_local_vertices = gg.vertices;
            let mut g_joints16 = [Vec3::zeros(); NUM_JOINTS];
            regress_joints21_backward(&gg.joints21, self.model, &mut g_local_vertices, &mut g_joints16);
            let g_local = angles_from_local_backward(&skin_state.local, self.frames, &adj.angles);
            let (g_theta, mut g_beta) = skin_state.backward(self.model, &g_local_vertices, &g_joints16, &g_local);
            for (a, b) in g_beta.iter_mut().zip(&adj.beta) {
                *a += b;
            }

            let mut g = Vec::with_capacity(state.dim());
            g.extend_from_slice(&g_theta);
            g.extend_from_slice(&g_beta);
            g.push(gg.scale);
            g.extend_from_slice(gg.rot.as_slice());
            g.extend_from_slice(gg.trans.as_slice());
            for c in &g_colors {
                g.extend_from_slice(c.as_slice());
            }
            g.extend_from_slice(&g_lighting);
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(i));
            }
            Some(g)
        } else {
            None
        };

        Ok(Evaluation {
            breakdown,
            objective,
            gradient,
            geometry,
            projected,
            render: rendered,
            signature,
        })
    }
}

/// Folds in the remaining piecewise branches: skeleton range membership and
/// texture band membership.
fn branch_hash(x: &TermInputs, mut h: DefaultHasher) -> u64 {
    for (a, r) in x.angles.iter().zip(&x.prior.ranges) {
        for k in 0..3 {
            (u8::from(a[k] < r[k].0) + 2 * u8::from(a[k] > r[k].1)).hash(&mut h);
        }
    }
    texture_outliers(x.colors).hash(&mut h);
    h.finish()
}

/// Scalar objective over a flat vector, as seen by the optimizer and the
/// gradient checker.
pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
    /// Identifies the smooth piece `x` lies on; `None` if the objective is
    /// smooth everywhere.
    fn signature(&self, _x: &[f64]) -> Result<Option<u64>> {
        Ok(None)
    }
    fn value_with_signature(&self, x: &[f64]) -> Result<(f64, Option<u64>)> {
        Ok((self.value(x)?, self.signature(x)?))
    }
}

/// The fitting objective restricted to the enabled parameter blocks. The
/// flat vector holds only enabled entries, in layout order.
pub struct MaskedObjective<'a> {
    pub problem: Problem<'a>,
    pub base: FitState,
    pub mask: ParamMask,
    pub terms: Vec<&'static str>,
    indices: Vec<usize>,
}

impl<'a> MaskedObjective<'a> {
    pub fn new(problem: Problem<'a>, base: FitState, mask: ParamMask, terms: Vec<&'static str>) -> Result<Self> {
        mask.validate()?;
        let indices = mask.indices(base.num_vertices());
        Ok(MaskedObjective {
            problem,
            base,
            mask,
            terms,
            indices,
        })
    }

    pub fn gather(&self, state: &FitState) -> Vec<f64> {
        self.restrict(&state.to_flat())
    }

    /// Picks the enabled entries out of a full-layout vector.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.indices.iter().map(|&i| full[i]).collect()
    }

    pub fn scatter(&self, x: &[f64]) -> FitState {
        let mut full = self.base.to_flat();
        for (&i, v) in self.indices.iter().zip(x) {
            full[i] = *v;
        }
        FitState::from_flat(&full, self.base.num_vertices())
    }

    /// `(name, range)` of each enabled block inside the gathered vector.
    pub fn block_ranges(&self) -> Vec<(Block, std::ops::Range<usize>)> {
        let nv = self.base.num_vertices();
        let mut start = 0;
        self.mask
            .blocks()
            .into_iter()
            .map(|b| {
                let r = start..start + b.len(nv);
                start = r.end;
                (b, r)
            })
            .collect()
    }

    pub fn evaluate(&self, x: &[f64], want_gradient: bool) -> Result<Evaluation> {
        self.problem.evaluate(&self.scatter(x), &self.terms, want_gradient)
    }
}

impl Objective for MaskedObjective<'_> {
    fn dim(&self) -> usize {
        self.indices.len()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.evaluate(x, false)?.objective)
    }

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let e = self.evaluate(x, true)?;
        let full = e.gradient.expect("gradient requested");
        Ok((e.objective, self.restrict(&full)))
    }

    fn signature(&self, x: &[f64]) -> Result<Option<u64>> {
        Ok(Some(self.evaluate(x, false)?.signature))
    }

    fn value_with_signature(&self, x: &[f64]) -> Result<(f64, Option<u64>)> {
        let e = self.evaluate(x, false)?;
        Ok((e.objective, Some(e.signature)))
    }
}
