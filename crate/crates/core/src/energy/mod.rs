//! Loss and regularization terms, their gradients, and the registry that
//! composes them into the fitting objective.
//!
//! Each leaf term implements [`EnergyTerm`]: a value and a backward pass onto
//! the intermediate quantities in [`Adjoints`]. The composite energies
//! (geometric, photometric, regularization, 3D branch, total) are fixed
//! weighted sums of the leaves, so every leaf carries one effective weight.

mod keypoints;
mod photometric;
mod prior;
mod regularizers;

pub use keypoints::{
    e_con, e_con_grad, e_joints3d, e_joints3d_grad, e_loc, e_loc_grad, e_ori, e_ori_grad, smooth_l1, smooth_l1_grad,
    Points2, SMOOTH_L1_DELTA,
};
pub use photometric::{e_pixel, e_pixel_grad, e_ssim, e_ssim_grad, mask_image, ssim, SSIM_SIGMA, SSIM_WINDOW};
pub use prior::{
    angles_from_local, angles_from_local_backward, bone_angles, e_skeleton, e_skeleton_grad, BoneAngles, BoneFrames,
    SkeletonPrior,
};
pub use regularizers::{
    e_beta, e_beta_grad, e_scale, e_scale_grad, e_texture, e_texture_grad, texture_outliers, middle_proximal_length,
    MIDDLE_PROXIMAL_LENGTH,
};

use serde::{Deserialize, Serialize};

use crate::camera::Keypoints2D;
use crate::error::{Error, Result};
use crate::imaging::ColorImage;
use crate::model::{NUM_FINGER_BONES, NUM_KEYPOINTS, NUM_SHAPE};
use crate::render::Rendered;
use crate::rotation::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Weights {
    pub w_3d: f64,
    pub w_2d: f64,
    pub w_con: f64,
    pub w_geo: f64,
    pub w_photo: f64,
    pub w_regu: f64,
    pub w_ori: f64,
    pub w_ssim: f64,
    pub w_c: f64,
    pub w_s: f64,
    pub w_j: f64,
    pub w_3dj: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            w_3d: 1.0,
            w_2d: 0.001,
            w_con: 0.0002,
            w_geo: 0.001,
            w_photo: 0.005,
            w_regu: 0.01,
            w_ori: 100.0,
            w_ssim: 0.2,
            w_c: 0.5,
            w_s: 10000.0,
            w_j: 10.0,
            w_3dj: 100.0,
        }
    }
}

impl Weights {
    fn entries(&self) -> [(&'static str, f64); 12] {
        [
            ("w_3d", self.w_3d),
            ("w_2d", self.w_2d),
            ("w_con", self.w_con),
            ("w_geo", self.w_geo),
            ("w_photo", self.w_photo),
            ("w_regu", self.w_regu),
            ("w_ori", self.w_ori),
            ("w_ssim", self.w_ssim),
            ("w_c", self.w_c),
            ("w_s", self.w_s),
            ("w_j", self.w_j),
            ("w_3dj", self.w_3dj),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in self.entries() {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!("weight {name} = {w} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Every leaf and composite energy at one parameter setting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub loc: f64,
    pub ori: f64,
    pub geo: f64,
    pub pixel: f64,
    pub ssim: f64,
    pub photo: f64,
    pub beta: f64,
    pub tex: f64,
    pub scale: f64,
    pub skel: f64,
    pub regu: f64,
    pub e3d: f64,
    pub e2d: f64,
    pub con: f64,
    pub joints3d: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub const FIELDS: [&'static str; 16] = [
        "loc", "ori", "geo", "pixel", "ssim", "photo", "beta", "tex", "scale", "skel", "regu", "e3d", "e2d", "con",
        "joints3d", "total",
    ];

    pub fn values(&self) -> [f64; 16] {
        [
            self.loc,
            self.ori,
            self.geo,
            self.pixel,
            self.ssim,
            self.photo,
            self.beta,
            self.tex,
            self.scale,
            self.skel,
            self.regu,
            self.e3d,
            self.e2d,
            self.con,
            self.joints3d,
            self.total,
        ]
    }

    /// Leaf value by term name.
    pub fn leaf(&self, name: &str) -> Option<f64> {
        Some(match name {
            "loc" => self.loc,
            "ori" => self.ori,
            "pixel" => self.pixel,
            "ssim" => self.ssim,
            "beta" => self.beta,
            "tex" => self.tex,
            "scale" => self.scale,
            "skel" => self.skel,
            "e2d" => self.e2d,
            "con" => self.con,
            "joints3d" => self.joints3d,
            _ => return None,
        })
    }

    fn set_leaf(&mut self, name: &str, v: f64) -> bool {
        let slot = match name {
            "loc" => &mut self.loc,
            "ori" => &mut self.ori,
            "pixel" => &mut self.pixel,
            "ssim" => &mut self.ssim,
            "beta" => &mut self.beta,
            "tex" => &mut self.tex,
            "scale" => &mut self.scale,
            "skel" => &mut self.skel,
            "e2d" => &mut self.e2d,
            "con" => &mut self.con,
            "joints3d" => &mut self.joints3d,
            _ => return false,
        };
        *slot = v;
        true
    }

    /// Fills the composite fields from the leaves.
    pub fn compose(&mut self, w: &Weights) {
        self.geo = self.loc + w.w_ori * self.ori;
        self.photo = self.pixel + w.w_ssim * self.ssim;
        self.regu = self.beta + w.w_c * self.tex + w.w_s * self.scale + w.w_j * self.skel;
        self.e3d = w.w_geo * self.geo + w.w_photo * self.photo + w.w_regu * self.regu;
        self.total = w.w_3d * self.e3d + w.w_2d * self.e2d + w.w_con * self.con + w.w_3dj * self.joints3d;
    }
}

/// `E_loc + w_ori E_ori`.
pub fn e_geo(detected: &Keypoints2D, projected: &Points2, w_ori: f64) -> f64 {
    e_loc(detected, projected) + w_ori * e_ori(detected, projected)
}

/// `E_pixel + w_ssim E_ssim` against a rendered image and its silhouette.
pub fn e_photo(image: &ColorImage, render: &Rendered, con_sum: f64, w_ssim: f64) -> Result<f64> {
    let sil = render.silhouette();
    Ok(e_pixel(image, &render.color, &sil, con_sum)? + w_ssim * e_ssim(image, &render.image(), &sil)?)
}

/// `E_beta + w_c E_tex + w_s E_scale + w_j E_skel`.
pub fn e_regu(
    beta: &[f64; NUM_SHAPE],
    colors: &[Vec3],
    joints: &[Vec3; NUM_KEYPOINTS],
    angles: &BoneAngles,
    prior: &SkeletonPrior,
    w: &Weights,
    con_sum: f64,
) -> f64 {
    e_beta(beta) + w.w_c * e_texture(colors, con_sum) + w.w_s * e_scale(joints) + w.w_j * e_skeleton(angles, prior)
}

/// Everything a term may read, evaluated at the current parameters.
#[derive(Clone, Copy)]
pub struct TermInputs<'a> {
    pub detected: &'a Keypoints2D,
    /// Second keypoint set from an independent 2D estimator.
    pub estimated: Option<&'a Points2>,
    pub gt_joints: Option<&'a [Vec3; NUM_KEYPOINTS]>,
    pub image: Option<&'a ColorImage>,
    pub render: Option<&'a Rendered>,
    pub projected: &'a Points2,
    pub joints21: &'a [Vec3; NUM_KEYPOINTS],
    pub beta: &'a [f64; NUM_SHAPE],
    pub colors: &'a [Vec3],
    pub angles: &'a BoneAngles,
    pub prior: &'a SkeletonPrior,
    pub con_sum: f64,
}

/// Gradients on the intermediates terms read.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjoints {
    pub projected: Points2,
    pub joints21: [Vec3; NUM_KEYPOINTS],
    pub beta: [f64; NUM_SHAPE],
    pub colors: Vec<Vec3>,
    pub angles: BoneAngles,
    /// Interleaved RGB, empty until a photometric term writes to it.
    pub render_color: Vec<f64>,
}

impl Adjoints {
    pub fn new(num_vertices: usize) -> Self {
        Adjoints {
            projected: [[0.0; 2]; NUM_KEYPOINTS],
            joints21: [Vec3::zeros(); NUM_KEYPOINTS],
            beta: [0.0; NUM_SHAPE],
            colors: vec![Vec3::zeros(); num_vertices],
            angles: [[0.0; 3]; NUM_FINGER_BONES],
            render_color: Vec::new(),
        }
    }

    fn add_render(&mut self, g: &[f64], scale: f64) {
        if self.render_color.is_empty() {
            self.render_color = vec![0.0; g.len()];
        }
        for (a, b) in self.render_color.iter_mut().zip(g) {
            *a += scale * b;
        }
    }
}

/// One leaf energy.
pub trait EnergyTerm: Send + Sync {
    fn name(&self) -> &'static str;

    /// Product of every weight between this leaf and the total.
    fn weight(&self, w: &Weights) -> f64;

    /// Whether the inputs this term reads are present.
    fn available(&self, _x: &TermInputs) -> bool {
        true
    }

    fn value(&self, x: &TermInputs) -> Result<f64>;

    /// Adds `scale * d(value)/d(intermediate)` into `adj`.
    fn backward(&self, x: &TermInputs, scale: f64, adj: &mut Adjoints) -> Result<()>;
}

fn add2(dst: &mut Points2, g: &Points2, s: f64) {
    for (d, g) in dst.iter_mut().zip(g) {
        d[0] += s * g[0];
        d[1] += s * g[1];
    }
}

fn add3(dst: &mut [Vec3], g: &[Vec3], s: f64) {
    for (d, g) in dst.iter_mut().zip(g) {
        *d += g * s;
    }
}

struct Loc;
struct Ori;
struct Pixel;
struct Ssim;
struct Beta;
struct Texture;
struct Scale;
struct Skeleton;
struct E2d;
struct Con;
struct Joints3d;

impl EnergyTerm for Loc {
    fn name(&self) -> &'static str {
        "loc"
    }
    fn weight(&self, w: &Weights) -> f64 {
        w.w_3d * w.w_geo
    }
    fn value(&self, x: &TermInputs) -> Result<f64> {
        Ok(e_loc(x.detected, x.projected))
    }
    fn backward(&self, x: &TermInputs, s: f64, adj: &mut Adjoints) -> Result<()> {
        add2(&mut adj.projected, &e_loc_grad(x.detected, x.projected), s);
        Ok(())
    }
}

impl EnergyTerm for Ori {
    fn name(&self) -> &'static str {
        "ori"
    }
    fn weight(&self, w: &Weights) -> f64 {
        w.w_3d * w.w_geo * w.w_ori
    }
    fn value(&self, x: &TermInputs) -> Result<f64> {
        Ok(e_ori(x.detected, x.projected))
    }
    fn backward(&self, x: &TermInputs, s: f64, adj: &mut Adjoints) -> Result<()> {
        add2(&mut adj.projected, &e_ori_grad(x.detected, x.projected), s);
        Ok(())
    }
}

fn photo_inputs<'a>(x: &TermInputs<'a>) -> Result<(&'a ColorImage, &'a Rendered)> {
    match (x.image, x.render) {
        (Some(i), Some(r)) => Ok((i, r)),
        _ => Err(Error::InvalidInput("photometric term needs an image and a render".into())),
    }
}

impl EnergyTerm for Pixel {
    fn name(&self) -> &'static str {
        "pixel"
    }
    fn weight(&self, w: &Weights) -> f64 {
        w.w_3d * w.w_photo
    }
    fn available(&self, x: &TermInputs) -> bool {
        x.image.is_some() && x.render.is_some()
    }
    fn value(&self, x: &TermInputs) -> Result<f64> {
        let (img, r) = photo_inputs(x)?;
        e_pixel(img, &r.color, &r.silhouette(), x.con_sum)
    }
    fn backward(&self, x: &TermInputs, s: f64, adj: &mut Adjoints) -> Result<()> {
        let (img, r) = photo_inputs(x)?;
        adj.add_render(&e_pixel_grad(img, &r.color, &r.silhouette(), x.con_sum)?, s);
        Ok(())
    }
}

impl EnergyTerm for Ssim {
    fn name(&self) -> &'static str {
        "ssim"
    }
    fn weight(&self, w: &Weights) -> f64 {
        w.w_3d * w.w_photo * w.w_ssim
    }
    fn available(&self, x: &TermInputs) -> bool {
        x.image.is_some() && x.render.is_some()
    }
    fn value(&self, x: &TermInputs) -> Result<f64> {
        let (img, r) = photo_inputs(x)?;
        e_ssim(img, &r.image(), &r.silhouette())
    }
    fn backward(&self, x: &TermInputs, s: f64, adj: &mut Adjoints) -> Result<()> {
        let (img, r) = photo_inputs(x)?;
        adj.add_render(&e_ssim_grad(img, &r.image(), &r.silhouette())?, s);
        Ok(())
    }
}

impl EnergyTerm for Beta {
    fn name(&self) -> &'static str {
        "beta"
    }
    fn weight(&self, w: &Weights) -> f64 {
        w.w_3d * w.w_regu
    }
    fn value(&self, x: &TermInputs) -> Result<f64> {
        Ok(e_beta(x.beta))
    }
    fn backward(&self, x: &TermInputs, s: f64, adj: &mut Adjoints) -> Result<()> {
        for (a, g) in adj.beta.iter_mut().zip(e_beta_grad(x.beta)) {
            *a += s * g;
        }
        Ok(())
    }
}

impl EnergyTerm for Texture {
    fn name(&self) -> &'static str {
        "tex"
    }
    fn weight(&self, w: &Weights) -> f64 {
        w.w_3d * w.w_regu * w.w_c
    }
    fn value(&self, x: &TermInputs) -> Result<f64> {
        Ok(e_texture(x.colors, x.con_sum))
    }
    fn backward(&self, x: &TermInputs, s: f64, adj: &mut Adjoints) -> Result<()> {
        add3(&mut adj.colors, &e_texture_grad(x.colors, x.con_sum), s);
        Ok(())
    }
}

impl EnergyTerm for Scale {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn weight(&self, w: &Weights) -> f64 {
        w.w_3d * w.w_regu * w.w_s
    }
    fn value(&self, x: &TermInputs) -> Result<f64> {
        Ok(e_scale(x.joints21))
    }
    fn backward(&self, x: &TermInputs, s: f64, adj: &mut Adjoints) -> Result<()> {
        add3(&mut adj.joints21, &e_scale_grad(x.joints21), s);
        Ok(())
    }
}

impl EnergyTerm for Skeleton {
    fn name(&self) -> &'static str {
        "skel"
    }
    fn weight(&self, w: &Weights) -> f64 {
        w.w_3d * w.w_regu * w.w_j
    }
    fn value(&self, x: &TermInputs) -> Result<f64> {
        Ok(e_skeleton(x.angles, x.prior))
    }
    fn backward(&self, x: &TermInputs, s: f64, adj: &mut Adjoints) -> Result<()> {
        let g = e_skeleton_grad(x.angles, x.prior);
        for (a, g) in adj.angles.iter_mut().zip(&g) {
            for k in 0..3 {
                a[k] += s * g[k];
            }
        }
        Ok(())
    }
}

impl EnergyTerm for E2d {
    fn name(&self) -> &'static str {
        "e2d"
    }
    fn weight(&self, w: &Weights) -> f64 {
        w.w_2d
    }
    fn available(&self, x: &TermInputs) -> bool {
        x.estimated.is_some()
    }
    fn value(&self, x: &TermInputs) -> Result<f64> {
        Ok(x.estimated.map_or(0.0, |e| e_loc(x.detected, e)))
    }
    // The estimated set is an input, not a function of the parameters.
    fn backward(&self, _x: &TermInputs, _s: f64, _adj: &mut Adjoints) -> Result<()> {
        Ok(())
    }
}

impl EnergyTerm for Con {
    fn name(&self) -> &'static str {
        "con"
    }
    fn weight(&self, w: &Weights) -> f64 {
        w.w_con
    }
    fn available(&self, x: &TermInputs) -> bool {
        x.estimated.is_some()
    }
    fn value(&self, x: &TermInputs) -> Result<f64> {
        Ok(x.estimated.map_or(0.0, |e| e_con(x.projected, e)))
    }
    fn backward(&self, x: &TermInputs, s: f64, adj: &mut Adjoints) -> Result<()> {
        if let Some(e) = x.estimated {
            add2(&mut adj.projected, &e_con_grad(x.projected, e), s);
        }
        Ok(())
    }
}

impl EnergyTerm for Joints3d {
    fn name(&self) -> &'static str {
        "joints3d"
    }
    fn weight(&self, w: &Weights) -> f64 {
        w.w_3dj
    }
    fn available(&self, x: &TermInputs) -> bool {
        x.gt_joints.is_some()
    }
    fn value(&self, x: &TermInputs) -> Result<f64> {
        Ok(x.gt_joints.map_or(0.0, |gt| e_joints3d(x.joints21, gt)))
    }
    fn backward(&self, x: &TermInputs, s: f64, adj: &mut Adjoints) -> Result<()> {
        if let Some(gt) = x.gt_joints {
            add3(&mut adj.joints21, &e_joints3d_grad(x.joints21, gt), s);
        }
        Ok(())
    }
}

/// Named collection of energy terms.
pub struct TermRegistry {
    terms: Vec<Box<dyn EnergyTerm>>,
}

impl TermRegistry {
    /// The eleven leaf terms of the total energy.
    pub fn builtin() -> Self {
        TermRegistry {
            terms: vec![
                Box::new(Loc),
                Box::new(Ori),
                Box::new(Pixel),
                Box::new(Ssim),
                Box::new(Beta),
                Box::new(Texture),
                Box::new(Scale),
                Box::new(Skeleton),
                Box::new(E2d),
                Box::new(Con),
                Box::new(Joints3d),
            ],
        }
    }

    /// Adds a term, replacing any existing term of the same name.
    pub fn register(&mut self, term: Box<dyn EnergyTerm>) {
        match self.terms.iter().position(|t| t.name() == term.name()) {
            Some(i) => self.terms[i] = term,
            None => self.terms.push(term),
        }
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.terms.iter().map(|t| t.name()).collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn EnergyTerm> {
        self.terms
            .iter()
            .find(|t| t.name() == name)
            .map(|t| t.as_ref())
            .ok_or_else(|| Error::UnknownTerm(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn EnergyTerm> {
        self.terms.iter().map(|t| t.as_ref())
    }

    /// Checks a list of term names, keeping registry order.
    pub fn resolve<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<&'static str>> {
        for n in names {
            self.get(n.as_ref())?;
        }
        Ok(self
            .names()
            .into_iter()
            .filter(|t| names.iter().any(|n| n.as_ref() == *t))
            .collect())
    }

    fn checked_value(term: &dyn EnergyTerm, x: &TermInputs) -> Result<f64> {
        if !term.available(x) {
            return Ok(0.0);
        }
        let v = term.value(x)?;
        if !v.is_finite() {
            return Err(Error::NonFiniteEnergy {
                term: term.name().to_string(),
                value: v,
            });
        }
        Ok(v)
    }

    /// Evaluates every term and composes the breakdown. Terms without their
    /// inputs contribute zero.
    pub fn breakdown(&self, x: &TermInputs, w: &Weights) -> Result<EnergyBreakdown> {
        let mut b = EnergyBreakdown::default();
        for t in self.iter() {
            let v = Self::checked_value(t, x)?;
            b.set_leaf(t.name(), v);
        }
        b.compose(w);
        Ok(b)
    }

    /// `sum(weight * value)` over the selected terms, using values from a
    /// breakdown where available.
    pub fn objective(&self, active: &[&str], b: &EnergyBreakdown, x: &TermInputs, w: &Weights) -> Result<f64> {
        let mut total = 0.0;
        for name in active {
            let t = self.get(name)?;
            let v = match b.leaf(name) {
                Some(v) => v,
                None => Self::checked_value(t, x)?,
            };
            total += t.weight(w) * v;
        }
        Ok(total)
    }

    /// Gradient of [`TermRegistry::objective`] on the intermediates.
    pub fn backward(&self, active: &[&str], x: &TermInputs, w: &Weights, adj: &mut Adjoints) -> Result<()> {
        for name in active {
            let t = self.get(name)?;
            let s = t.weight(w);
            if s != 0.0 && t.available(x) {
                t.backward(x, s, adj)?;
            }
        }
        Ok(())
    }
}
