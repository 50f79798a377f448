use std::ops::Range;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::problem::Objective;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check at most this many coordinates per block, sampled with `seed`.
    pub max_coords_per_block: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-6,
            max_coords_per_block: None,
            seed: 0,
        }
    }
}

/// Agreement between analytic and central-difference gradients on one block.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockError {
    pub block: String,
    /// `|ga - gn| / max(1e-8, |ga| + |gn|)` with Euclidean norms over the
    /// checked coordinates.
    pub rel_err: f64,
    /// Largest per-coordinate absolute difference.
    pub max_abs_diff: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a branch of the objective.
    pub skipped: usize,
}

/// Compares the analytic gradient of `f` at `x` with central differences,
/// block by block. Coordinates whose `+eps` or `-eps` probe lands on a
/// different smooth piece (per [`Objective::signature`]) are skipped.
pub fn check_gradient<F: Objective + ?Sized>(
    f: &F,
    x: &[f64],
    blocks: &[(String, Range<usize>)],
    opts: &GradCheckOptions,
) -> Result<Vec<BlockError>> {
    if !(opts.eps > 0.0) {
        return Err(Error::InvalidInput(format!("finite-difference step {} must be positive", opts.eps)));
    }
    if x.len() != f.dim() {
        return Err(Error::shape("x", format!("{} entries for a {}-dimensional objective", x.len(), f.dim())));
    }
    let (_, ga) = f.value_and_gradient(x)?;
    let base_sig = f.signature(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::with_capacity(blocks.len());
    let mut probe = x.to_vec();
    for (name, range) in blocks {
        let mut coords: Vec<usize> = range.clone().collect();
        if let Some(cap) = opts.max_coords_per_block {
            if cap < coords.len() {
                let mut picked: Vec<usize> = sample(&mut rng, coords.len(), cap).into_iter().collect();
                picked.sort_unstable();
                coords = picked.into_iter().map(|i| range.start + i).collect();
            }
        }
        let (mut diff2, mut a2, mut n2, mut max_abs) = (0.0, 0.0, 0.0, 0.0f64);
        let (mut checked, mut skipped) = (0, 0);
        for i in coords {
            probe[i] = x[i] + opts.eps;
            let (plus, sig_plus) = f.value_with_signature(&probe)?;
            probe[i] = x[i] - opts.eps;
            let (minus, sig_minus) = f.value_with_signature(&probe)?;
            probe[i] = x[i];
            if sig_plus != base_sig || sig_minus != base_sig {
                skipped += 1;
                continue;
            }
            let gn = (plus - minus) / (2.0 * opts.eps);
            diff2 += (ga[i] - gn).powi(2);
            a2 += ga[i] * ga[i];
            n2 += gn * gn;
            max_abs = max_abs.max((ga[i] - gn).abs());
            checked += 1;
        }
        out.push(BlockError {
            block: name.clone(),
            rel_err: diff2.sqrt() / (a2.sqrt() + n2.sqrt()).max(1e-8),
            max_abs_diff: max_abs,
            checked,
            skipped,
        });
    }
    Ok(out)
}
