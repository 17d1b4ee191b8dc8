//! Information equalities `I(θᵢ;θ₋ᵢ) = H(θ₋ᵢ) − H(θ₋ᵢ|θᵢ) = H(θᵢ) − H(θᵢ|θ₋ᵢ)`
//! with every term computed by its own quadrature or enumeration.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{AnalyticMarginals, Support};
use crate::quadrature::{visit_product, BlockGrid};

/// Nodes visited by one joint traversal are capped at this many.
const JOINT_POINT_BUDGET: f64 = 4_194_304.0;

/// Residual tolerances for continuous quadrature and exact enumeration.
pub const CONTINUOUS_TOLERANCE: f64 = 1e-8;
pub const DISCRETE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InformationRecord {
    /// `I(θᵢ;θ₋ᵢ)`: closed form where the model has one, else quadrature.
    pub mutual_information: f64,
    /// `I` by joint quadrature of `log π − log π(θᵢ) − log π(θ₋ᵢ)`.
    pub mutual_information_quadrature: f64,
    pub entropy_complement: f64,
    pub cond_entropy_complement: f64,
    pub entropy_block: f64,
    pub cond_entropy_block: f64,
    /// `|I − (H(θ₋ᵢ) − H(θ₋ᵢ|θᵢ))|`.
    pub residual: f64,
    /// `|I − (H(θᵢ) − H(θᵢ|θ₋ᵢ))|`.
    pub symmetric_residual: f64,
    pub tolerance: f64,
    /// Nodes per continuous coordinate actually used.
    pub points_per_axis: usize,
}

impl InformationRecord {
    pub fn passed(&self) -> bool {
        self.residual <= self.tolerance && self.symmetric_residual <= self.tolerance
    }
}

/// `−Σ w π log π` over `parts`, with `log_density` evaluated at each filled point.
fn entropy_over<F>(model: &dyn AnalyticMarginals, parts: &[(usize, &BlockGrid)], log_density: F) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let dec = model.decomposition();
    let mut theta = vec![0.0; dec.total_dim()];
    let mut h = 0.0;
    visit_product(dec, parts, &mut theta, |t, idx| {
        let lp = log_density(t);
        if lp == f64::NEG_INFINITY {
            return Ok(());
        }
        let lw: f64 = idx.iter().zip(parts).map(|(&k, (_, g))| g.log_weight(k)).sum();
        h -= (lw + lp).exp() * lp;
        Ok(())
    })?;
    Ok(h)
}

/// Check both information equalities for block `block`. Continuous axes use
/// `points_nd` nodes unless the joint grid would exceed the traversal budget.
pub fn information_equality_check(
    model: &dyn AnalyticMarginals,
    block: usize,
    points_nd: usize,
) -> Result<InformationRecord> {
    let dec = model.decomposition();
    dec.check_block(block)?;
    let continuous_dims: usize = (0..dec.num_blocks())
        .filter(|&b| matches!(model.support(b), Support::Real))
        .map(|b| dec.block_dim(b))
        .sum();
    let points = if continuous_dims == 0 {
        points_nd
    } else {
        let cap = JOINT_POINT_BUDGET.powf(1.0 / continuous_dims as f64).floor() as usize;
        points_nd.min(cap).max(2)
    };
    let grids: Vec<BlockGrid> = (0..dec.num_blocks())
        .map(|b| model.block_grid(b, points))
        .collect::<Result<_>>()?;
    let all: Vec<(usize, &BlockGrid)> = grids.iter().enumerate().collect();
    let complement: Vec<(usize, &BlockGrid)> = all.iter().copied().filter(|(b, _)| *b != block).collect();
    let own = [(block, &grids[block])];

    let entropy_complement = entropy_over(model, &complement, |t| model.log_complement_marginal(block, t))?;
    let entropy_block = entropy_over(model, &own, |t| model.log_block_marginal(block, t))?;

    let mut theta = vec![0.0; dec.total_dim()];
    let (mut cond_c, mut cond_b, mut mi_q) = (0.0, 0.0, 0.0);
    visit_product(dec, &all, &mut theta, |t, idx| {
        let lp = model.log_posterior(t);
        if lp == f64::NEG_INFINITY {
            return Ok(());
        }
        let lw: f64 = idx.iter().zip(&all).map(|(&k, (_, g))| g.log_weight(k)).sum();
        let m = (lw + lp).exp();
        let lb = model.log_block_marginal(block, t);
        let lc = model.log_complement_marginal(block, t);
        cond_c -= m * (lp - lb);
        cond_b -= m * (lp - lc);
        mi_q += m * (lp - lb - lc);
        Ok(())
    })?;

    let mutual_information = match model.closed_form_mutual_information(block) {
        Some(r) => r?,
        None => mi_q,
    };
    let tolerance = if continuous_dims == 0 {
        DISCRETE_TOLERANCE
    } else {
        CONTINUOUS_TOLERANCE
    };
    Ok(InformationRecord {
        mutual_information,
        mutual_information_quadrature: mi_q,
        entropy_complement,
        cond_entropy_complement: cond_c,
        entropy_block,
        cond_entropy_block: cond_b,
        residual: (mutual_information - (entropy_complement - cond_c)).abs(),
        symmetric_residual: (mutual_information - (entropy_block - cond_b)).abs(),
        tolerance,
        points_per_axis: points,
    })
}
