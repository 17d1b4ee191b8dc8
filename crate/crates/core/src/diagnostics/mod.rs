//! Numerical checks of the duality formula and of the identities and bounds
//! it implies for block-decomposed posteriors.

mod duality;
mod functional;
mod information;
mod report;
mod squash;

pub use duality::{
    duality_gap, duality_suite, trial_passes, DualityFamily, DualityProblem, DualityTrial, GAP_FLOOR,
    OPTIMUM_GAP_CEILING, SUITE_GRID_POINTS,
};
pub use functional::{
    block_duality_problem, concavity_probe, functional_f, functional_suite, random_candidate, FunctionalSuite,
};
pub use information::{information_equality_check, InformationRecord};
pub use report::{build_report, BlockReport, Check, DiagnosticsReport, KernelSummary, McEstimates, Relation};
pub use squash::{
    factor_kl, kl_lower_bound, squash_pointwise_check, squashing_constant, KlBound, SquashRecord,
};

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::Factor;
use crate::model::{AnalyticMarginals, Support};
use crate::quadrature::{BlockGrid, Rule1d, MAX_PRODUCT_POINTS};

/// Grid sizes, suite sizes and seeds for a diagnostics run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosticsConfig {
    /// Nodes for one-dimensional block integrals.
    pub grid_points_1d: usize,
    /// Nodes per coordinate for tensor-product integrals.
    pub grid_points_nd: usize,
    /// Nodes per coordinate for the pointwise squashing check.
    pub squash_grid_points: usize,
    /// Random candidate densities per block and complement point.
    pub candidates: usize,
    /// Random mixtures per block and complement point.
    pub mixtures: usize,
    pub seed: u64,
    /// Explicit points `θ` whose complements fix the functional; the block's
    /// own entries are ignored.
    pub complement_points: Vec<Vec<f64>>,
    /// Additional complement points drawn at random.
    pub random_complement_points: usize,
    /// Largest accepted change of a factor under one more coordinate update.
    pub fixed_point_tolerance: f64,
    /// Standard errors allowed between Monte Carlo and reference values.
    pub mc_standard_errors: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            grid_points_1d: 4097,
            grid_points_nd: 513,
            squash_grid_points: 1001,
            candidates: 50,
            mixtures: 100,
            seed: 0,
            complement_points: Vec::new(),
            random_complement_points: 2,
            fixed_point_tolerance: 1e-8,
            mc_standard_errors: 3.0,
        }
    }
}

impl DiagnosticsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_points_1d < 2 || self.grid_points_nd < 2 || self.squash_grid_points < 2 {
            return Err(Error::InvalidConfig("grid sizes must be at least 2".into()));
        }
        if self.complement_points.is_empty() && self.random_complement_points == 0 {
            return Err(Error::InvalidConfig(
                "at least one complement point is needed for the functional checks".into(),
            ));
        }
        if !(self.fixed_point_tolerance > 0.0) || !(self.mc_standard_errors > 0.0) {
            return Err(Error::InvalidConfig(
                "fixed_point_tolerance and mc_standard_errors must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Nodes per coordinate for a block of dimension `dim`.
    pub fn points_for(&self, dim: usize) -> usize {
        if dim == 1 {
            self.grid_points_1d
        } else {
            self.grid_points_nd
        }
    }
}

/// Block grid widened to cover the bulk of every factor in `factors`.
pub fn covering_grid(
    model: &dyn AnalyticMarginals,
    block: usize,
    factors: &[&Factor],
    points: usize,
) -> Result<BlockGrid> {
    let base = model.block_grid(block, points)?;
    if let Support::Finite(_) = model.support(block) {
        return Ok(base);
    }
    let dim = base.dim();
    if (points as f64).powi(dim as i32) > MAX_PRODUCT_POINTS as f64 {
        return Err(Error::Unsupported(format!(
            "a {dim}-dimensional grid with {points} points per axis is too large"
        )));
    }
    let mut axes = Vec::with_capacity(dim);
    for (c, axis) in base.axes().iter().enumerate() {
        let (mut lo, mut hi) = (axis.lo(), axis.hi());
        for f in factors {
            let (flo, fhi) = f.effective_range()[c];
            lo = lo.min(flo);
            hi = hi.max(fhi);
        }
        axes.push(Rule1d::trapezoid(lo, hi, points)?);
    }
    Ok(BlockGrid::new(axes))
}

/// Density values of `factor` on `grid`, renormalized so that the weighted
/// sum is one.
pub fn tabulate_normalized(factor: &Factor, grid: &BlockGrid) -> Result<Vec<f64>> {
    let logs = factor.tabulate(grid);
    let z = grid.log_integral(&logs);
    if !z.is_finite() {
        return Err(Error::InvalidDensity(format!(
            "{} density has no mass on the working grid",
            factor.kind()
        )));
    }
    Ok(logs.iter().map(|l| (l - z).exp()).collect())
}

/// A point whose every complement has positive posterior density, drawn
/// block-wise from the marginals.
pub fn random_complement_point(model: &dyn AnalyticMarginals, rng: &mut ChaCha20Rng) -> Result<Vec<f64>> {
    let dec = model.decomposition();
    let marginals = (0..dec.num_blocks())
        .map(|b| model.block_marginal(b))
        .collect::<Result<Vec<_>>>()?;
    for _ in 0..10_000 {
        let mut theta = Vec::with_capacity(dec.total_dim());
        for m in &marginals {
            theta.extend(m.sample(rng));
        }
        if (0..dec.num_blocks()).all(|b| model.log_complement_marginal(b, &theta).is_finite()) {
            return Ok(theta);
        }
    }
    Err(Error::InvalidModel(
        "could not find a point with positive complement density".into(),
    ))
}

pub(crate) fn uniform01(rng: &mut ChaCha20Rng) -> f64 {
    rng.random::<f64>()
}
