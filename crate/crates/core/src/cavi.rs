//! Coordinate-ascent variational inference over the mean-field family.
//!
//! Each coordinate update sets `q(θᵢ) ∝ exp E_{q(θ₋ᵢ)}[log π(θᵢ | θ₋ᵢ)]`.
//! Models that keep this update in a parametric family supply it in closed
//! form; otherwise the expectation is taken by quadrature (or summation) over
//! the other factors' grids and the result is tabulated on block `i`'s grid.

use serde::{Deserialize, Serialize};

use crate::discrete::DiscreteFactor;
use crate::error::{Error, Result};
use crate::factor::{Factor, TabulatedFactor};
use crate::gaussian::GaussianFactor;
use crate::model::{Support, TargetModel};
use crate::quadrature::{visit_product, BlockGrid, LogSumExp, Rule1d};

/// Nodes per continuous coordinate on the generic path.
pub const DEFAULT_GRID_POINTS: usize = 513;

/// How the starting factors are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaviInit {
    /// Exact marginals for analytic continuous models, uniform for discrete
    /// models, standard normal otherwise.
    Default,
    ExactMarginals,
    /// Uniform pmf on finite blocks, flat density on the block grid otherwise.
    Uniform,
    /// `N(0, I)` on every block; continuous models only.
    StandardNormal,
    Factors(Vec<Factor>),
}

/// Which update rule to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum UpdatePath {
    /// Closed form when the model offers one, grid otherwise.
    Analytic,
    /// Always the grid update, with `points` nodes per continuous coordinate.
    Grid { points: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaviConfig {
    pub max_cycles: usize,
    pub tolerance: f64,
    #[serde(default = "default_init")]
    pub init: CaviInit,
    #[serde(default = "default_path")]
    pub path: UpdatePath,
    /// Nodes per continuous coordinate for grid updates, grid-based objectives
    /// and flat initial factors.
    #[serde(default = "default_points")]
    pub grid_points: usize,
}

fn default_init() -> CaviInit {
    CaviInit::Default
}

fn default_path() -> UpdatePath {
    UpdatePath::Analytic
}

fn default_points() -> usize {
    DEFAULT_GRID_POINTS
}

impl CaviConfig {
    pub fn new(max_cycles: usize, tolerance: f64) -> Self {
        Self {
            max_cycles,
            tolerance,
            init: default_init(),
            path: default_path(),
            grid_points: default_points(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_cycles == 0 {
            return Err(Error::InvalidConfig("max_cycles must be positive".into()));
        }
        if !(self.tolerance > 0.0) || !self.tolerance.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "tolerance must be a positive number, got {}",
                self.tolerance
            )));
        }
        if self.grid_points < 2 {
            return Err(Error::InvalidConfig("grid_points must be at least 2".into()));
        }
        if let UpdatePath::Grid { points } = self.path {
            if points < 2 {
                return Err(Error::InvalidConfig("grid points must be at least 2".into()));
            }
        }
        Ok(())
    }

    fn update_points(&self) -> usize {
        match self.path {
            UpdatePath::Grid { points } => points,
            UpdatePath::Analytic => self.grid_points,
        }
    }
}

/// One factor per block together with the run history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldState {
    pub factors: Vec<Factor>,
    /// Completed cycles.
    pub cycles: usize,
    /// `KL(∏ q ‖ π)` after initialization and after every single-block update.
    /// Empty when the objective cannot be evaluated for the model.
    pub objective_history: Vec<f64>,
    pub converged: bool,
    /// Largest factor change in the last cycle.
    pub last_change: f64,
}

impl MeanFieldState {
    pub fn from_factors(factors: Vec<Factor>) -> Self {
        Self {
            factors,
            cycles: 0,
            objective_history: Vec::new(),
            converged: false,
            last_change: f64::INFINITY,
        }
    }

    pub fn check_against(&self, model: &dyn TargetModel) -> Result<()> {
        check_factors(model, &self.factors)
    }
}

fn check_factors(model: &dyn TargetModel, factors: &[Factor]) -> Result<()> {
    let dec = model.decomposition();
    if factors.len() != dec.num_blocks() {
        return Err(Error::DimensionMismatch {
            expected: dec.num_blocks(),
            found: factors.len(),
        });
    }
    for (b, f) in factors.iter().enumerate() {
        if f.dim() != dec.block_dim(b) {
            return Err(Error::DimensionMismatch {
                expected: dec.block_dim(b),
                found: f.dim(),
            });
        }
        match (model.support(b), f) {
            (Support::Finite(n), Factor::Discrete(d)) if d.len() != n => {
                return Err(Error::DimensionMismatch { expected: n, found: d.len() })
            }
            (Support::Finite(_), Factor::Gaussian(_)) => {
                return Err(Error::SupportViolation(format!(
                    "block {} is finite but its factor is Gaussian",
                    b + 1
                )))
            }
            (Support::Real, Factor::Discrete(_)) => {
                return Err(Error::SupportViolation(format!(
                    "block {} is continuous but its factor is discrete",
                    b + 1
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

/// Starting factors for `init`.
pub fn initial_factors(model: &dyn TargetModel, init: &CaviInit, points: usize) -> Result<Vec<Factor>> {
    let dec = model.decomposition();
    let k = dec.num_blocks();
    let factors = match init {
        CaviInit::Default => {
            let caps = model.capabilities();
            let resolved = if caps.is_discrete {
                CaviInit::Uniform
            } else if caps.has_analytic_marginals {
                CaviInit::ExactMarginals
            } else {
                CaviInit::StandardNormal
            };
            return initial_factors(model, &resolved, points);
        }
        CaviInit::ExactMarginals => {
            let a = model.as_analytic().ok_or_else(|| {
                Error::Unsupported("exact-marginal initialization needs analytic marginals".into())
            })?;
            (0..k).map(|b| a.block_marginal(b)).collect::<Result<Vec<_>>>()?
        }
        CaviInit::Uniform => (0..k)
            .map(|b| match model.support(b) {
                Support::Finite(n) => Ok(Factor::Discrete(DiscreteFactor::uniform(n))),
                Support::Real => {
                    let grid = model.block_grid(b, points)?;
                    let flat = vec![0.0; grid.len()];
                    Ok(Factor::Tabulated(TabulatedFactor::from_log_unnormalized(grid, flat)?))
                }
            })
            .collect::<Result<Vec<_>>>()?,
        CaviInit::StandardNormal => (0..k)
            .map(|b| match model.support(b) {
                Support::Real => {
                    let d = dec.block_dim(b);
                    Ok(Factor::Gaussian(GaussianFactor::new(
                        nalgebra::DVector::zeros(d),
                        nalgebra::DMatrix::identity(d, d),
                    )?))
                }
                Support::Finite(_) => Err(Error::Unsupported(format!(
                    "standard-normal initialization on finite block {}",
                    b + 1
                ))),
            })
            .collect::<Result<Vec<_>>>()?,
        CaviInit::Factors(f) => f.clone(),
    };
    check_factors(model, &factors)?;
    Ok(factors)
}

/// Grid carrying a factor's mass, with the factor's log probabilities on it
/// (density times weight, normalized to sum to one).
pub(crate) fn factor_masses(factor: &Factor, points: usize) -> Result<(BlockGrid, Vec<f64>)> {
    let grid = factor.reference_grid(points)?;
    let mut lp: Vec<f64> = factor
        .tabulate(&grid)
        .iter()
        .zip(grid.log_weights())
        .map(|(d, w)| d + w)
        .collect();
    let mut acc = LogSumExp::default();
    lp.iter().for_each(|&v| acc.add(v));
    let z = acc.value();
    if !z.is_finite() {
        return Err(Error::InvalidDensity(format!(
            "{} factor has no mass on its reference grid",
            factor.kind()
        )));
    }
    lp.iter_mut().for_each(|v| *v -= z);
    Ok((grid, lp))
}

/// `e(x) = E_{q(θ₋ᵢ)}[log π(x | θ₋ᵢ)]` at every node `x` of `grid`.
///
/// Complement expectations run over the other factors' reference grids.
/// A `-inf` conditional under positive complement mass is an error.
pub fn expected_log_conditional(
    model: &dyn TargetModel,
    factors: &[Factor],
    block: usize,
    grid: &BlockGrid,
    points: usize,
) -> Result<Vec<f64>> {
    let dec = model.decomposition();
    dec.check_block(block)?;
    check_factors(model, factors)?;
    let mut grids = Vec::new();
    let mut masses = Vec::new();
    for (b, f) in factors.iter().enumerate() {
        if b == block {
            continue;
        }
        let (g, lp) = factor_masses(f, points)?;
        grids.push((b, g));
        masses.push(lp);
    }
    let parts: Vec<(usize, &BlockGrid)> = grids.iter().map(|(b, g)| (*b, g)).collect();
    let mut theta = vec![0.0; dec.total_dim()];
    let mut e = vec![0.0; grid.len()];
    let range = dec.range(block);
    visit_product(dec, &parts, &mut theta, |t, idx| {
        let lw: f64 = idx.iter().zip(&masses).map(|(&k, m)| m[k]).sum();
        let w = lw.exp();
        if w == 0.0 {
            return Ok(());
        }
        let mut t = t.to_vec();
        for (k, ek) in e.iter_mut().enumerate() {
            t[range.clone()].copy_from_slice(grid.point(k));
            let lc = model.log_full_conditional(block, &t)?;
            if lc == f64::NEG_INFINITY {
                return Err(Error::DivergentExpectation {
                    block: block + 1,
                    detail: format!(
                        "log full conditional is -inf at a node where the other factors have mass {w:e}"
                    ),
                });
            }
            *ek += w * lc;
        }
        Ok(())
    })
    .map_err(|err| match err {
        Error::ZeroMass { .. } => Error::DivergentExpectation {
            block: block + 1,
            detail: "the other factors put mass on a zero-probability conditioning event".into(),
        },
        other => other,
    })?;
    Ok(e)
}

/// Optimal coordinate update by quadrature/summation over the model's grid for `block`.
pub fn grid_update(model: &dyn TargetModel, factors: &[Factor], block: usize, points: usize) -> Result<Factor> {
    let grid = model.block_grid(block, points)?;
    let e = expected_log_conditional(model, factors, block, &grid, points)?;
    match model.support(block) {
        Support::Finite(_) => {
            let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = e.iter().map(|v| (v - max).exp()).collect();
            Ok(Factor::Discrete(DiscreteFactor::from_weights(&w)?))
        }
        Support::Real => Ok(Factor::Tabulated(TabulatedFactor::from_log_unnormalized(grid, e)?)),
    }
}

/// `log ∫ exp E_{q(θ₋ᵢ)}[log π(θᵢ | θ₋ᵢ)] dθᵢ`, the normalizer of the optimal coordinate factor.
pub fn log_update_normalizer(
    model: &dyn TargetModel,
    factors: &[Factor],
    block: usize,
    points: usize,
) -> Result<f64> {
    let grid = model.block_grid(block, points)?;
    let e = expected_log_conditional(model, factors, block, &grid, points)?;
    Ok(grid.log_integral(&e))
}

/// One coordinate update of block `block` given the current factors.
pub fn cavi_update(
    model: &dyn TargetModel,
    factors: &[Factor],
    block: usize,
    path: UpdatePath,
    points: usize,
) -> Result<Factor> {
    model.decomposition().check_block(block)?;
    if path == UpdatePath::Analytic {
        if let Some(r) = model.closed_form_cavi_update(block, factors) {
            return r;
        }
    }
    let points = match path {
        UpdatePath::Grid { points } => points,
        UpdatePath::Analytic => points,
    };
    grid_update(model, factors, block, points)
}

/// `KL(∏ qᵢ ‖ π)`: closed form if available, else by summation over the
/// product of the factors' grids using the model's evidence.
pub fn kl_objective(model: &dyn TargetModel, factors: &[Factor], points: usize) -> Result<f64> {
    check_factors(model, factors)?;
    if let Some(r) = model.closed_form_kl_objective(factors) {
        return r;
    }
    let log_z = model.log_evidence().ok_or(Error::UnnormalizedTarget)?;
    let dec = model.decomposition();
    let mut grids = Vec::new();
    let mut masses = Vec::new();
    for (b, f) in factors.iter().enumerate() {
        let (g, lp) = factor_masses(f, points)?;
        grids.push((b, g));
        masses.push(lp);
    }
    let parts: Vec<(usize, &BlockGrid)> = grids.iter().map(|(b, g)| (*b, g)).collect();
    let mut theta = vec![0.0; dec.total_dim()];
    let mut kl = 0.0;
    visit_product(dec, &parts, &mut theta, |t, idx| {
        let mut lp = 0.0;
        let mut log_q = 0.0;
        for (j, &k) in idx.iter().enumerate() {
            lp += masses[j][k];
            log_q += masses[j][k] - grids[j].1.log_weight(k);
        }
        if lp == f64::NEG_INFINITY {
            return Ok(());
        }
        let log_pi = model.log_unnormalized_posterior(t) - log_z;
        kl += lp.exp() * (log_q - log_pi);
        Ok(())
    })?;
    Ok(kl.max(0.0))
}

/// Run coordinate ascent from the configured starting point.
pub fn cavi_run(model: &dyn TargetModel, cfg: &CaviConfig) -> Result<MeanFieldState> {
    cfg.validate()?;
    let factors = initial_factors(model, &cfg.init, cfg.grid_points)?;
    cavi_run_from(model, cfg, factors)
}

pub fn cavi_run_from(model: &dyn TargetModel, cfg: &CaviConfig, factors: Vec<Factor>) -> Result<MeanFieldState> {
    cfg.validate()?;
    check_factors(model, &factors)?;
    let points = cfg.update_points();
    let mut state = MeanFieldState::from_factors(factors);
    let mut track = true;
    let mut record = |state: &mut MeanFieldState| -> Result<()> {
        if !track {
            return Ok(());
        }
        match kl_objective(model, &state.factors, points) {
            Ok(v) => state.objective_history.push(v),
            Err(Error::UnnormalizedTarget) | Err(Error::Unsupported(_)) => {
                track = false;
                state.objective_history.clear();
            }
            Err(e) => return Err(e),
        }
        Ok(())
    };
    record(&mut state)?;
    for _ in 0..cfg.max_cycles {
        let mut change: f64 = 0.0;
        for block in 0..model.decomposition().num_blocks() {
            let new = cavi_update(model, &state.factors, block, cfg.path, points)?;
            change = change.max(new.max_abs_change(&state.factors[block]));
            state.factors[block] = new;
            record(&mut state)?;
        }
        state.cycles += 1;
        state.last_change = change;
        if change < cfg.tolerance {
            state.converged = true;
            break;
        }
    }
    Ok(state)
}

/// Largest change any single coordinate update would make to `state`.
pub fn fixed_point_defect(model: &dyn TargetModel, factors: &[Factor], path: UpdatePath, points: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for block in 0..model.decomposition().num_blocks() {
        let new = cavi_update(model, factors, block, path, points)?;
        worst = worst.max(new.max_abs_change(&factors[block]));
    }
    Ok(worst)
}

/// Flat density on a block grid; convenient for tests and initial factors.
pub fn flat_factor(grid: BlockGrid) -> Result<Factor> {
    let n = grid.len();
    Ok(Factor::Tabulated(TabulatedFactor::from_log_unnormalized(grid, vec![0.0; n])?))
}

/// Trapezoid grid on `[lo, hi]` as a one-dimensional block grid.
pub fn interval_grid(lo: f64, hi: f64, points: usize) -> Result<BlockGrid> {
    Ok(BlockGrid::one_dimensional(Rule1d::trapezoid(lo, hi, points)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discrete::DiscreteTarget;
    use crate::gaussian::GaussianTarget;
    use approx::assert_abs_diff_eq;

    fn gauss(m: f64, v: f64) -> Factor {
        Factor::Gaussian(GaussianFactor::univariate(m, v).unwrap())
    }

    #[test]
    fn independent_target_recovers_marginal_in_one_step() {
        let t = GaussianTarget::standard_bivariate(0.0).unwrap();
        let f = [gauss(3.0, 0.2), gauss(-2.0, 5.0)];
        let up = cavi_update(&t, &f, 0, UpdatePath::Analytic, 513).unwrap();
        let g = up.as_gaussian().unwrap();
        assert_abs_diff_eq!(g.mean()[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.variance(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn grid_update_matches_closed_form() {
        let t = GaussianTarget::standard_bivariate(0.5).unwrap();
        let f = [gauss(0.0, 1.0), gauss(0.3, 0.75)];
        let closed = cavi_update(&t, &f, 0, UpdatePath::Analytic, 513).unwrap();
        assert_abs_diff_eq!(closed.as_gaussian().unwrap().mean()[0], 0.15, epsilon = 1e-15);
        let grid = cavi_update(&t, &f, 0, UpdatePath::Grid { points: 513 }, 513).unwrap();
        let Factor::Tabulated(tab) = &grid else { panic!("expected a tabulated factor") };
        let worst = (0..tab.grid().len())
            .map(|k| {
                let x = tab.grid().point(k);
                (tab.log_values()[k].exp() - closed.log_density(x).exp()).abs()
            })
            .fold(0.0, f64::max);
        assert!(worst < 1e-10, "{worst}");
    }

    #[test]
    fn fixed_point_is_fixed_under_grid_update() {
        let t = GaussianTarget::standard_bivariate(0.9).unwrap();
        let q: Vec<Factor> = (0..2)
            .map(|b| Factor::Gaussian(t.gaussian_cavi_fixed_point(b).unwrap()))
            .collect();
        for b in 0..2 {
            let up = grid_update(&t, &q, b, 513).unwrap();
            let Factor::Tabulated(tab) = &up else { panic!() };
            for k in 0..tab.grid().len() {
                let x = tab.grid().point(k);
                assert!((tab.log_values()[k].exp() - q[b].log_density(x).exp()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn discrete_grid_update_matches_enumeration() {
        let t = DiscreteTarget::new(vec![2, 2], vec![0.4, 0.1, 0.2, 0.3]).unwrap();
        let u = DiscreteFactor::uniform(2);
        let f = [Factor::Discrete(u.clone()), Factor::Discrete(u.clone())];
        let g = cavi_update(&t, &f, 0, UpdatePath::Analytic, 0).unwrap();
        let e = t.enum_cavi_update(&[u.clone(), u], 0).unwrap();
        assert!(g.as_discrete().unwrap().total_variation(&e) <= 1e-15);
    }

    #[test]
    fn divergent_expectation_names_block() {
        let t = DiscreteTarget::new(vec![2, 2], vec![0.5, 0.2, 0.0, 0.3]).unwrap();
        let u = Factor::Discrete(DiscreteFactor::uniform(2));
        let err = cavi_update(&t, &[u.clone(), u], 0, UpdatePath::Analytic, 0).unwrap_err();
        assert!(matches!(err, Error::DivergentExpectation { block: 1, .. }), "{err}");
    }

    #[test]
    fn rho_half_converges_to_fixed_point() {
        let t = GaussianTarget::standard_bivariate(0.5).unwrap();
        let s = cavi_run(&t, &CaviConfig::new(50, 1e-10)).unwrap();
        assert!(s.converged);
        assert!(s.cycles <= 50);
        for f in &s.factors {
            let g = f.as_gaussian().unwrap();
            assert_abs_diff_eq!(g.mean()[0], 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(g.variance(), 0.75, epsilon = 1e-12);
        }
        assert_eq!(s.objective_history.len(), 1 + 2 * s.cycles);
        assert!(s.objective_history.windows(2).all(|w| w[1] <= w[0] + 1e-10));
        assert!(*s.objective_history.last().unwrap() > 0.0);
    }

    #[test]
    fn non_convergence_is_flagged() {
        let t = GaussianTarget::standard_bivariate(0.9).unwrap();
        let s = cavi_run(&t, &CaviConfig::new(1, 1e-10)).unwrap();
        assert!(!s.converged);
        assert_eq!(s.cycles, 1);
    }

    #[test]
    fn factorized_discrete_converges_in_one_cycle() {
        let m0 = DiscreteFactor::new(vec![0.2, 0.8]).unwrap();
        let m1 = DiscreteFactor::new(vec![0.1, 0.6, 0.3]).unwrap();
        let t = DiscreteTarget::product(&[m0.clone(), m1.clone()]).unwrap();
        let mut cfg = CaviConfig::new(10, 1e-12);
        let s = cavi_run(&t, &cfg).unwrap();
        assert!(s.converged);
        // one cycle reaches the marginals, the next confirms no change
        assert!(s.cycles <= 2);
        assert!(s.factors[0].as_discrete().unwrap().total_variation(&m0) < 1e-14);
        assert!(s.factors[1].as_discrete().unwrap().total_variation(&m1) < 1e-14);
        cfg.max_cycles = 1;
        let one = cavi_run(&t, &cfg).unwrap();
        assert!(one.factors[1].as_discrete().unwrap().total_variation(&m1) < 1e-14);
        assert_abs_diff_eq!(*one.objective_history.last().unwrap(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn invalid_tolerance_rejected() {
        let t = GaussianTarget::standard_bivariate(0.5).unwrap();
        assert!(cavi_run(&t, &CaviConfig::new(10, 0.0)).is_err());
        assert!(cavi_run(&t, &CaviConfig::new(10, -1.0)).is_err());
        assert!(cavi_run(&t, &CaviConfig::new(0, 1e-6)).is_err());
    }

    #[test]
    fn grid_objective_matches_closed_form() {
        let t = GaussianTarget::standard_bivariate(0.5).unwrap();
        let f = [gauss(0.0, 0.75), gauss(0.0, 0.75)];
        let closed = kl_objective(&t, &f, 513).unwrap();
        let tab: Vec<Factor> = f
            .iter()
            .enumerate()
            .map(|(b, g)| Factor::Tabulated(TabulatedFactor::from_factor(g, t.block_grid(b, 513).unwrap()).unwrap()))
            .collect();
        let grid = kl_objective(&t, &tab, 513).unwrap();
        assert_abs_diff_eq!(closed, grid, epsilon = 1e-8);
    }

    #[test]
    fn generic_path_run_agrees_with_analytic() {
        let t = GaussianTarget::standard_bivariate(0.5).unwrap();
        let mut cfg = CaviConfig::new(200, 1e-10);
        cfg.path = UpdatePath::Grid { points: 257 };
        cfg.grid_points = 257;
        let s = cavi_run(&t, &cfg).unwrap();
        assert!(s.converged);
        assert!(s.objective_history.windows(2).all(|w| w[1] <= w[0] + 1e-10));
        let fp = Factor::Gaussian(t.gaussian_cavi_fixed_point(0).unwrap());
        let Factor::Tabulated(tab) = &s.factors[0] else { panic!() };
        for k in (0..tab.grid().len()).step_by(16) {
            let x = tab.grid().point(k);
            assert!((tab.log_values()[k].exp() - fp.log_density(x).exp()).abs() < 1e-8);
        }
    }
}
