//! The block functional `F_i{q} = E_q[log π(θ₋ᵢ|θᵢ)] − KL(q ‖ π(θᵢ))` at a
//! fixed complement `θ₋ᵢ`, its maximum `log π(θ₋ᵢ)` and its concavity.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::duality::{duality_gap, DualityProblem};
use super::squash::factor_kl;
use super::{covering_grid, tabulate_normalized, uniform01, DiagnosticsConfig};
use crate::discrete::DiscreteFactor;
use crate::error::{Error, Result};
use crate::factor::Factor;
use crate::gaussian::GaussianFactor;
use crate::model::{AnalyticMarginals, Support};
use crate::quadrature::BlockGrid;

/// `F` for the density with values `dens` on `grid` (weighted sum one).
fn functional_on_grid(
    model: &dyn AnalyticMarginals,
    block: usize,
    theta: &[f64],
    grid: &BlockGrid,
    dens: &[f64],
) -> Result<f64> {
    let range = model.decomposition().range(block);
    let mut t = theta.to_vec();
    let mut s = 0.0;
    for (k, &d) in dens.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        t[range.clone()].copy_from_slice(grid.point(k));
        let lb = model.log_block_marginal(block, &t);
        if lb == f64::NEG_INFINITY {
            return Err(Error::SupportViolation(format!(
                "candidate density for block {} has mass where the block marginal vanishes",
                block + 1
            )));
        }
        let lc = model.log_complement_conditional(block, &t);
        s += grid.log_weight(k).exp() * d * (lc + lb - d.ln());
    }
    Ok(s)
}

fn checked_reference(model: &dyn AnalyticMarginals, block: usize, theta: &[f64]) -> Result<f64> {
    let dec = model.decomposition();
    dec.check_block(block)?;
    dec.check_len(theta.len())?;
    let r = model.log_complement_marginal(block, theta);
    if !r.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "the complement of block {} at the given point has zero posterior density",
            block + 1
        )));
    }
    Ok(r)
}

/// `F_i{q}` at the complement of `theta`, by quadrature/summation over a grid
/// covering `q`, the block marginal and the full conditional.
pub fn functional_f(
    model: &dyn AnalyticMarginals,
    block: usize,
    theta: &[f64],
    q: &Factor,
    points: usize,
) -> Result<f64> {
    checked_reference(model, block, theta)?;
    let cond = model.full_conditional(block, theta)?;
    let grid = covering_grid(model, block, &[q, &cond], points)?;
    let dens = tabulate_normalized(q, &grid)?;
    functional_on_grid(model, block, theta, &grid, &dens)
}

/// `F(a·p + (1−a)·q) − [a·F(p) + (1−a)·F(q)]`, all on one grid.
pub fn concavity_probe(
    model: &dyn AnalyticMarginals,
    block: usize,
    theta: &[f64],
    p: &Factor,
    q: &Factor,
    a: f64,
    points: usize,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::InvalidConfig(format!("mixture weight {a} is outside [0, 1]")));
    }
    checked_reference(model, block, theta)?;
    let cond = model.full_conditional(block, theta)?;
    let grid = covering_grid(model, block, &[p, q, &cond], points)?;
    let dp = tabulate_normalized(p, &grid)?;
    let dq = tabulate_normalized(q, &grid)?;
    let mix: Vec<f64> = dp.iter().zip(&dq).map(|(x, y)| a * x + (1.0 - a) * y).collect();
    let mass: f64 = mix
        .iter()
        .enumerate()
        .map(|(k, m)| grid.log_weight(k).exp() * m)
        .sum();
    if (mass - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidDensity(format!("mixture has mass {mass} on the grid")));
    }
    let fm = functional_on_grid(model, block, theta, &grid, &mix)?;
    let fp = functional_on_grid(model, block, theta, &grid, &dp)?;
    let fq = functional_on_grid(model, block, theta, &grid, &dq)?;
    Ok(fm - (a * fp + (1.0 - a) * fq))
}

/// Duality problem with base density `π(θᵢ)`, test function
/// `h(θᵢ) = log π(θ₋ᵢ|θᵢ)` at the complement of `theta`, and candidate `q`.
/// Its log-partition is `log π(θ₋ᵢ)` and its objective at `q` is `F_i{q}`.
pub fn block_duality_problem(
    model: &dyn AnalyticMarginals,
    block: usize,
    theta: &[f64],
    q: &Factor,
    points: usize,
) -> Result<DualityProblem> {
    checked_reference(model, block, theta)?;
    let cond = model.full_conditional(block, theta)?;
    let marginal = model.block_marginal(block)?;
    let grid = covering_grid(model, block, &[q, &cond, &marginal], points)?;
    let range = model.decomposition().range(block);
    let mut t = theta.to_vec();
    let n = grid.len();
    let mut log_p = Vec::with_capacity(n);
    let mut h = Vec::with_capacity(n);
    for k in 0..n {
        t[range.clone()].copy_from_slice(grid.point(k));
        let lb = model.log_block_marginal(block, &t);
        log_p.push(lb);
        h.push(if lb == f64::NEG_INFINITY {
            0.0
        } else {
            model.log_complement_conditional(block, &t)
        });
    }
    let log_q = q.tabulate(&grid);
    let truncated = matches!(model.support(block), Support::Real);
    DualityProblem::new(grid, &log_p, h, &log_q, truncated)
}

fn dirichlet_on(rng: &mut ChaCha20Rng, mask: &[f64]) -> Result<DiscreteFactor> {
    let w: Vec<f64> = mask
        .iter()
        .map(|&m| if m > 0.0 { -(1.0 - uniform01(rng)).ln() } else { 0.0 })
        .collect();
    DiscreteFactor::from_weights(&w)
}

/// Random candidate on block `block`, absolutely continuous with respect to the
/// block marginal. Gaussian blocks: independent coordinates with mean shifted
/// by `U(-2, 2)` marginal standard deviations and variance scaled by
/// `U(0.25, 4)`. Finite blocks: Dirichlet(1) on the marginal's support.
pub fn random_candidate(model: &dyn AnalyticMarginals, block: usize, rng: &mut ChaCha20Rng) -> Result<Factor> {
    match model.block_marginal(block)? {
        Factor::Gaussian(m) => {
            let d = m.dim();
            let mean = DVector::from_fn(d, |c, _| {
                m.mean()[c] + m.covariance()[(c, c)].sqrt() * rng.random_range(-2.0..=2.0)
            });
            let var = DVector::from_fn(d, |c, _| m.covariance()[(c, c)] * rng.random_range(0.25..=4.0));
            Ok(Factor::Gaussian(GaussianFactor::new(mean, DMatrix::from_diagonal(&var))?))
        }
        Factor::Discrete(m) => Ok(Factor::Discrete(dirichlet_on(rng, m.pmf())?)),
        Factor::Tabulated(_) => Err(Error::Unsupported(
            "random candidates for tabulated marginals".into(),
        )),
    }
}

/// Candidates with `KL(q ‖ full conditional)` at or below this are treated as
/// coinciding with the full conditional.
pub const DISTINCT_KL: f64 = 1e-6;

/// Outcome of the functional checks at one complement point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSuite {
    /// `log π(θ₋ᵢ)`.
    pub log_complement_marginal: f64,
    pub f_at_full_conditional: f64,
    /// Largest `F(q) − log π(θ₋ᵢ)` over the full conditional and the random candidates.
    pub max_excess: f64,
    /// Smallest `log π(θ₋ᵢ) − F(q)` over the random candidates that lie at
    /// least [`DISTINCT_KL`] away from the full conditional.
    pub min_shortfall: f64,
    /// Random candidates closer than [`DISTINCT_KL`] to the full conditional.
    pub near_conditional_candidates: usize,
    pub concavity_min_slack: f64,
    /// Duality gap at the supplied variational factor.
    pub duality_gap: f64,
}

pub fn functional_suite(
    model: &dyn AnalyticMarginals,
    block: usize,
    theta: &[f64],
    factor: &Factor,
    cfg: &DiagnosticsConfig,
    rng: &mut ChaCha20Rng,
) -> Result<FunctionalSuite> {
    let points = cfg.points_for(model.decomposition().block_dim(block));
    let reference = checked_reference(model, block, theta)?;
    let cond = model.full_conditional(block, theta)?;
    let f_cond = functional_f(model, block, theta, &cond, points)?;
    let mut max_excess = f_cond - reference;
    let mut min_shortfall = f64::INFINITY;
    let mut near_conditional_candidates = 0;
    for _ in 0..cfg.candidates {
        let q = random_candidate(model, block, rng)?;
        let f = functional_f(model, block, theta, &q, points)?;
        max_excess = max_excess.max(f - reference);
        let distance = match factor_kl(&q, &cond, points) {
            Ok(kl) => kl,
            Err(Error::SupportViolation(_)) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        if distance > DISTINCT_KL {
            min_shortfall = min_shortfall.min(reference - f);
        } else {
            near_conditional_candidates += 1;
        }
    }
    let mut concavity_min_slack = f64::INFINITY;
    for _ in 0..cfg.mixtures {
        let p = random_candidate(model, block, rng)?;
        let q = random_candidate(model, block, rng)?;
        let a = uniform01(rng);
        concavity_min_slack = concavity_min_slack.min(concavity_probe(model, block, theta, &p, &q, a, points)?);
    }
    let gap = duality_gap(&block_duality_problem(model, block, theta, factor, points)?)?;
    Ok(FunctionalSuite {
        log_complement_marginal: reference,
        f_at_full_conditional: f_cond,
        max_excess,
        min_shortfall,
        near_conditional_candidates,
        concavity_min_slack,
        duality_gap: gap,
    })
}
