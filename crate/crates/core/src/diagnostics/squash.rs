//! Squashing constants `R₋ᵢ` of a mean-field state, the pointwise squashing
//! inequality `R₋ᵢ·qᵢ ≤ π(θᵢ)` and the lower bound on `KL(qᵢ ‖ π(θᵢ))`.

use serde::{Deserialize, Serialize};

use crate::cavi::{factor_masses, log_update_normalizer};
use crate::error::{Error, Result};
use crate::factor::Factor;
use crate::gaussian::gaussian_kl;
use crate::model::{AnalyticMarginals, Support};
use crate::quadrature::{visit_product, BlockGrid, LogSumExp, Rule1d};

/// A raw log term above this counts as positive.
pub const RAW_POSITIVE_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquashRecord {
    /// `log ∫ exp E_{q₋ᵢ}[log π(θᵢ|θ₋ᵢ)] dθᵢ`.
    pub log_numerator: f64,
    /// `KL(∏_{j≠i} qⱼ ‖ π(θ₋ᵢ))`.
    pub kl_complement: f64,
    /// `R₋ᵢ = exp(log_numerator − kl_complement)`.
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlBound {
    /// `log ∫ exp E_{qᵢ}[log π(θ₋ᵢ|θᵢ)] dθ₋ᵢ` before clamping at zero.
    pub raw: f64,
    pub bound: f64,
    /// `KL(qᵢ ‖ π(θᵢ))`, computed without reference to the bound.
    pub kl: f64,
    pub raw_positive: bool,
}

impl KlBound {
    pub fn holds(&self, tolerance: f64) -> bool {
        self.kl >= 0.0 && self.kl >= self.bound - tolerance
    }
}

/// Complement KL: closed form where the model provides one, otherwise a sum
/// over the product of the other factors' grids.
fn complement_kl(model: &dyn AnalyticMarginals, factors: &[Factor], block: usize, points: usize) -> Result<f64> {
    if let Some(r) = model.closed_form_complement_kl(block, factors) {
        return r;
    }
    let dec = model.decomposition();
    let mut grids = Vec::new();
    let mut masses = Vec::new();
    for (b, f) in factors.iter().enumerate() {
        if b != block {
            let (g, lp) = factor_masses(f, points)?;
            grids.push((b, g));
            masses.push(lp);
        }
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
        let lc = model.log_complement_marginal(block, t);
        if lc == f64::NEG_INFINITY {
            return Err(Error::SupportViolation(format!(
                "the factors other than block {} put mass where the complement marginal vanishes",
                block + 1
            )));
        }
        kl += lp.exp() * (log_q - lc);
        Ok(())
    })?;
    Ok(kl.max(0.0))
}

/// `R₋ᵢ` for the factors in `factors`; the numerator uses `points` nodes per
/// coordinate.
pub fn squashing_constant(
    model: &dyn AnalyticMarginals,
    factors: &[Factor],
    block: usize,
    points: usize,
) -> Result<SquashRecord> {
    model.decomposition().check_block(block)?;
    let log_numerator = log_update_normalizer(model, factors, block, points)?;
    let kl_complement = complement_kl(model, factors, block, points)?;
    Ok(SquashRecord {
        log_numerator,
        kl_complement,
        r: (log_numerator - kl_complement).exp(),
    })
}

/// `min π(θᵢ) − R·qᵢ(θᵢ)` over every support point (finite blocks) or over a
/// `points`-node grid on the block (continuous blocks).
pub fn squash_pointwise_check(
    model: &dyn AnalyticMarginals,
    factors: &[Factor],
    block: usize,
    r: f64,
    points: usize,
) -> Result<f64> {
    let dec = model.decomposition();
    dec.check_block(block)?;
    let grid = match model.support(block) {
        Support::Finite(n) => BlockGrid::one_dimensional(Rule1d::counting(n)),
        Support::Real => model.block_grid(block, points)?,
    };
    let marginal = model.block_marginal(block)?;
    let q = &factors[block];
    Ok((0..grid.len())
        .map(|k| {
            let x = grid.point(k);
            marginal.log_density(x).exp() - r * q.log_density(x).exp()
        })
        .fold(f64::INFINITY, f64::min))
}

/// `KL(q ‖ p)`: closed form for Gaussians, enumeration for pmfs, quadrature
/// over `q`'s grid otherwise.
pub fn factor_kl(q: &Factor, p: &Factor, points: usize) -> Result<f64> {
    match (q, p) {
        (Factor::Gaussian(a), Factor::Gaussian(b)) => gaussian_kl(a, b),
        (Factor::Discrete(a), Factor::Discrete(b)) => {
            if a.len() != b.len() {
                return Err(Error::DimensionMismatch { expected: b.len(), found: a.len() });
            }
            let mut kl = 0.0;
            for (&x, &y) in a.pmf().iter().zip(b.pmf()) {
                if x == 0.0 {
                    continue;
                }
                if y == 0.0 {
                    return Err(Error::SupportViolation("q has mass where p has none".into()));
                }
                kl += x * (x / y).ln();
            }
            Ok(kl.max(0.0))
        }
        _ => {
            let (grid, lp) = factor_masses(q, points)?;
            let mut kl = 0.0;
            for (k, &m) in lp.iter().enumerate() {
                if m == f64::NEG_INFINITY {
                    continue;
                }
                let lpd = p.log_density(grid.point(k));
                if lpd == f64::NEG_INFINITY {
                    return Err(Error::SupportViolation("q has mass where p has none".into()));
                }
                kl += m.exp() * (m - grid.log_weight(k) - lpd);
            }
            Ok(kl.max(0.0))
        }
    }
}

/// Lower bound on `KL(qᵢ ‖ π(θᵢ))`, with the raw log term kept. The outer
/// integral runs over the model's grids for the other blocks.
pub fn kl_lower_bound(
    model: &dyn AnalyticMarginals,
    factors: &[Factor],
    block: usize,
    points: usize,
) -> Result<KlBound> {
    let dec = model.decomposition();
    dec.check_block(block)?;
    let (qgrid, qmass) = factor_masses(&factors[block], points)?;
    let live: Vec<(usize, f64)> = qmass
        .iter()
        .enumerate()
        .filter(|(_, m)| **m > f64::NEG_INFINITY)
        .map(|(k, m)| (k, m.exp()))
        .collect();
    let grids: Vec<(usize, BlockGrid)> = (0..dec.num_blocks())
        .filter(|&b| b != block)
        .map(|b| Ok((b, model.block_grid(b, points)?)))
        .collect::<Result<_>>()?;
    let parts: Vec<(usize, &BlockGrid)> = grids.iter().map(|(b, g)| (*b, g)).collect();
    let range = dec.range(block);
    let mut theta = vec![0.0; dec.total_dim()];
    let mut acc = LogSumExp::default();
    visit_product(dec, &parts, &mut theta, |t, idx| {
        let lw: f64 = idx.iter().zip(&parts).map(|(&k, (_, g))| g.log_weight(k)).sum();
        let mut t = t.to_vec();
        let mut e = 0.0;
        for &(k, w) in &live {
            t[range.clone()].copy_from_slice(qgrid.point(k));
            let lc = model.log_complement_conditional(block, &t);
            if lc.is_nan() {
                return Err(Error::SupportViolation(format!(
                    "factor {} has mass where its block marginal vanishes",
                    block + 1
                )));
            }
            e += w * lc;
        }
        acc.add(lw + e);
        Ok(())
    })?;
    let raw = acc.value();
    let kl = factor_kl(&factors[block], &model.block_marginal(block)?, points)?;
    Ok(KlBound {
        raw,
        bound: raw.max(0.0),
        kl,
        raw_positive: raw > RAW_POSITIVE_THRESHOLD,
    })
}
