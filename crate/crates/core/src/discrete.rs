//! Finite joint probability tables over scalar categorical blocks.
//!
//! Every quantity here is computed by exact enumeration, which makes this
//! model the brute-force reference for the generic engines.

use rand::Rng;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::decomposition::BlockDecomposition;
use crate::error::{Error, Result};
use crate::factor::Factor;
use crate::model::{AnalyticMarginals, Capabilities, Support, TargetModel};
use crate::quadrature::{BlockGrid, Rule1d};

pub const MAX_BLOCKS: usize = 4;
pub const MAX_SUPPORT: usize = 16;
const SUM_TOLERANCE: f64 = 1e-12;

/// Probability mass function over `{0, ..., n-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DiscreteRecord", into = "DiscreteRecord")]
pub struct DiscreteFactor {
    pmf: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DiscreteRecord {
    pmf: Vec<f64>,
}

impl TryFrom<DiscreteRecord> for DiscreteFactor {
    type Error = Error;

    fn try_from(r: DiscreteRecord) -> Result<Self> {
        DiscreteFactor::new(r.pmf)
    }
}

impl From<DiscreteFactor> for DiscreteRecord {
    fn from(f: DiscreteFactor) -> Self {
        DiscreteRecord { pmf: f.pmf }
    }
}

impl DiscreteFactor {
    pub fn new(pmf: Vec<f64>) -> Result<Self> {
        if pmf.is_empty() {
            return Err(Error::InvalidDensity("empty pmf".into()));
        }
        if let Some(p) = pmf.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::InvalidDensity(format!("pmf entry {p} is not a probability")));
        }
        let s: f64 = pmf.iter().sum();
        if (s - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDensity(format!("pmf sums to {s}, not 1")));
        }
        Ok(Self { pmf })
    }

    /// Normalize nonnegative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let s: f64 = weights.iter().sum();
        if !(s > 0.0 && s.is_finite()) || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidDensity("weights must be nonnegative with positive sum".into()));
        }
        Ok(Self {
            pmf: weights.iter().map(|w| w / s).collect(),
        })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            pmf: vec![1.0 / n as f64; n],
        }
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn len(&self) -> usize {
        self.pmf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pmf.is_empty()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        match x {
            [v] if v.fract() == 0.0 && *v >= 0.0 && (*v as usize) < self.pmf.len() => {
                self.pmf[*v as usize].ln()
            }
            _ => f64::NEG_INFINITY,
        }
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut cum = 0.0;
        let mut last = 0;
        for (k, p) in self.pmf.iter().enumerate() {
            if *p > 0.0 {
                last = k;
            }
            cum += p;
            if u < cum {
                return vec![k as f64];
            }
        }
        vec![last as f64]
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .pmf
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    }

    pub fn total_variation(&self, other: &DiscreteFactor) -> f64 {
        0.5 * self
            .pmf
            .iter()
            .zip(&other.pmf)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// Joint pmf over `K` scalar categorical blocks, stored row-major with the
/// last block varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTarget {
    shape: Vec<usize>,
    strides: Vec<usize>,
    pmf: Vec<f64>,
    decomposition: BlockDecomposition,
}

impl DiscreteTarget {
    pub fn new(shape: Vec<usize>, pmf: Vec<f64>) -> Result<Self> {
        if shape.len() > MAX_BLOCKS {
            return Err(Error::InvalidModel(format!(
                "at most {MAX_BLOCKS} blocks are supported, got {}",
                shape.len()
            )));
        }
        if let Some(n) = shape.iter().find(|&&n| n == 0 || n > MAX_SUPPORT) {
            return Err(Error::InvalidModel(format!(
                "support sizes must lie in 1..={MAX_SUPPORT}, got {n}"
            )));
        }
        let decomposition = BlockDecomposition::scalar_blocks(shape.len())?;
        let expected: usize = shape.iter().product();
        if pmf.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: pmf.len(),
            });
        }
        if let Some(p) = pmf.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::InvalidModel(format!("pmf entry {p} is not a probability")));
        }
        let s: f64 = pmf.iter().sum();
        if (s - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidModel(format!("pmf sums to {s}, not 1")));
        }
        let mut strides = vec![1; shape.len()];
        for b in (0..shape.len().saturating_sub(1)).rev() {
            strides[b] = strides[b + 1] * shape[b + 1];
        }
        Ok(Self {
            shape,
            strides,
            pmf,
            decomposition,
        })
    }

    /// Outer product of block pmfs.
    pub fn product(factors: &[DiscreteFactor]) -> Result<Self> {
        let shape: Vec<usize> = factors.iter().map(DiscreteFactor::len).collect();
        let n: usize = shape.iter().product();
        let mut pmf = vec![1.0; n];
        let mut strides = vec![1; shape.len()];
        for b in (0..shape.len().saturating_sub(1)).rev() {
            strides[b] = strides[b + 1] * shape[b + 1];
        }
        for (flat, p) in pmf.iter_mut().enumerate() {
            for (b, f) in factors.iter().enumerate() {
                *p *= f.pmf[(flat / strides[b]) % shape[b]];
            }
        }
        Self::new(shape, pmf)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn num_blocks(&self) -> usize {
        self.shape.len()
    }

    /// Flat index of an integer-valued point.
    pub fn index_of(&self, theta: &[f64]) -> Result<usize> {
        self.decomposition.check_len(theta.len())?;
        let mut flat = 0;
        for (b, &v) in theta.iter().enumerate() {
            if v.fract() != 0.0 || v < 0.0 || v as usize >= self.shape[b] {
                return Err(Error::SupportViolation(format!(
                    "value {v} is outside the support of block {}",
                    b + 1
                )));
            }
            flat += v as usize * self.strides[b];
        }
        Ok(flat)
    }

    pub fn point_of(&self, flat: usize) -> Vec<f64> {
        (0..self.shape.len())
            .map(|b| ((flat / self.strides[b]) % self.shape[b]) as f64)
            .collect()
    }

    fn value_of(&self, flat: usize, block: usize) -> usize {
        (flat / self.strides[block]) % self.shape[block]
    }

    /// Flat index with block `block` zeroed; identifies the complement configuration.
    fn complement_key(&self, flat: usize, block: usize) -> usize {
        flat - self.value_of(flat, block) * self.strides[block]
    }

    pub fn probability(&self, theta: &[f64]) -> f64 {
        self.index_of(theta).map(|k| self.pmf[k]).unwrap_or(0.0)
    }

    /// `π(θᵢ | θ₋ᵢ)`: the slice through `θ₋ᵢ`, renormalized.
    pub fn enum_full_conditional(&self, block: usize, theta: &[f64]) -> Result<DiscreteFactor> {
        self.decomposition.check_block(block)?;
        let mut point = theta.to_vec();
        point[block] = 0.0;
        let base = self.index_of(&point)?;
        let slice: Vec<f64> = (0..self.shape[block])
            .map(|v| self.pmf[base + v * self.strides[block]])
            .collect();
        let mass: f64 = slice.iter().sum();
        if mass <= 0.0 {
            return Err(Error::ZeroMass { block: block + 1 });
        }
        Ok(DiscreteFactor {
            pmf: slice.into_iter().map(|p| p / mass).collect(),
        })
    }

    pub fn enum_marginal(&self, block: usize) -> Result<DiscreteFactor> {
        self.decomposition.check_block(block)?;
        let mut m = vec![0.0; self.shape[block]];
        for (flat, p) in self.pmf.iter().enumerate() {
            m[self.value_of(flat, block)] += p;
        }
        Ok(DiscreteFactor { pmf: m })
    }

    /// Marginal pmf of `θ₋ᵢ`, indexed by complement key.
    fn complement_marginal_table(&self, block: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.pmf.len()];
        for (flat, p) in self.pmf.iter().enumerate() {
            m[self.complement_key(flat, block)] += p;
        }
        m
    }

    /// `I(θᵢ; θ₋ᵢ) = Σ π log(π / (πᵢ π₋ᵢ))`.
    pub fn enum_mi(&self, block: usize) -> Result<f64> {
        let mi = self.enum_marginal(block)?;
        let mc = self.complement_marginal_table(block);
        let mut s = 0.0;
        for (flat, &p) in self.pmf.iter().enumerate() {
            if p > 0.0 {
                let denom = mi.pmf[self.value_of(flat, block)] * mc[self.complement_key(flat, block)];
                s += p * (p / denom).ln();
            }
        }
        Ok(s)
    }

    /// `H(θᵢ)`.
    pub fn enum_entropy(&self, block: usize) -> Result<f64> {
        Ok(self.enum_marginal(block)?.entropy())
    }

    /// `H(θ₋ᵢ)`.
    pub fn enum_complement_entropy(&self, block: usize) -> Result<f64> {
        self.decomposition.check_block(block)?;
        Ok(-self
            .complement_marginal_table(block)
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>())
    }

    /// `H(θ₋ᵢ | θᵢ) = −Σ π log π(θ₋ᵢ|θᵢ)`.
    pub fn enum_cond_entropy(&self, block: usize) -> Result<f64> {
        let mi = self.enum_marginal(block)?;
        let mut s = 0.0;
        for (flat, &p) in self.pmf.iter().enumerate() {
            if p > 0.0 {
                s -= p * (p / mi.pmf[self.value_of(flat, block)]).ln();
            }
        }
        Ok(s)
    }

    /// `H(θᵢ | θ₋ᵢ) = −Σ π log π(θᵢ|θ₋ᵢ)`.
    pub fn enum_block_cond_entropy(&self, block: usize) -> Result<f64> {
        self.decomposition.check_block(block)?;
        let mc = self.complement_marginal_table(block);
        let mut s = 0.0;
        for (flat, &p) in self.pmf.iter().enumerate() {
            if p > 0.0 {
                s -= p * (p / mc[self.complement_key(flat, block)]).ln();
            }
        }
        Ok(s)
    }

    /// Optimal coordinate update by enumeration:
    /// `q*(θᵢ) ∝ exp Σ_{θ₋ᵢ} q(θ₋ᵢ) log π(θᵢ | θ₋ᵢ)`.
    pub fn enum_cavi_update(&self, factors: &[DiscreteFactor], block: usize) -> Result<DiscreteFactor> {
        self.decomposition.check_block(block)?;
        if factors.len() != self.num_blocks() {
            return Err(Error::DimensionMismatch {
                expected: self.num_blocks(),
                found: factors.len(),
            });
        }
        for (b, f) in factors.iter().enumerate() {
            if f.len() != self.shape[b] {
                return Err(Error::DimensionMismatch {
                    expected: self.shape[b],
                    found: f.len(),
                });
            }
        }
        let mc = self.complement_marginal_table(block);
        let mut e = vec![0.0; self.shape[block]];
        for (flat, &p) in self.pmf.iter().enumerate() {
            let weight: f64 = (0..self.num_blocks())
                .filter(|&b| b != block)
                .map(|b| factors[b].pmf[self.value_of(flat, b)])
                .product();
            if weight == 0.0 {
                continue;
            }
            let key = self.complement_key(flat, block);
            if mc[key] <= 0.0 {
                return Err(Error::DivergentExpectation {
                    block: block + 1,
                    detail: "complement factor puts mass on a zero-probability conditioning event".into(),
                });
            }
            if p <= 0.0 {
                return Err(Error::DivergentExpectation {
                    block: block + 1,
                    detail: format!(
                        "log π(θ{}|θ₋{}) = -inf where the complement factor has mass {weight}",
                        block + 1,
                        block + 1
                    ),
                });
            }
            e[self.value_of(flat, block)] += weight * (p / mc[key]).ln();
        }
        let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = e.iter().map(|v| (v - max).exp()).collect();
        DiscreteFactor::from_weights(&w)
    }

    /// `KL(∏ qᵢ ‖ π)` by enumeration. `+inf` if the product puts mass where `π` has none.
    pub fn enum_kl_objective(&self, factors: &[DiscreteFactor]) -> Result<f64> {
        let q = Self::product(factors)?;
        if q.shape != self.shape {
            return Err(Error::DimensionMismatch {
                expected: self.num_blocks(),
                found: factors.len(),
            });
        }
        let mut s = 0.0;
        for (qk, pk) in q.pmf.iter().zip(&self.pmf) {
            if *qk > 0.0 {
                if *pk <= 0.0 {
                    return Ok(f64::INFINITY);
                }
                s += qk * (qk / pk).ln();
            }
        }
        Ok(s.max(0.0))
    }

    fn discrete_factors(factors: &[Factor]) -> Option<Vec<DiscreteFactor>> {
        factors.iter().map(|f| f.as_discrete().cloned()).collect()
    }
}

impl TargetModel for DiscreteTarget {
    fn decomposition(&self) -> &BlockDecomposition {
        &self.decomposition
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            has_analytic_marginals: true,
            is_discrete: true,
        }
    }

    fn support(&self, block: usize) -> Support {
        Support::Finite(self.shape[block])
    }

    fn log_unnormalized_posterior(&self, theta: &[f64]) -> f64 {
        self.probability(theta).ln()
    }

    fn full_conditional(&self, block: usize, theta: &[f64]) -> Result<Factor> {
        self.enum_full_conditional(block, theta).map(Factor::Discrete)
    }

    fn block_grid(&self, block: usize, _points: usize) -> Result<BlockGrid> {
        self.decomposition.check_block(block)?;
        Ok(BlockGrid::one_dimensional(Rule1d::counting(self.shape[block])))
    }

    fn log_evidence(&self) -> Option<f64> {
        Some(0.0)
    }

    fn closed_form_kl_objective(&self, factors: &[Factor]) -> Option<Result<f64>> {
        let ds = Self::discrete_factors(factors)?;
        Some(self.enum_kl_objective(&ds))
    }

    fn as_analytic(&self) -> Option<&dyn AnalyticMarginals> {
        Some(self)
    }

    fn family(&self) -> &'static str {
        "discrete"
    }
}

impl AnalyticMarginals for DiscreteTarget {
    fn log_posterior(&self, theta: &[f64]) -> f64 {
        self.probability(theta).ln()
    }

    fn log_block_marginal(&self, block: usize, theta: &[f64]) -> f64 {
        let Ok(m) = self.enum_marginal(block) else {
            return f64::NEG_INFINITY;
        };
        m.log_density(&theta[block..block + 1])
    }

    fn log_complement_marginal(&self, block: usize, theta: &[f64]) -> f64 {
        let mut point = theta.to_vec();
        let mut s = 0.0;
        for v in 0..self.shape[block] {
            point[block] = v as f64;
            s += self.probability(&point);
        }
        s.ln()
    }

    fn block_marginal(&self, block: usize) -> Result<Factor> {
        self.enum_marginal(block).map(Factor::Discrete)
    }

    fn closed_form_mutual_information(&self, block: usize) -> Option<Result<f64>> {
        Some(self.enum_mi(block))
    }
}
