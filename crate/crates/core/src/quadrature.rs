//! Quadrature rules on block spaces and log-space accumulation.
//!
//! A [`BlockGrid`] is a tensor product of one-dimensional rules, one per
//! coordinate of a block. Continuous coordinates use the composite trapezoid
//! rule; finite supports use the counting rule (unit weights), so the same
//! code path computes integrals under Lebesgue measure and sums under counting
//! measure.

use serde::{Deserialize, Serialize};

use crate::decomposition::BlockDecomposition;
use crate::error::{Error, Result};

/// One-dimensional rule: nodes with nonnegative weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule1d {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule1d {
    /// Composite trapezoid rule with `n >= 2` equally spaced nodes on `[lo, hi]`.
    pub fn trapezoid(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "trapezoid rule needs n >= 2 and a finite interval, got n={n} on [{lo}, {hi}]"
            )));
        }
        let h = (hi - lo) / (n - 1) as f64;
        let nodes = (0..n).map(|k| lo + h * k as f64).collect();
        let mut weights = vec![h; n];
        weights[0] = 0.5 * h;
        weights[n - 1] = 0.5 * h;
        Ok(Self { nodes, weights })
    }

    /// Nodes `0, 1, ..., n-1` with unit weights.
    pub fn counting(n: usize) -> Self {
        Self {
            nodes: (0..n).map(|k| k as f64).collect(),
            weights: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn lo(&self) -> f64 {
        self.nodes[0]
    }

    pub fn hi(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }
}

/// Tensor-product rule over a (possibly multi-dimensional) block.
///
/// Nodes are enumerated with the last coordinate varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<Rule1d>", into = "Vec<Rule1d>")]
pub struct BlockGrid {
    axes: Vec<Rule1d>,
    points: Vec<f64>,
    log_weights: Vec<f64>,
}

impl BlockGrid {
    pub fn new(axes: Vec<Rule1d>) -> Self {
        let dim = axes.len();
        let len: usize = axes.iter().map(Rule1d::len).product();
        let mut points = Vec::with_capacity(len * dim);
        let mut log_weights = Vec::with_capacity(len);
        let mut idx = vec![0usize; dim];
        for _ in 0..len {
            let mut lw = 0.0;
            for (a, axis) in axes.iter().enumerate() {
                points.push(axis.nodes[idx[a]]);
                lw += axis.weights[idx[a]].ln();
            }
            log_weights.push(lw);
            for a in (0..dim).rev() {
                idx[a] += 1;
                if idx[a] < axes[a].len() {
                    break;
                }
                idx[a] = 0;
            }
        }
        Self {
            axes,
            points,
            log_weights,
        }
    }

    pub fn one_dimensional(rule: Rule1d) -> Self {
        Self::new(vec![rule])
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn axes(&self) -> &[Rule1d] {
        &self.axes
    }

    pub fn point(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.points[k * d..(k + 1) * d]
    }

    pub fn log_weight(&self, k: usize) -> f64 {
        self.log_weights[k]
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Integral (or sum) of `exp(log_values)` over the grid, in log space.
    pub fn log_integral(&self, log_values: &[f64]) -> f64 {
        debug_assert_eq!(log_values.len(), self.len());
        let mut acc = LogSumExp::default();
        for (lv, lw) in log_values.iter().zip(&self.log_weights) {
            acc.add(lv + lw);
        }
        acc.value()
    }

    /// `∫ exp(log_density) * f` where `exp(log_density)` is a density on the grid.
    /// Points where the density vanishes contribute nothing, whatever `f` is.
    pub fn expectation(&self, log_density: &[f64], f: &[f64]) -> f64 {
        let mut sum = 0.0;
        for k in 0..self.len() {
            let lw = log_density[k] + self.log_weights[k];
            if lw > f64::NEG_INFINITY {
                sum += lw.exp() * f[k];
            }
        }
        sum
    }

    /// Index of the node equal to `x`, if any.
    pub fn find(&self, x: &[f64]) -> Option<usize> {
        if x.len() != self.dim() {
            return None;
        }
        let mut k = 0;
        for (axis, &v) in self.axes.iter().zip(x) {
            let pos = axis
                .nodes
                .binary_search_by(|n| n.partial_cmp(&v).unwrap_or(std::cmp::Ordering::Less))
                .ok()?;
            k = k * axis.len() + pos;
        }
        Some(k)
    }
}

impl From<Vec<Rule1d>> for BlockGrid {
    fn from(axes: Vec<Rule1d>) -> Self {
        Self::new(axes)
    }
}

impl From<BlockGrid> for Vec<Rule1d> {
    fn from(g: BlockGrid) -> Self {
        g.axes
    }
}

/// Streaming log-sum-exp accumulator.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    sum: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }
}

impl LogSumExp {
    pub fn add(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x <= self.max {
            self.sum += (x - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let mut acc = LogSumExp::default();
    for &v in values {
        acc.add(v);
    }
    acc.value()
}

/// Upper bound on the number of points any product-grid traversal may visit.
pub const MAX_PRODUCT_POINTS: usize = 50_000_000;

/// Visit every combination of nodes from the grids attached to `parts`,
/// writing the node coordinates into the corresponding block ranges of
/// `theta`. The callback receives the filled vector and the node index chosen
/// in each part.
pub fn visit_product<F>(
    decomposition: &BlockDecomposition,
    parts: &[(usize, &BlockGrid)],
    theta: &mut [f64],
    mut f: F,
) -> Result<()>
where
    F: FnMut(&[f64], &[usize]) -> Result<()>,
{
    let total = parts
        .iter()
        .try_fold(1usize, |acc, (_, g)| acc.checked_mul(g.len()))
        .unwrap_or(usize::MAX);
    if total > MAX_PRODUCT_POINTS {
        return Err(Error::Unsupported(format!(
            "product grid with {total} points exceeds the limit of {MAX_PRODUCT_POINTS}; reduce grid sizes"
        )));
    }
    for (block, grid) in parts {
        if grid.dim() != decomposition.block_dim(*block) {
            return Err(Error::DimensionMismatch {
                expected: decomposition.block_dim(*block),
                found: grid.dim(),
            });
        }
    }
    let mut idx = vec![0usize; parts.len()];
    for (p, (block, grid)) in parts.iter().enumerate() {
        theta[decomposition.range(*block)].copy_from_slice(grid.point(idx[p]));
    }
    loop {
        f(theta, &idx)?;
        let mut p = parts.len();
        loop {
            if p == 0 {
                return Ok(());
            }
            p -= 1;
            let (block, grid) = parts[p];
            idx[p] += 1;
            if idx[p] < grid.len() {
                theta[decomposition.range(block)].copy_from_slice(grid.point(idx[p]));
                break;
            }
            idx[p] = 0;
            theta[decomposition.range(block)].copy_from_slice(grid.point(0));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn trapezoid_integrates_gaussian() {
        let r = Rule1d::trapezoid(-8.0, 8.0, 4097).unwrap();
        let g = BlockGrid::one_dimensional(r);
        let logs: Vec<f64> = (0..g.len())
            .map(|k| {
                let x = g.point(k)[0];
                -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln()
            })
            .collect();
        assert_abs_diff_eq!(g.log_integral(&logs), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn counting_rule_sums() {
        let g = BlockGrid::one_dimensional(Rule1d::counting(4));
        let logs: Vec<f64> = [0.1f64, 0.2, 0.3, 0.4].iter().map(|p| p.ln()).collect();
        assert_abs_diff_eq!(g.log_integral(&logs), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn tensor_grid_order_and_find() {
        let g = BlockGrid::new(vec![Rule1d::counting(2), Rule1d::counting(3)]);
        assert_eq!(g.len(), 6);
        assert_eq!(g.point(0), &[0.0, 0.0]);
        assert_eq!(g.point(1), &[0.0, 1.0]);
        assert_eq!(g.point(3), &[1.0, 0.0]);
        assert_eq!(g.find(&[1.0, 2.0]), Some(5));
        assert_eq!(g.find(&[0.5, 2.0]), None);
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert_abs_diff_eq!(log_sum_exp(&[-1000.0, -1000.0]), -1000.0 + 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(log_sum_exp(&[800.0, 0.0]), 800.0, epsilon = 1e-12);
    }

    #[test]
    fn visit_product_enumerates_all() {
        let d = BlockDecomposition::new(&[1, 1, 1]).unwrap();
        let g2 = BlockGrid::one_dimensional(Rule1d::counting(2));
        let g3 = BlockGrid::one_dimensional(Rule1d::counting(3));
        let mut theta = vec![7.0; 3];
        let mut seen = Vec::new();
        visit_product(&d, &[(0, &g2), (2, &g3)], &mut theta, |t, idx| {
            seen.push((t.to_vec(), idx.to_vec()));
            Ok(())
        })
        .unwrap();
        assert_eq!(seen.len(), 6);
        assert_eq!(seen[0].0, vec![0.0, 7.0, 0.0]);
        assert_eq!(seen[5].0, vec![1.0, 7.0, 2.0]);
        assert_eq!(seen[4].1, vec![1, 1]);
    }

    #[test]
    fn bad_trapezoid_rejected() {
        assert!(Rule1d::trapezoid(0.0, 1.0, 1).is_err());
        assert!(Rule1d::trapezoid(1.0, 0.0, 5).is_err());
    }
}
