//! Block densities: full conditionals, marginals and variational factors.

use rand::Rng;
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::discrete::DiscreteFactor;
use crate::error::{Error, Result};
use crate::gaussian::GaussianFactor;
use crate::quadrature::{BlockGrid, Rule1d};

/// Half-width, in standard deviations, of reference grids for Gaussian densities.
pub const GRID_HALF_WIDTH_SDS: f64 = 8.0;

/// Behaviour shared by every block density.
pub trait ConditionalDensity {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &[f64]) -> f64;
    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64>;
}

/// A normalized density on one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Factor {
    Gaussian(GaussianFactor),
    Discrete(DiscreteFactor),
    Tabulated(TabulatedFactor),
}

impl Factor {
    pub fn dim(&self) -> usize {
        match self {
            Factor::Gaussian(g) => g.dim(),
            Factor::Discrete(_) => 1,
            Factor::Tabulated(t) => t.grid.dim(),
        }
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        match self {
            Factor::Gaussian(g) => g.log_density(x),
            Factor::Discrete(d) => d.log_density(x),
            Factor::Tabulated(t) => t.log_density(x),
        }
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        match self {
            Factor::Gaussian(g) => g.sample(rng),
            Factor::Discrete(d) => d.sample(rng),
            Factor::Tabulated(t) => t.sample(rng),
        }
    }

    /// Log density at every node of `grid`.
    pub fn tabulate(&self, grid: &BlockGrid) -> Vec<f64> {
        if let Factor::Tabulated(t) = self {
            if &t.grid == grid {
                return t.log_values.clone();
            }
        }
        (0..grid.len()).map(|k| self.log_density(grid.point(k))).collect()
    }

    /// The grid on which this density is checked for normalization:
    /// `mean ± 8 sd` per coordinate for Gaussians, the support for discrete
    /// factors, the stored grid for tabulated ones.
    pub fn reference_grid(&self, points: usize) -> Result<BlockGrid> {
        match self {
            Factor::Gaussian(g) => {
                let axes = (0..g.dim())
                    .map(|c| {
                        let sd = g.covariance()[(c, c)].sqrt();
                        let m = g.mean()[c];
                        Rule1d::trapezoid(
                            m - GRID_HALF_WIDTH_SDS * sd,
                            m + GRID_HALF_WIDTH_SDS * sd,
                            points,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(BlockGrid::new(axes))
            }
            Factor::Discrete(d) => Ok(BlockGrid::one_dimensional(Rule1d::counting(d.len()))),
            Factor::Tabulated(t) => Ok(t.grid.clone()),
        }
    }

    /// Per-coordinate interval outside of which the density is negligible.
    pub fn effective_range(&self) -> Vec<(f64, f64)> {
        match self {
            Factor::Gaussian(g) => (0..g.dim())
                .map(|c| {
                    let sd = g.covariance()[(c, c)].sqrt();
                    let m = g.mean()[c];
                    (m - GRID_HALF_WIDTH_SDS * sd, m + GRID_HALF_WIDTH_SDS * sd)
                })
                .collect(),
            Factor::Discrete(d) => vec![(0.0, (d.len() - 1) as f64)],
            Factor::Tabulated(t) => t.grid.axes().iter().map(|a| (a.lo(), a.hi())).collect(),
        }
    }

    /// Convergence metric between two factors of the same kind: sup-norm of the
    /// parameter change (Gaussian mean and covariance entries), of the pmf change
    /// (discrete) or of the tabulated density change. Mismatched kinds give `inf`.
    pub fn max_abs_change(&self, other: &Factor) -> f64 {
        match (self, other) {
            (Factor::Gaussian(a), Factor::Gaussian(b)) if a.dim() == b.dim() => {
                let dm = (a.mean() - b.mean()).amax();
                let dc = (a.covariance() - b.covariance()).amax();
                dm.max(dc)
            }
            (Factor::Discrete(a), Factor::Discrete(b)) if a.len() == b.len() => a
                .pmf()
                .iter()
                .zip(b.pmf())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max),
            (Factor::Tabulated(a), Factor::Tabulated(b)) if a.grid == b.grid => a
                .log_values
                .iter()
                .zip(&b.log_values)
                .map(|(x, y)| (x.exp() - y.exp()).abs())
                .fold(0.0, f64::max),
            _ => f64::INFINITY,
        }
    }

    pub fn as_gaussian(&self) -> Option<&GaussianFactor> {
        match self {
            Factor::Gaussian(g) => Some(g),
            _ => None,
        }
    }

    pub fn as_discrete(&self) -> Option<&DiscreteFactor> {
        match self {
            Factor::Discrete(d) => Some(d),
            _ => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Factor::Gaussian(_) => "gaussian",
            Factor::Discrete(_) => "discrete",
            Factor::Tabulated(_) => "tabulated",
        }
    }
}

impl ConditionalDensity for Factor {
    fn dim(&self) -> usize {
        Factor::dim(self)
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        Factor::log_density(self, x)
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        Factor::sample(self, rng)
    }
}

/// Density tabulated on a block grid, normalized under the grid's weights.
///
/// Off-node evaluation interpolates the log density multilinearly; it is exact
/// only at the nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedFactor {
    grid: BlockGrid,
    #[serde(with = "log_values_serde")]
    log_values: Vec<f64>,
}

impl TabulatedFactor {
    /// Normalize `exp(log_values)` on `grid`.
    pub fn from_log_unnormalized(grid: BlockGrid, mut log_values: Vec<f64>) -> Result<Self> {
        if log_values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                found: log_values.len(),
            });
        }
        if log_values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::InvalidDensity(
                "tabulated log density contains NaN or +inf".into(),
            ));
        }
        let z = grid.log_integral(&log_values);
        if !z.is_finite() {
            return Err(Error::InvalidDensity(
                "tabulated density has zero mass on its grid".into(),
            ));
        }
        for v in &mut log_values {
            *v -= z;
        }
        Ok(Self { grid, log_values })
    }

    /// Tabulate an arbitrary factor on `grid` and renormalize there.
    pub fn from_factor(factor: &Factor, grid: BlockGrid) -> Result<Self> {
        let logs = factor.tabulate(&grid);
        Self::from_log_unnormalized(grid, logs)
    }

    pub fn grid(&self) -> &BlockGrid {
        &self.grid
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log_values
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        if let Some(k) = self.grid.find(x) {
            return self.log_values[k];
        }
        if x.len() != self.grid.dim() {
            return f64::NEG_INFINITY;
        }
        // Multilinear interpolation of the log density between bracketing nodes.
        let axes = self.grid.axes();
        let mut brackets = Vec::with_capacity(axes.len());
        for (axis, &v) in axes.iter().zip(x) {
            if !(v >= axis.lo() && v <= axis.hi()) {
                return f64::NEG_INFINITY;
            }
            let hi = axis.nodes.partition_point(|&n| n <= v).min(axis.len() - 1);
            let lo = hi - 1;
            let t = (v - axis.nodes[lo]) / (axis.nodes[hi] - axis.nodes[lo]);
            brackets.push((lo, t));
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << axes.len()) {
            let mut k = 0;
            let mut w = 1.0;
            for (a, (lo, t)) in brackets.iter().enumerate() {
                let upper = (corner >> (axes.len() - 1 - a)) & 1 == 1;
                k = k * axes[a].len() + lo + upper as usize;
                w *= if upper { *t } else { 1.0 - t };
            }
            if w > 0.0 {
                acc += w * self.log_values[k];
            }
        }
        acc
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut cum = 0.0;
        let mut last = 0;
        for k in 0..self.grid.len() {
            let p = (self.log_values[k] + self.grid.log_weight(k)).exp();
            if p > 0.0 {
                last = k;
            }
            cum += p;
            if u < cum {
                return self.grid.point(k).to_vec();
            }
        }
        self.grid.point(last).to_vec()
    }
}

/// `-inf` log values are written as JSON `null`.
mod log_values_serde {
    use super::*;

    pub fn serialize<S: Serializer>(values: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
        let v: Vec<Option<f64>> = values
            .iter()
            .map(|&x| if x == f64::NEG_INFINITY { None } else { Some(x) })
            .collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
        let v: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|x| x.unwrap_or(f64::NEG_INFINITY)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn std_normal_tab(n: usize) -> TabulatedFactor {
        let g = BlockGrid::one_dimensional(Rule1d::trapezoid(-8.0, 8.0, n).unwrap());
        let logs = (0..g.len()).map(|k| -0.5 * g.point(k)[0].powi(2)).collect();
        TabulatedFactor::from_log_unnormalized(g, logs).unwrap()
    }

    #[test]
    fn tabulated_normalizes() {
        let t = std_normal_tab(513);
        assert_abs_diff_eq!(t.grid().log_integral(t.log_values()), 0.0, epsilon = 1e-14);
        let at0 = t.log_density(&[0.0]);
        assert_abs_diff_eq!(at0, -0.5 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-12);
    }

    #[test]
    fn tabulated_interpolates_and_bounds() {
        let t = std_normal_tab(17);
        // node spacing 1.0; log density is quadratic so linear interpolation overshoots below
        let mid = t.log_density(&[0.5]);
        let exact = -0.125 - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!(mid < exact && exact - mid < 0.2);
        assert_eq!(t.log_density(&[9.0]), f64::NEG_INFINITY);
    }

    #[test]
    fn tabulated_rejects_zero_mass() {
        let g = BlockGrid::one_dimensional(Rule1d::counting(3));
        let err = TabulatedFactor::from_log_unnormalized(g, vec![f64::NEG_INFINITY; 3]);
        assert!(err.is_err());
    }

    #[test]
    fn tabulated_sampling_frequencies() {
        let g = BlockGrid::one_dimensional(Rule1d::counting(3));
        let logs = [0.2f64, 0.3, 0.5].iter().map(|p| p.ln()).collect();
        let t = TabulatedFactor::from_log_unnormalized(g, logs).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut counts = [0usize; 3];
        let n = 100_000;
        for _ in 0..n {
            counts[t.sample(&mut rng)[0] as usize] += 1;
        }
        for (c, p) in counts.iter().zip([0.2, 0.3, 0.5]) {
            assert!((*c as f64 / n as f64 - p).abs() < 0.01);
        }
    }

    #[test]
    fn json_round_trip_with_zero_mass_nodes() {
        let g = BlockGrid::one_dimensional(Rule1d::counting(3));
        let t = TabulatedFactor::from_log_unnormalized(g, vec![0.0, f64::NEG_INFINITY, 0.0]).unwrap();
        let f = Factor::Tabulated(t);
        let s = serde_json::to_string(&f).unwrap();
        assert!(s.contains("null"));
        let back: Factor = serde_json::from_str(&s).unwrap();
        assert_eq!(back, f);
    }
}
