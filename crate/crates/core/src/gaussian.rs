//! Multivariate Gaussian posterior with closed-form conditionals, marginals,
//! divergences, entropies and the analytic mean-field fixed point.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::RngCore;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::decomposition::BlockDecomposition;
use crate::error::{Error, Result};
use crate::factor::{Factor, GRID_HALF_WIDTH_SDS};
use crate::model::{AnalyticMarginals, Capabilities, Support, TargetModel};
use crate::quadrature::{BlockGrid, Rule1d};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Largest accepted covariance condition number.
pub const MAX_CONDITION_NUMBER: f64 = 1e8;

/// Gaussian density on a block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaussianRecord", into = "GaussianRecord")]
pub struct GaussianFactor {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_det: f64,
}

#[derive(Serialize, Deserialize)]
struct GaussianRecord {
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
}

impl TryFrom<GaussianRecord> for GaussianFactor {
    type Error = Error;

    fn try_from(r: GaussianRecord) -> Result<Self> {
        let d = r.mean.len();
        if r.covariance.len() != d || r.covariance.iter().any(|row| row.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: r.covariance.len(),
            });
        }
        let cov = DMatrix::from_fn(d, d, |i, j| r.covariance[i][j]);
        GaussianFactor::new(DVector::from_vec(r.mean), cov)
    }
}

impl From<GaussianFactor> for GaussianRecord {
    fn from(g: GaussianFactor) -> Self {
        let d = g.dim();
        GaussianRecord {
            mean: g.mean.iter().copied().collect(),
            covariance: (0..d).map(|i| (0..d).map(|j| g.cov[(i, j)]).collect()).collect(),
        }
    }
}

fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::InvalidModel(format!(
                    "{what} is not symmetric at ({}, {})",
                    i + 1,
                    j + 1
                )));
            }
        }
    }
    Ok(())
}

impl GaussianFactor {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: cov.nrows(),
            });
        }
        if let Some(pos) = mean.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDensity("covariance has non-finite entries".into()));
        }
        check_symmetric(&cov, "covariance")?;
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidDensity("covariance is not positive definite".into()))?;
        let l = chol.l();
        let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self {
            mean,
            cov,
            chol: l,
            log_det,
        })
    }

    pub fn univariate(mean: f64, variance: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, variance))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn log_det_covariance(&self) -> f64 {
        self.log_det
    }

    /// Variance of the first coordinate; convenient for scalar blocks.
    pub fn variance(&self) -> f64 {
        self.cov[(0, 0)]
    }

    fn mahalanobis(&self, x: &[f64]) -> f64 {
        // Forward substitution with the lower Cholesky factor.
        let d = self.dim();
        let mut z = [0.0f64; 8];
        let mut heap;
        let z: &mut [f64] = if d <= 8 {
            &mut z[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        let mut q = 0.0;
        for i in 0..d {
            let mut s = x[i] - self.mean[i];
            for j in 0..i {
                s -= self.chol[(i, j)] * z[j];
            }
            z[i] = s / self.chol[(i, i)];
            q += z[i] * z[i];
        }
        q
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        if x.len() != self.dim() {
            return f64::NEG_INFINITY;
        }
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det + self.mahalanobis(x))
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        (&self.mean + &self.chol * z).iter().copied().collect()
    }

    /// Differential entropy `½ log det(2πe Σ)`.
    pub fn entropy(&self) -> f64 {
        0.5 * (self.dim() as f64 * (1.0 + LN_2PI) + self.log_det)
    }

    fn precision(&self) -> DMatrix<f64> {
        let n = self.dim();
        self.cov
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .unwrap_or_else(|| DMatrix::identity(n, n))
    }
}

/// `KL(a ‖ b)` for Gaussians of equal dimension.
pub fn gaussian_kl(a: &GaussianFactor, b: &GaussianFactor) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let prec_b = b.precision();
    let diff = b.mean() - a.mean();
    let trace = (&prec_b * a.covariance()).trace();
    let maha = diff.dot(&(&prec_b * &diff));
    let kl = 0.5 * (trace + maha - a.dim() as f64 + b.log_det - a.log_det);
    Ok(kl.max(0.0))
}

pub fn gaussian_entropy(f: &GaussianFactor) -> f64 {
    f.entropy()
}

#[derive(Debug, Clone)]
struct BlockCache {
    complement: Vec<usize>,
    /// `Λᵢᵢ⁻¹`, the full-conditional covariance.
    cond_cov: DMatrix<f64>,
    cond_factor: GaussianFactor,
    /// `Λᵢᵢ⁻¹ Λᵢ,₋ᵢ`.
    regression: DMatrix<f64>,
    marginal: GaussianFactor,
    complement_marginal: GaussianFactor,
}

/// Gaussian posterior `N(mean, covariance)` over a block decomposition.
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_det: f64,
    decomposition: BlockDecomposition,
    blocks: Vec<BlockCache>,
}

fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

fn select_vec(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}

impl GaussianTarget {
    pub fn new(
        mean: Vec<f64>,
        covariance: DMatrix<f64>,
        decomposition: BlockDecomposition,
    ) -> Result<Self> {
        let d = decomposition.total_dim();
        if mean.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: mean.len(),
            });
        }
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::InvalidModel(format!(
                "covariance must be {d}x{d}, got {}x{}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if let Some(pos) = mean.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        if covariance.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("covariance has non-finite entries".into()));
        }
        check_symmetric(&covariance, "covariance")?;
        let eig = covariance.clone().symmetric_eigenvalues();
        let min_eig = eig.min();
        let max_eig = eig.max();
        if min_eig <= 1e-10 {
            return Err(Error::InvalidModel(format!(
                "covariance is not positive definite (smallest eigenvalue {min_eig:e})"
            )));
        }
        if max_eig / min_eig > MAX_CONDITION_NUMBER {
            return Err(Error::InvalidModel(format!(
                "covariance condition number {:e} exceeds {MAX_CONDITION_NUMBER:e}",
                max_eig / min_eig
            )));
        }
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidModel("covariance Cholesky factorization failed".into()))?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let mut precision = chol.inverse();
        precision = 0.5 * (&precision + precision.transpose());
        let resid = (&precision * &covariance - DMatrix::identity(d, d)).amax();
        if resid > 1e-8 {
            return Err(Error::InvalidModel(format!(
                "precision inversion residual {resid:e} exceeds 1e-8"
            )));
        }
        let mean = DVector::from_vec(mean);

        let mut blocks = Vec::with_capacity(decomposition.num_blocks());
        for b in 0..decomposition.num_blocks() {
            let own: Vec<usize> = decomposition.range(b).collect();
            let complement = decomposition.complement_indices(b);
            let lam_ii = select(&precision, &own, &own);
            let lam_ic = select(&precision, &own, &complement);
            let cond_cov = lam_ii
                .clone()
                .cholesky()
                .ok_or_else(|| {
                    Error::InvalidModel(format!("precision block {} is singular", b + 1))
                })?
                .inverse();
            let cond_cov = 0.5 * (&cond_cov + cond_cov.transpose());
            let regression = &cond_cov * &lam_ic;
            let cond_factor = GaussianFactor::new(select_vec(&mean, &own), cond_cov.clone())?;
            let marginal =
                GaussianFactor::new(select_vec(&mean, &own), select(&covariance, &own, &own))?;
            let complement_marginal = GaussianFactor::new(
                select_vec(&mean, &complement),
                select(&covariance, &complement, &complement),
            )?;
            blocks.push(BlockCache {
                complement,
                cond_cov,
                cond_factor,
                regression,
                marginal,
                complement_marginal,
            });
        }

        Ok(Self {
            mean,
            cov: covariance,
            precision,
            log_det,
            decomposition,
            blocks,
        })
    }

    /// Bivariate standard Gaussian with correlation `rho`, scalar blocks.
    pub fn standard_bivariate(rho: f64) -> Result<Self> {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
        Self::new(vec![0.0, 0.0], cov, BlockDecomposition::new(&[1, 1])?)
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn joint(&self) -> Result<GaussianFactor> {
        GaussianFactor::new(self.mean.clone(), self.cov.clone())
    }

    fn quad_form(&self, theta: &[f64]) -> f64 {
        let d = self.mean.len();
        let mut q = 0.0;
        for r in 0..d {
            let dr = theta[r] - self.mean[r];
            let mut row = 0.0;
            for c in 0..d {
                row += self.precision[(r, c)] * (theta[c] - self.mean[c]);
            }
            q += dr * row;
        }
        q
    }

    fn conditional_mean(&self, block: usize, theta: &[f64]) -> DVector<f64> {
        let bc = &self.blocks[block];
        let own = self.decomposition.range(block);
        DVector::from_fn(own.len(), |r, _| {
            let mut s = self.mean[own.start + r];
            for (k, &j) in bc.complement.iter().enumerate() {
                s -= bc.regression[(r, k)] * (theta[j] - self.mean[j]);
            }
            s
        })
    }

    /// `π(θᵢ | θ₋ᵢ)`: mean `μᵢ − Λᵢᵢ⁻¹Λᵢ,₋ᵢ(θ₋ᵢ − μ₋ᵢ)`, covariance `Λᵢᵢ⁻¹`.
    pub fn gaussian_full_conditional(&self, block: usize, theta: &[f64]) -> Result<GaussianFactor> {
        self.decomposition.check_block(block)?;
        self.decomposition.check_len(theta.len())?;
        if let Some(pos) = theta.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        let mut f = self.blocks[block].cond_factor.clone();
        f.mean = self.conditional_mean(block, theta);
        Ok(f)
    }

    pub fn gaussian_marginal(&self, block: usize) -> Result<GaussianFactor> {
        self.decomposition.check_block(block)?;
        Ok(self.blocks[block].marginal.clone())
    }

    /// Marginal of all blocks except `block`, coordinates in block order.
    pub fn gaussian_complement_marginal(&self, block: usize) -> Result<GaussianFactor> {
        self.decomposition.check_block(block)?;
        Ok(self.blocks[block].complement_marginal.clone())
    }

    /// `I(θᵢ; θ₋ᵢ) = ½(log det Σᵢᵢ + log det Σ₋ᵢ,₋ᵢ − log det Σ)`.
    pub fn gaussian_mutual_information(&self, block: usize) -> Result<f64> {
        self.decomposition.check_block(block)?;
        let bc = &self.blocks[block];
        let mi = 0.5 * (bc.marginal.log_det + bc.complement_marginal.log_det - self.log_det);
        Ok(mi.max(0.0))
    }

    /// Mean-field fixed point of block `block`.
    ///
    /// The coordinate update sets the factor mean to the conditional mean
    /// evaluated at the other factors' means, with covariance `Λᵢᵢ⁻¹`. The
    /// stacked fixed-point system is `Λ (m − μ) = 0`, whose unique solution
    /// for positive-definite `Λ` is `m = μ`.
    pub fn gaussian_cavi_fixed_point(&self, block: usize) -> Result<GaussianFactor> {
        self.decomposition.check_block(block)?;
        let own: Vec<usize> = self.decomposition.range(block).collect();
        GaussianFactor::new(select_vec(&self.mean, &own), self.blocks[block].cond_cov.clone())
    }

    /// Closed-form optimal coordinate update given Gaussian factors for the other blocks.
    /// Only the other factors' means enter.
    pub fn gaussian_cavi_update(
        &self,
        block: usize,
        factors: &[GaussianFactor],
    ) -> Result<GaussianFactor> {
        self.decomposition.check_block(block)?;
        let mut point = vec![0.0; self.decomposition.total_dim()];
        for (b, f) in factors.iter().enumerate() {
            if b == block {
                continue;
            }
            let r = self.decomposition.range(b);
            if f.dim() != r.len() {
                return Err(Error::DimensionMismatch {
                    expected: r.len(),
                    found: f.dim(),
                });
            }
            point[r].copy_from_slice(f.mean.as_slice());
        }
        self.gaussian_full_conditional(block, &point)
    }

    /// Stack block factors into the block-diagonal joint Gaussian.
    pub fn product_of_factors(&self, factors: &[GaussianFactor]) -> Result<GaussianFactor> {
        let d = self.decomposition.total_dim();
        let mut mean = DVector::zeros(d);
        let mut cov = DMatrix::zeros(d, d);
        if factors.len() != self.decomposition.num_blocks() {
            return Err(Error::DimensionMismatch {
                expected: self.decomposition.num_blocks(),
                found: factors.len(),
            });
        }
        for (b, f) in factors.iter().enumerate() {
            let r = self.decomposition.range(b);
            if f.dim() != r.len() {
                return Err(Error::DimensionMismatch {
                    expected: r.len(),
                    found: f.dim(),
                });
            }
            for (i, gi) in r.clone().enumerate() {
                mean[gi] = f.mean[i];
                for (j, gj) in r.clone().enumerate() {
                    cov[(gi, gj)] = f.cov[(i, j)];
                }
            }
        }
        GaussianFactor::new(mean, cov)
    }

    /// `KL(∏ qᵢ ‖ π)` in closed form.
    pub fn gaussian_kl_objective(&self, factors: &[GaussianFactor]) -> Result<f64> {
        gaussian_kl(&self.product_of_factors(factors)?, &self.joint()?)
    }

    /// `log ∫ exp E_{q₋ᵢ}[log π(θᵢ|θ₋ᵢ)] dθᵢ = −½ tr(Λᵢ,₋ᵢ S₋ᵢ Λ₋ᵢ,ᵢ Λᵢᵢ⁻¹)` for
    /// Gaussian factors with block-diagonal complement covariance `S₋ᵢ`.
    pub fn gaussian_log_squash_numerator(
        &self,
        block: usize,
        factors: &[GaussianFactor],
    ) -> Result<f64> {
        let s = self.complement_product_covariance(block, factors)?;
        let bc = &self.blocks[block];
        let own: Vec<usize> = self.decomposition.range(block).collect();
        let lam_ic = select(&self.precision, &own, &bc.complement);
        let t = (&lam_ic * s * lam_ic.transpose() * &bc.cond_cov).trace();
        Ok(-0.5 * t)
    }

    /// `log ∫ exp E_{qᵢ}[log π(θ₋ᵢ|θᵢ)] dθ₋ᵢ = −½ tr(B Sᵢ Bᵀ C⁻¹)` with
    /// `B = Σ₋ᵢ,ᵢ Σᵢᵢ⁻¹` and `C` the covariance of `π(θ₋ᵢ|θᵢ)`.
    pub fn gaussian_log_kl_bound_raw(&self, block: usize, factor: &GaussianFactor) -> Result<f64> {
        self.decomposition.check_block(block)?;
        let bc = &self.blocks[block];
        let own: Vec<usize> = self.decomposition.range(block).collect();
        let s_ci = select(&self.cov, &bc.complement, &own);
        let s_ii_inv = bc.marginal.precision();
        let b = &s_ci * s_ii_inv;
        let c = bc.complement_marginal.cov.clone() - &b * s_ci.transpose();
        let c_inv = c
            .cholesky()
            .ok_or_else(|| Error::InvalidModel("conditional covariance is singular".into()))?
            .inverse();
        let t = (&b * &factor.cov * b.transpose() * c_inv).trace();
        Ok(-0.5 * t)
    }

    fn complement_product_covariance(
        &self,
        block: usize,
        factors: &[GaussianFactor],
    ) -> Result<DMatrix<f64>> {
        self.decomposition.check_block(block)?;
        let n = self.decomposition.total_dim() - self.decomposition.block_dim(block);
        let mut s = DMatrix::zeros(n, n);
        let mut at = 0;
        for (b, f) in factors.iter().enumerate() {
            if b == block {
                continue;
            }
            let d = self.decomposition.block_dim(b);
            if f.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: f.dim(),
                });
            }
            s.view_mut((at, at), (d, d)).copy_from(&f.cov);
            at += d;
        }
        Ok(s)
    }

    /// Product of the complement factors as one Gaussian on `Θ₋ᵢ`.
    pub fn complement_product(
        &self,
        block: usize,
        factors: &[GaussianFactor],
    ) -> Result<GaussianFactor> {
        let s = self.complement_product_covariance(block, factors)?;
        let mean: Vec<f64> = factors
            .iter()
            .enumerate()
            .filter(|(b, _)| *b != block)
            .flat_map(|(_, f)| f.mean.iter().copied().collect::<Vec<_>>())
            .collect();
        GaussianFactor::new(DVector::from_vec(mean), s)
    }

    fn gaussians(factors: &[Factor]) -> Option<Vec<GaussianFactor>> {
        factors.iter().map(|f| f.as_gaussian().cloned()).collect()
    }
}

impl TargetModel for GaussianTarget {
    fn decomposition(&self) -> &BlockDecomposition {
        &self.decomposition
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            has_analytic_marginals: true,
            is_discrete: false,
        }
    }

    fn support(&self, _block: usize) -> Support {
        Support::Real
    }

    fn log_unnormalized_posterior(&self, theta: &[f64]) -> f64 {
        -0.5 * self.quad_form(theta)
    }

    fn full_conditional(&self, block: usize, theta: &[f64]) -> Result<Factor> {
        self.gaussian_full_conditional(block, theta).map(Factor::Gaussian)
    }

    fn log_full_conditional(&self, block: usize, theta: &[f64]) -> Result<f64> {
        self.decomposition.check_block(block)?;
        let bc = &self.blocks[block];
        let own = self.decomposition.range(block);
        let m = self.conditional_mean(block, theta);
        let x: Vec<f64> = own.clone().map(|j| theta[j]).collect();
        let mut f = bc.cond_factor.clone();
        f.mean = m;
        Ok(f.log_density(&x))
    }

    fn block_grid(&self, block: usize, points: usize) -> Result<BlockGrid> {
        self.decomposition.check_block(block)?;
        let axes = self
            .decomposition
            .range(block)
            .map(|j| {
                let sd = self.cov[(j, j)].sqrt();
                Rule1d::trapezoid(
                    self.mean[j] - GRID_HALF_WIDTH_SDS * sd,
                    self.mean[j] + GRID_HALF_WIDTH_SDS * sd,
                    points,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BlockGrid::new(axes))
    }

    fn log_evidence(&self) -> Option<f64> {
        Some(0.5 * (self.decomposition.total_dim() as f64 * LN_2PI + self.log_det))
    }

    fn closed_form_cavi_update(&self, block: usize, factors: &[Factor]) -> Option<Result<Factor>> {
        let gs = Self::gaussians(factors)?;
        Some(self.gaussian_cavi_update(block, &gs).map(Factor::Gaussian))
    }

    fn closed_form_kl_objective(&self, factors: &[Factor]) -> Option<Result<f64>> {
        let gs = Self::gaussians(factors)?;
        Some(self.gaussian_kl_objective(&gs))
    }

    fn as_analytic(&self) -> Option<&dyn AnalyticMarginals> {
        Some(self)
    }

    fn family(&self) -> &'static str {
        "gaussian"
    }
}

impl AnalyticMarginals for GaussianTarget {
    fn log_posterior(&self, theta: &[f64]) -> f64 {
        -0.5 * (self.decomposition.total_dim() as f64 * LN_2PI + self.log_det + self.quad_form(theta))
    }

    fn log_block_marginal(&self, block: usize, theta: &[f64]) -> f64 {
        let r = self.decomposition.range(block);
        self.blocks[block].marginal.log_density(&theta[r])
    }

    fn log_complement_marginal(&self, block: usize, theta: &[f64]) -> f64 {
        let bc = &self.blocks[block];
        let x: Vec<f64> = bc.complement.iter().map(|&j| theta[j]).collect();
        bc.complement_marginal.log_density(&x)
    }

    fn block_marginal(&self, block: usize) -> Result<Factor> {
        self.gaussian_marginal(block).map(Factor::Gaussian)
    }

    fn closed_form_mutual_information(&self, block: usize) -> Option<Result<f64>> {
        Some(self.gaussian_mutual_information(block))
    }

    fn closed_form_complement_kl(&self, block: usize, factors: &[Factor]) -> Option<Result<f64>> {
        let gs = Self::gaussians(factors)?;
        Some(
            self.complement_product(block, &gs)
                .and_then(|q| gaussian_kl(&q, &self.blocks[block].complement_marginal)),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn independence_conditional_is_marginal() {
        let t = GaussianTarget::standard_bivariate(0.0).unwrap();
        for x2 in [-3.0, 0.0, 2.5] {
            let c = t.gaussian_full_conditional(0, &[0.0, x2]).unwrap();
            assert_abs_diff_eq!(c.mean()[0], 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(c.variance(), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn conditional_rho_half() {
        let t = GaussianTarget::standard_bivariate(0.5).unwrap();
        let c = t.gaussian_full_conditional(0, &[0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(c.mean()[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(c.variance(), 0.75, epsilon = 1e-14);
        // grid renormalization of exp(log-joint) along θ₁ at θ₂ = 1
        let (m, v) = oracles::grid_conditional_moments_1d(|x| t.log_unnormalized_posterior(&[x, 1.0]), -8.0, 9.0);
        assert_abs_diff_eq!(m, 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(v, 0.75, epsilon = 1e-10);
    }

    #[test]
    fn marginals_of_standard_bivariate() {
        for rho in [0.0, 0.9] {
            let t = GaussianTarget::standard_bivariate(rho).unwrap();
            for b in 0..2 {
                let m = t.gaussian_marginal(b).unwrap();
                assert_abs_diff_eq!(m.mean()[0], 0.0);
                assert_abs_diff_eq!(m.variance(), 1.0);
            }
        }
    }

    #[test]
    fn kl_examples() {
        let a = GaussianFactor::univariate(0.0, 0.75).unwrap();
        let b = GaussianFactor::univariate(0.0, 1.0).unwrap();
        assert_abs_diff_eq!(gaussian_kl(&b, &b).unwrap(), 0.0, epsilon = 1e-15);
        let kl = gaussian_kl(&a, &b).unwrap();
        assert_abs_diff_eq!(kl, 0.018_841_036_225_890_45, epsilon = 1e-14);
        assert_abs_diff_eq!(kl, oracles::kl_quadrature_1d(&a, &b), epsilon = 1e-8);
        let c = GaussianFactor::univariate(1.0, 1.0).unwrap();
        assert_abs_diff_eq!(gaussian_kl(&c, &b).unwrap(), 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(oracles::kl_quadrature_1d(&c, &b), 0.5, epsilon = 1e-8);
        let d2 = GaussianFactor::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        assert!(matches!(gaussian_kl(&a, &d2), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn entropy_and_mutual_information() {
        let n01 = GaussianFactor::univariate(0.0, 1.0).unwrap();
        assert_abs_diff_eq!(gaussian_entropy(&n01), 1.418_938_533_204_672_7, epsilon = 1e-14);
        assert_abs_diff_eq!(oracles::entropy_quadrature_1d(&n01), 1.418_938_533_204_672_7, epsilon = 1e-8);
        let t0 = GaussianTarget::standard_bivariate(0.0).unwrap();
        assert_abs_diff_eq!(t0.gaussian_mutual_information(0).unwrap(), 0.0, epsilon = 1e-15);
        let t = GaussianTarget::standard_bivariate(0.5).unwrap();
        let mi = t.gaussian_mutual_information(0).unwrap();
        assert_abs_diff_eq!(mi, 0.143_841_036_225_890_45, epsilon = 1e-14);
        assert_abs_diff_eq!(oracles::mutual_information_quadrature_2d(&t), mi, epsilon = 1e-8);
    }

    #[test]
    fn cavi_fixed_points() {
        let t0 = GaussianTarget::standard_bivariate(0.0).unwrap();
        let q = t0.gaussian_cavi_fixed_point(0).unwrap();
        assert_abs_diff_eq!(q.variance(), 1.0);
        let t = GaussianTarget::standard_bivariate(0.5).unwrap();
        assert_abs_diff_eq!(t.gaussian_cavi_fixed_point(0).unwrap().variance(), 0.75, epsilon = 1e-14);
        let t9 = GaussianTarget::standard_bivariate(0.9).unwrap();
        let q9 = t9.gaussian_cavi_fixed_point(0).unwrap();
        assert_abs_diff_eq!(q9.variance(), 0.19, epsilon = 1e-14);
        assert!(q9.variance() < t9.gaussian_marginal(0).unwrap().variance());
    }

    #[test]
    fn cavi_update_example() {
        let t = GaussianTarget::standard_bivariate(0.5).unwrap();
        let q2 = GaussianFactor::univariate(0.3, 0.75).unwrap();
        let any = GaussianFactor::univariate(5.0, 3.0).unwrap();
        let up = t.gaussian_cavi_update(0, &[any, q2]).unwrap();
        assert_abs_diff_eq!(up.mean()[0], 0.15, epsilon = 1e-15);
        assert_abs_diff_eq!(up.variance(), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn closed_form_squash_pieces() {
        let rho: f64 = 0.5;
        let t = GaussianTarget::standard_bivariate(rho).unwrap();
        let q: Vec<_> = (0..2).map(|b| t.gaussian_cavi_fixed_point(b).unwrap()).collect();
        assert_abs_diff_eq!(t.gaussian_log_squash_numerator(0, &q).unwrap(), -rho * rho / 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(t.gaussian_log_kl_bound_raw(0, &q[0]).unwrap(), -rho * rho / 2.0, epsilon = 1e-14);
    }

    #[test]
    fn invalid_covariances_rejected() {
        let dec = BlockDecomposition::new(&[1, 1]).unwrap();
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(GaussianTarget::new(vec![0.0, 0.0], asym, dec.clone()).is_err());
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(GaussianTarget::new(vec![0.0, 0.0], singular, dec.clone()).is_err());
        let ill = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-9]);
        assert!(GaussianTarget::new(vec![0.0, 0.0], ill, dec.clone()).is_err());
        let ok = DMatrix::identity(2, 2);
        assert!(GaussianTarget::new(vec![0.0], ok, dec).is_err());
    }

    #[test]
    fn precision_inverts_covariance() {
        let t = oracles::random_gaussian_target(&[1, 2], 17);
        let d = 3;
        let r = (t.precision() * t.covariance() - DMatrix::identity(d, d)).amax();
        assert!(r < 1e-8);
    }

    #[test]
    fn three_dim_conditional_matches_grid_normalization() {
        // dims [1, 2]; block 0 is scalar, so the conditional is checked by 1-D quadrature
        let t = oracles::random_gaussian_target(&[1, 2], 5);
        let theta = [0.0, 0.7, -1.2];
        let c = t.gaussian_full_conditional(0, &theta).unwrap();
        let sd = c.variance().sqrt();
        let (m, v) = oracles::grid_conditional_moments_1d(
            |x| t.log_unnormalized_posterior(&[x, theta[1], theta[2]]),
            c.mean()[0] - 8.0 * sd,
            c.mean()[0] + 8.0 * sd,
        );
        assert_abs_diff_eq!(m, c.mean()[0], epsilon = 1e-8);
        assert_abs_diff_eq!(v, c.variance(), epsilon = 1e-8);
        // and the normalized density itself agrees pointwise
        let log_z = oracles::log_normalizer_1d(
            |x| t.log_unnormalized_posterior(&[x, theta[1], theta[2]]),
            c.mean()[0] - 8.0 * sd,
            c.mean()[0] + 8.0 * sd,
        );
        for x in [-1.0, 0.0, 0.3, 1.7] {
            let grid_val = (t.log_unnormalized_posterior(&[x, theta[1], theta[2]]) - log_z).exp();
            assert_abs_diff_eq!(grid_val, c.log_density(&[x]).exp(), epsilon = 1e-8);
        }
    }

    #[test]
    fn marginal_sampling_oracle() {
        use rand::SeedableRng;
        let t = GaussianTarget::standard_bivariate(0.9).unwrap();
        let joint = t.joint().unwrap();
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(99);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| joint.sample(&mut rng)[1]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let m = t.gaussian_marginal(1).unwrap();
        let se_mean = (m.variance() / n as f64).sqrt();
        let se_var = m.variance() * (2.0 / (n - 1) as f64).sqrt();
        assert!((mean - m.mean()[0]).abs() < 3.0 * se_mean);
        assert!((var - m.variance()).abs() < 3.0 * se_var);
    }

    #[test]
    fn conditionals_normalize_on_reference_grid() {
        let t = oracles::random_gaussian_target(&[1, 1, 1], 8);
        for b in 0..3 {
            let c = t.full_conditional(b, &[0.4, -0.2, 1.1]).unwrap();
            let mass = crate::model::conditional_mass(&c, 4097).unwrap();
            assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-8);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn joint_factorizes_into_conditional_times_complement(seed in 0u64..1000, x in prop::collection::vec(-3.0f64..3.0, 3)) {
            let t = oracles::random_gaussian_target(&[1, 2], seed);
            for b in 0..2 {
                let lhs = t.log_posterior(&x);
                let rhs = t.log_full_conditional(b, &x).unwrap() + t.log_complement_marginal(b, &x);
                prop_assert!((lhs - rhs).abs() < 1e-10, "{} vs {}", lhs, rhs);
            }
        }

        #[test]
        fn kl_nonnegative_and_zero_on_identity(m1 in -3.0f64..3.0, v1 in 0.1f64..5.0, m2 in -3.0f64..3.0, v2 in 0.1f64..5.0) {
            let a = GaussianFactor::univariate(m1, v1).unwrap();
            let b = GaussianFactor::univariate(m2, v2).unwrap();
            prop_assert!(gaussian_kl(&a, &b).unwrap() >= 0.0);
            prop_assert!(gaussian_kl(&a, &a).unwrap().abs() < 1e-12);
        }

        #[test]
        fn mutual_information_invariant_under_rescaling(seed in 0u64..500, s in prop::collection::vec(0.2f64..5.0, 3)) {
            let t = oracles::random_gaussian_target(&[1, 2], seed);
            let scale = DMatrix::from_diagonal(&DVector::from_vec(s));
            let cov = &scale * t.covariance() * &scale;
            let cov = 0.5 * (&cov + cov.transpose());
            if let Ok(t2) = GaussianTarget::new(vec![0.0; 3], cov, BlockDecomposition::new(&[1, 2]).unwrap()) {
                for b in 0..2 {
                    let d = t.gaussian_mutual_information(b).unwrap() - t2.gaussian_mutual_information(b).unwrap();
                    prop_assert!(d.abs() < 1e-10);
                }
            }
        }

        #[test]
        fn fixed_point_variance_below_marginal(seed in 0u64..1000) {
            let t = oracles::random_gaussian_target(&[1, 1, 1], seed);
            for b in 0..3 {
                let q = t.gaussian_cavi_fixed_point(b).unwrap();
                let m = t.gaussian_marginal(b).unwrap();
                prop_assert!(q.variance() <= m.variance() + 1e-12);
            }
        }
    }
}
