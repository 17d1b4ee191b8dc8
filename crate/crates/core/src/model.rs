//! The target-model contract every engine and diagnostic is written against.

use rand::Rng;
use rand::RngCore;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::decomposition::{BlockDecomposition, ParamVector};
use crate::error::{Error, Result};
use crate::factor::Factor;
use crate::quadrature::BlockGrid;

/// Capability flags advertised by a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub has_analytic_marginals: bool,
    pub is_discrete: bool,
}

/// Declared support of one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    /// Unbounded real coordinates.
    Real,
    /// Integer values `0..n`.
    Finite(usize),
}

/// Initializer density `h(θ)` for a Gibbs chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initializer {
    /// Start from an explicit point.
    Point(Vec<f64>),
    /// Real coordinates drawn from N(0, 1); finite blocks uniformly.
    StandardNormal,
    /// Real coordinates drawn from U(low, high); finite blocks uniformly.
    Uniform { low: f64, high: f64 },
}

impl Initializer {
    pub fn label(&self) -> String {
        match self {
            Initializer::Point(_) => "point".into(),
            Initializer::StandardNormal => "standard_normal".into(),
            Initializer::Uniform { low, high } => format!("uniform({low},{high})"),
        }
    }
}

/// A Bayesian posterior over a block-decomposed parameter space.
///
/// Evaluations are pure; implementations are shared across threads.
pub trait TargetModel: Send + Sync {
    fn decomposition(&self) -> &BlockDecomposition;

    fn capabilities(&self) -> Capabilities;

    fn support(&self, block: usize) -> Support;

    /// `log π(θ|y)` up to an additive constant. `-inf` off the support.
    fn log_unnormalized_posterior(&self, theta: &[f64]) -> f64;

    /// Full conditional of block `block` given the other blocks of `theta`
    /// (the entries of block `block` itself are ignored).
    fn full_conditional(&self, block: usize, theta: &[f64]) -> Result<Factor>;

    /// `log π(θᵢ | θ₋ᵢ, y)` at the block values stored in `theta`.
    fn log_full_conditional(&self, block: usize, theta: &[f64]) -> Result<f64> {
        let range = self.decomposition().range(block);
        Ok(self
            .full_conditional(block, theta)?
            .log_density(&theta[range]))
    }

    /// Quadrature (continuous) or enumeration (finite) grid for a block.
    /// `points` is the number of nodes per continuous coordinate.
    fn block_grid(&self, block: usize, points: usize) -> Result<BlockGrid>;

    /// `log p(y)`, if known, so that `log_unnormalized_posterior - log_evidence`
    /// is the normalized log posterior.
    fn log_evidence(&self) -> Option<f64> {
        None
    }

    /// Closed-form coordinate update, for models where the optimal coordinate factor stays
    /// in a parametric family. `None` means "use the generic grid path".
    fn closed_form_cavi_update(&self, _block: usize, _factors: &[Factor]) -> Option<Result<Factor>> {
        None
    }

    /// Closed-form `KL(∏ qᵢ ‖ π(·|y))`, where available.
    fn closed_form_kl_objective(&self, _factors: &[Factor]) -> Option<Result<f64>> {
        None
    }

    fn as_analytic(&self) -> Option<&dyn AnalyticMarginals> {
        None
    }

    fn family(&self) -> &'static str;
}

/// Models whose normalized joint, block marginals and complement marginals
/// are all evaluatable.
pub trait AnalyticMarginals: TargetModel {
    /// Normalized `log π(θ|y)`.
    fn log_posterior(&self, theta: &[f64]) -> f64;

    /// `log π(θᵢ|y)` at block `block` of `theta`.
    fn log_block_marginal(&self, block: usize, theta: &[f64]) -> f64;

    /// `log π(θ₋ᵢ|y)` at the complement of block `block` in `theta`.
    fn log_complement_marginal(&self, block: usize, theta: &[f64]) -> f64;

    fn block_marginal(&self, block: usize) -> Result<Factor>;

    /// `log π(θ₋ᵢ | θᵢ, y)`.
    fn log_complement_conditional(&self, block: usize, theta: &[f64]) -> f64 {
        self.log_posterior(theta) - self.log_block_marginal(block, theta)
    }

    /// `I(θᵢ; θ₋ᵢ)` in closed form, where available.
    fn closed_form_mutual_information(&self, _block: usize) -> Option<Result<f64>> {
        None
    }

    /// `KL(∏_{j≠i} qⱼ ‖ π(θ₋ᵢ|y))` in closed form, where available.
    fn closed_form_complement_kl(&self, _block: usize, _factors: &[Factor]) -> Option<Result<f64>> {
        None
    }
}

/// Draw a starting point from an initializer.
pub fn initial_point(
    model: &dyn TargetModel,
    init: &Initializer,
    rng: &mut dyn RngCore,
) -> Result<ParamVector> {
    let dec = model.decomposition();
    match init {
        Initializer::Point(p) => {
            dec.check_len(p.len())?;
            ParamVector::new(p.clone())
        }
        Initializer::StandardNormal | Initializer::Uniform { .. } => {
            if let Initializer::Uniform { low, high } = init {
                if !(high > low) || !low.is_finite() || !high.is_finite() {
                    return Err(Error::InvalidConfig(format!(
                        "uniform initializer needs low < high, got [{low}, {high}]"
                    )));
                }
            }
            let mut values = Vec::with_capacity(dec.total_dim());
            for block in 0..dec.num_blocks() {
                for _ in dec.range(block) {
                    let v = match (model.support(block), init) {
                        (Support::Finite(n), _) => rng.random_range(0..n) as f64,
                        (Support::Real, Initializer::Uniform { low, high }) => {
                            rng.random_range(*low..*high)
                        }
                        (Support::Real, _) => rng.sample(StandardNormal),
                    };
                    values.push(v);
                }
            }
            ParamVector::new(values)
        }
    }
}

/// Total mass of a conditional density under its reference grid.
pub fn conditional_mass(factor: &Factor, points: usize) -> Result<f64> {
    let grid = factor.reference_grid(points)?;
    let logs = factor.tabulate(&grid);
    Ok(grid.log_integral(&logs).exp())
}
