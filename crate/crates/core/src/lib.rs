//! Block Gibbs sampling, coordinate-ascent variational inference and
//! numerical checks of the duality formula and its corollaries, for targets
//! whose parameter space is split into blocks.
//!
//! Block indices are 0-based throughout the API. Reports, CSV headers and
//! error messages number blocks from 1.

pub mod cavi;
pub mod decomposition;
pub mod diagnostics;
pub mod discrete;
pub mod error;
pub mod factor;
pub mod gaussian;
pub mod gibbs;
pub mod model;
pub mod output;
pub mod quadrature;

#[cfg(any(test, feature = "oracles"))]
pub mod oracles;

pub use cavi::{cavi_run, cavi_update, kl_objective, CaviConfig, CaviInit, MeanFieldState, UpdatePath};
pub use decomposition::{BlockDecomposition, BlockView, ParamVector};
pub use discrete::{DiscreteFactor, DiscreteTarget};
pub use error::{Error, Result};
pub use factor::{ConditionalDensity, Factor, TabulatedFactor};
pub use gaussian::{gaussian_entropy, gaussian_kl, GaussianFactor, GaussianTarget};
pub use gibbs::{
    estimate, gibbs_cycle, kernel_log_density, run_chain, ChainTrace, Estimand, Estimate, GibbsConfig,
};
pub use model::{AnalyticMarginals, Capabilities, Initializer, Support, TargetModel};
pub use quadrature::{BlockGrid, LogSumExp, Rule1d};
