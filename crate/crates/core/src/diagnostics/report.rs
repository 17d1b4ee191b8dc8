//! Aggregated diagnostics for one model, one or more Gibbs chains and one
//! mean-field state.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::functional::functional_suite;
use super::information::information_equality_check;
use super::squash::{kl_lower_bound, squash_pointwise_check, squashing_constant};
use super::{random_complement_point, DiagnosticsConfig};
use crate::cavi::{fixed_point_defect, MeanFieldState, UpdatePath};
use crate::error::{Error, Result};
use crate::factor::Factor;
use crate::gibbs::{estimate_with, kernel_matrix, ChainTrace, Estimate};
use crate::model::{AnalyticMarginals, Support};
use crate::output::{fmt_f64, CsvWriter};

/// Kernels are enumerated only for state spaces up to this size.
pub const MAX_KERNEL_STATES: usize = 1024;

pub const GAP_TOLERANCE: f64 = 1e-10;
pub const FUNCTIONAL_TOLERANCE: f64 = 1e-8;
pub const SQUASH_TOLERANCE: f64 = 1e-10;
pub const OBJECTIVE_SLACK: f64 = 1e-10;
pub const KERNEL_TOLERANCE: f64 = 1e-12;
/// Absolute allowance added to the Monte Carlo standard-error band.
pub const MC_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Le,
    Ge,
    Gt,
}

/// One named comparison `value <relation> threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub relation: Relation,
    pub passed: bool,
}

impl Check {
    fn new(name: impl Into<String>, value: f64, relation: Relation, threshold: f64) -> Self {
        let passed = match relation {
            Relation::Le => value <= threshold,
            Relation::Ge => value >= threshold,
            Relation::Gt => value > threshold,
        };
        Self {
            name: name.into(),
            value,
            threshold,
            relation,
            passed,
        }
    }
}

/// Pooled Monte Carlo estimates of the information quantities of one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimates {
    pub samples: usize,
    pub mutual_information: f64,
    pub mutual_information_se: Option<f64>,
    pub entropy_complement: f64,
    pub entropy_complement_se: Option<f64>,
    pub cond_entropy_complement: f64,
    pub cond_entropy_complement_se: Option<f64>,
}

/// Per-block record. Blocks are numbered from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub block: usize,
    pub dim: usize,
    pub complement_points: usize,
    /// Smallest duality gap over the complement points.
    pub duality_gap: f64,
    /// `F_i` at the full conditional, first complement point.
    pub f_full_conditional: f64,
    /// `log π(θ₋ᵢ)`, first complement point.
    pub log_complement_marginal: f64,
    /// Largest `|F_i(full conditional) − log π(θ₋ᵢ)|` over the complement points.
    pub f_full_conditional_error: f64,
    pub f_max_excess: f64,
    pub f_min_shortfall: f64,
    /// Random candidates excluded from the shortfall as indistinguishable
    /// from the full conditional.
    pub f_near_conditional_candidates: usize,
    pub concavity_min_slack: f64,
    pub mutual_information: f64,
    pub mutual_information_quadrature: f64,
    pub entropy_complement: f64,
    pub cond_entropy_complement: f64,
    pub entropy_block: f64,
    pub cond_entropy_block: f64,
    pub info_residual: f64,
    pub info_symmetric_residual: f64,
    pub info_tolerance: f64,
    pub squash_log_numerator: f64,
    pub squash_kl_complement: f64,
    pub squashing_constant: f64,
    pub squash_min_slack: f64,
    pub kl_factor_marginal: f64,
    pub kl_bound: f64,
    pub kl_bound_raw: f64,
    pub kl_bound_raw_positive: bool,
    pub mc: Option<McEstimates>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSummary {
    pub states: usize,
    pub max_row_defect: f64,
    pub stationarity_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub chains: usize,
    pub seeds: Vec<u64>,
    pub samples: Vec<usize>,
    pub burn_in: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    pub cycles: usize,
    pub converged: bool,
    pub last_change: f64,
    pub final_objective: Option<f64>,
    /// Largest increase between consecutive objective values.
    pub objective_max_increase: Option<f64>,
    pub fixed_point_defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub family: String,
    pub block_dims: Vec<usize>,
    pub settings: DiagnosticsConfig,
    pub chains: Option<ChainSummary>,
    pub state: StateSummary,
    pub kernel: Option<KernelSummary>,
    pub blocks: Vec<BlockReport>,
    pub checks: Vec<Check>,
    /// Names of the failed checks.
    pub failures: Vec<String>,
    /// Observations that are reported but not judged.
    pub flags: Vec<String>,
    pub passed: bool,
    /// Echo of the run configuration, filled in by callers that have one.
    #[serde(default)]
    pub config: Option<serde_json::Value>,
}

const CSV_COLUMNS: &[&str] = &[
    "block",
    "dim",
    "complement_points",
    "duality_gap",
    "f_full_conditional",
    "log_complement_marginal",
    "f_full_conditional_error",
    "f_max_excess",
    "f_min_shortfall",
    "concavity_min_slack",
    "mutual_information",
    "mutual_information_quadrature",
    "entropy_complement",
    "cond_entropy_complement",
    "entropy_block",
    "cond_entropy_block",
    "info_residual",
    "info_symmetric_residual",
    "info_tolerance",
    "squash_log_numerator",
    "squash_kl_complement",
    "squashing_constant",
    "squash_min_slack",
    "kl_factor_marginal",
    "kl_bound",
    "kl_bound_raw",
    "kl_bound_raw_positive",
    "f_near_conditional_candidates",
    "mc_samples",
    "mc_mutual_information",
    "mc_mutual_information_se",
    "mc_entropy_complement",
    "mc_entropy_complement_se",
    "mc_cond_entropy_complement",
    "mc_cond_entropy_complement_se",
];

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

impl DiagnosticsReport {
    /// One row per block; empty cells where no Monte Carlo estimate exists.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut csv = CsvWriter::new(out);
        csv.row(CSV_COLUMNS)?;
        for b in &self.blocks {
            let mut row = vec![b.block.to_string(), b.dim.to_string(), b.complement_points.to_string()];
            row.extend(
                [
                    b.duality_gap,
                    b.f_full_conditional,
                    b.log_complement_marginal,
                    b.f_full_conditional_error,
                    b.f_max_excess,
                    b.f_min_shortfall,
                    b.concavity_min_slack,
                    b.mutual_information,
                    b.mutual_information_quadrature,
                    b.entropy_complement,
                    b.cond_entropy_complement,
                    b.entropy_block,
                    b.cond_entropy_block,
                    b.info_residual,
                    b.info_symmetric_residual,
                    b.info_tolerance,
                    b.squash_log_numerator,
                    b.squash_kl_complement,
                    b.squashing_constant,
                    b.squash_min_slack,
                    b.kl_factor_marginal,
                    b.kl_bound,
                    b.kl_bound_raw,
                ]
                .map(fmt_f64),
            );
            row.push(b.kl_bound_raw_positive.to_string());
            row.push(b.f_near_conditional_candidates.to_string());
            match &b.mc {
                Some(m) => row.extend([
                    m.samples.to_string(),
                    fmt_f64(m.mutual_information),
                    opt(m.mutual_information_se),
                    fmt_f64(m.entropy_complement),
                    opt(m.entropy_complement_se),
                    fmt_f64(m.cond_entropy_complement),
                    opt(m.cond_entropy_complement_se),
                ]),
                None => row.extend(std::iter::repeat_n(String::new(), 7)),
            }
            csv.row(&row)?;
        }
        csv.flush()
    }
}

fn check_traces(model: &dyn AnalyticMarginals, traces: &[ChainTrace]) -> Result<()> {
    for (c, t) in traces.iter().enumerate() {
        if &t.decomposition != model.decomposition() {
            return Err(Error::InvalidConfig(format!(
                "chain {} was run on a model with block dimensions {:?}, not {:?}",
                c + 1,
                t.decomposition.block_dims(),
                model.decomposition().block_dims()
            )));
        }
    }
    Ok(())
}

fn pooled(traces: &[ChainTrace], f: &dyn Fn(&[f64]) -> f64) -> Result<Estimate> {
    let parts = traces
        .iter()
        .map(|t| estimate_with(t, f))
        .collect::<Result<Vec<_>>>()?;
    Estimate::pool(&parts)
}

fn mc_estimates(model: &dyn AnalyticMarginals, traces: &[ChainTrace], block: usize) -> Result<McEstimates> {
    let mi = pooled(traces, &|t| {
        model.log_posterior(t) - model.log_block_marginal(block, t) - model.log_complement_marginal(block, t)
    })?;
    let h = pooled(traces, &|t| -model.log_complement_marginal(block, t))?;
    let hc = pooled(traces, &|t| model.log_block_marginal(block, t) - model.log_posterior(t))?;
    Ok(McEstimates {
        samples: mi.n,
        mutual_information: mi.mean,
        mutual_information_se: mi.std_error,
        entropy_complement: h.mean,
        entropy_complement_se: h.std_error,
        cond_entropy_complement: hc.mean,
        cond_entropy_complement_se: hc.std_error,
    })
}

fn mc_check(name: String, mean: f64, se: Option<f64>, reference: f64, k: f64) -> Check {
    let threshold = se.map_or(f64::NAN, |s| k * s + MC_FLOOR);
    let mut c = Check::new(name, (mean - reference).abs(), Relation::Le, threshold);
    c.passed &= se.is_some();
    c
}

/// Update path that reproduces how a state's factors were computed.
fn state_path(state: &MeanFieldState) -> (UpdatePath, usize) {
    for f in &state.factors {
        if let Factor::Tabulated(t) = f {
            let points = t.grid().axes()[0].len();
            return (UpdatePath::Grid { points }, points);
        }
    }
    (UpdatePath::Analytic, crate::cavi::DEFAULT_GRID_POINTS)
}

/// Run every diagnostic for `model` against the Gibbs `traces` (may be
/// empty) and the mean-field `state`.
pub fn build_report(
    model: &dyn AnalyticMarginals,
    traces: &[ChainTrace],
    state: &MeanFieldState,
    cfg: &DiagnosticsConfig,
) -> Result<DiagnosticsReport> {
    cfg.validate()?;
    let dec = model.decomposition();
    state.check_against(model)?;
    check_traces(model, traces)?;
    for p in &cfg.complement_points {
        dec.check_len(p.len())?;
    }

    let mut points_rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut complement_points = cfg.complement_points.clone();
    for _ in 0..cfg.random_complement_points {
        complement_points.push(random_complement_point(model, &mut points_rng)?);
    }

    let mut checks = Vec::new();
    let mut flags = Vec::new();
    let mut blocks = Vec::new();
    for b in 0..dec.num_blocks() {
        let tag = format!("block{}", b + 1);
        let dim = dec.block_dim(b);
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(b as u64 + 1));

        let mut gap = f64::INFINITY;
        let mut cond_err: f64 = 0.0;
        let (mut excess, mut shortfall, mut slack) = (f64::NEG_INFINITY, f64::INFINITY, f64::INFINITY);
        let mut near = 0;
        let mut first = None;
        for theta in &complement_points {
            let s = functional_suite(model, b, theta, &state.factors[b], cfg, &mut rng)?;
            gap = gap.min(s.duality_gap);
            cond_err = cond_err.max((s.f_at_full_conditional - s.log_complement_marginal).abs());
            excess = excess.max(s.max_excess);
            shortfall = shortfall.min(s.min_shortfall);
            near += s.near_conditional_candidates;
            slack = slack.min(s.concavity_min_slack);
            first.get_or_insert((s.f_at_full_conditional, s.log_complement_marginal));
        }
        let (f_cond, reference) = first.unwrap_or((f64::NAN, f64::NAN));

        let info = information_equality_check(model, b, cfg.grid_points_nd)?;
        let squash = squashing_constant(model, &state.factors, b, cfg.grid_points_nd)?;
        let squash_slack = squash_pointwise_check(model, &state.factors, b, squash.r, cfg.squash_grid_points)?;
        let bound = kl_lower_bound(model, &state.factors, b, cfg.grid_points_nd)?;
        if bound.raw_positive {
            flags.push(format!("{tag}.kl_bound_raw is positive ({})", fmt_f64(bound.raw)));
        }
        let mc = if traces.is_empty() {
            None
        } else {
            Some(mc_estimates(model, traces, b)?)
        };

        checks.push(Check::new(format!("{tag}.duality_gap"), gap, Relation::Ge, -GAP_TOLERANCE));
        checks.push(Check::new(
            format!("{tag}.f_full_conditional_error"),
            cond_err,
            Relation::Le,
            FUNCTIONAL_TOLERANCE,
        ));
        checks.push(Check::new(format!("{tag}.f_max_excess"), excess, Relation::Le, FUNCTIONAL_TOLERANCE));
        checks.push(Check::new(format!("{tag}.f_min_shortfall"), shortfall, Relation::Gt, FUNCTIONAL_TOLERANCE));
        checks.push(Check::new(
            format!("{tag}.concavity_min_slack"),
            slack,
            Relation::Ge,
            -FUNCTIONAL_TOLERANCE,
        ));
        checks.push(Check::new(format!("{tag}.info_residual"), info.residual, Relation::Le, info.tolerance));
        checks.push(Check::new(
            format!("{tag}.info_symmetric_residual"),
            info.symmetric_residual,
            Relation::Le,
            info.tolerance,
        ));
        checks.push(Check::new(format!("{tag}.squashing_constant_positive"), squash.r, Relation::Gt, 0.0));
        checks.push(Check::new(
            format!("{tag}.squashing_constant_at_most_one"),
            squash.r,
            Relation::Le,
            1.0 + SQUASH_TOLERANCE,
        ));
        checks.push(Check::new(format!("{tag}.squash_min_slack"), squash_slack, Relation::Ge, -SQUASH_TOLERANCE));
        checks.push(Check::new(format!("{tag}.kl_factor_marginal"), bound.kl, Relation::Ge, 0.0));
        checks.push(Check::new(
            format!("{tag}.kl_minus_bound"),
            bound.kl - bound.bound,
            Relation::Ge,
            -SQUASH_TOLERANCE,
        ));
        if let Some(m) = &mc {
            let k = cfg.mc_standard_errors;
            checks.push(mc_check(
                format!("{tag}.mc_mutual_information"),
                m.mutual_information,
                m.mutual_information_se,
                info.mutual_information,
                k,
            ));
            checks.push(mc_check(
                format!("{tag}.mc_entropy_complement"),
                m.entropy_complement,
                m.entropy_complement_se,
                info.entropy_complement,
                k,
            ));
            checks.push(mc_check(
                format!("{tag}.mc_cond_entropy_complement"),
                m.cond_entropy_complement,
                m.cond_entropy_complement_se,
                info.cond_entropy_complement,
                k,
            ));
        }

        blocks.push(BlockReport {
            block: b + 1,
            dim,
            complement_points: complement_points.len(),
            duality_gap: gap,
            f_full_conditional: f_cond,
            log_complement_marginal: reference,
            f_full_conditional_error: cond_err,
            f_max_excess: excess,
            f_min_shortfall: shortfall,
            f_near_conditional_candidates: near,
            concavity_min_slack: slack,
            mutual_information: info.mutual_information,
            mutual_information_quadrature: info.mutual_information_quadrature,
            entropy_complement: info.entropy_complement,
            cond_entropy_complement: info.cond_entropy_complement,
            entropy_block: info.entropy_block,
            cond_entropy_block: info.cond_entropy_block,
            info_residual: info.residual,
            info_symmetric_residual: info.symmetric_residual,
            info_tolerance: info.tolerance,
            squash_log_numerator: squash.log_numerator,
            squash_kl_complement: squash.kl_complement,
            squashing_constant: squash.r,
            squash_min_slack: squash_slack,
            kl_factor_marginal: bound.kl,
            kl_bound: bound.bound,
            kl_bound_raw: bound.raw,
            kl_bound_raw_positive: bound.raw_positive,
            mc,
        });
    }

    let (path, points) = state_path(state);
    let defect = fixed_point_defect(model, &state.factors, path, points)?;
    checks.push(Check::new("state.fixed_point_defect", defect, Relation::Le, cfg.fixed_point_tolerance));
    let history = &state.objective_history;
    let max_increase = history
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.max(d))));
    if let Some(inc) = max_increase {
        checks.push(Check::new("state.objective_max_increase", inc, Relation::Le, OBJECTIVE_SLACK));
    }

    let finite_states: Option<usize> = (0..dec.num_blocks())
        .map(|b| match model.support(b) {
            Support::Finite(n) => Some(n),
            Support::Real => None,
        })
        .try_fold(1usize, |acc, n| n.and_then(|n| acc.checked_mul(n)));
    let kernel = match finite_states {
        Some(n) if n <= MAX_KERNEL_STATES => {
            let k = kernel_matrix(model)?;
            let summary = KernelSummary {
                states: k.states.len(),
                max_row_defect: k.max_row_defect(),
                stationarity_residual: k.stationarity_residual(model),
            };
            checks.push(Check::new(
                "kernel.max_row_defect",
                summary.max_row_defect,
                Relation::Le,
                KERNEL_TOLERANCE,
            ));
            checks.push(Check::new(
                "kernel.stationarity_residual",
                summary.stationarity_residual,
                Relation::Le,
                KERNEL_TOLERANCE,
            ));
            Some(summary)
        }
        _ => None,
    };

    let chains = (!traces.is_empty()).then(|| ChainSummary {
        chains: traces.len(),
        seeds: traces.iter().map(|t| t.seed).collect(),
        samples: traces.iter().map(ChainTrace::len).collect(),
        burn_in: traces[0].burn_in,
    });
    let failures: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    Ok(DiagnosticsReport {
        family: model.family().to_string(),
        block_dims: dec.block_dims().to_vec(),
        settings: cfg.clone(),
        chains,
        state: StateSummary {
            cycles: state.cycles,
            converged: state.converged,
            last_change: state.last_change,
            final_objective: history.last().copied(),
            objective_max_increase: max_increase,
            fixed_point_defect: defect,
        },
        kernel,
        blocks,
        passed: failures.is_empty(),
        checks,
        failures,
        flags,
        config: None,
    })
}
