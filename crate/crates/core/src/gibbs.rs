//! Systematic-scan block Gibbs sampler, its cycle kernel and Monte Carlo
//! estimators.

use std::io::Write;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::decomposition::{BlockDecomposition, ParamVector};
use crate::error::{Error, Result};
use crate::model::{initial_point, AnalyticMarginals, Initializer, Support, TargetModel};
use crate::output::{fmt_f64, CsvWriter};
use crate::quadrature::{visit_product, BlockGrid};

/// Number of batches used by batch-means standard errors.
pub const BATCHES: usize = 32;

/// Traces shorter than this get a mean but no standard error.
pub const MIN_SAMPLES_FOR_SE: usize = 64;

/// Settings for one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub n_cycles: usize,
    /// Defaults to 10% of `n_cycles` when absent.
    #[serde(default)]
    pub burn_in: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_init")]
    pub init: Initializer,
}

fn default_init() -> Initializer {
    Initializer::StandardNormal
}

impl GibbsConfig {
    pub fn new(n_cycles: usize, seed: u64) -> Self {
        Self {
            n_cycles,
            burn_in: None,
            seed,
            init: default_init(),
        }
    }

    pub fn effective_burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.n_cycles / 10)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cycles == 0 {
            return Err(Error::InvalidConfig("n_cycles must be positive".into()));
        }
        let b = self.effective_burn_in();
        if b >= self.n_cycles {
            return Err(Error::InvalidConfig(format!(
                "burn_in ({b}) must be smaller than n_cycles ({})",
                self.n_cycles
            )));
        }
        Ok(())
    }
}

/// Post-burn-in samples of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub decomposition: BlockDecomposition,
    pub samples: Vec<ParamVector>,
    /// Total cycles run, burn-in included.
    pub cycle_count: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Label of the initializer `h(θ)` that produced the first state.
    pub init: String,
}

impl ChainTrace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// CSV with header `cycle,block1_dim1,...`; cycles are numbered from 1 and
    /// count burn-in, so the first row is cycle `burn_in + 1`.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut csv = CsvWriter::new(out);
        let mut header = vec!["cycle".to_string()];
        header.extend(column_names(&self.decomposition));
        csv.row(&header)?;
        for (s, sample) in self.samples.iter().enumerate() {
            let mut row = vec![(self.burn_in + s + 1).to_string()];
            row.extend(sample.as_slice().iter().map(|&v| fmt_f64(v)));
            csv.row(&row)?;
        }
        csv.flush()
    }
}

/// `block{i}_dim{d}` names, 1-based, in parameter order.
pub fn column_names(dec: &BlockDecomposition) -> Vec<String> {
    (0..dec.num_blocks())
        .flat_map(|b| (0..dec.block_dim(b)).map(move |d| format!("block{}_dim{}", b + 1, d + 1)))
        .collect()
}

/// One systematic sweep: block `i` is drawn from its full conditional given
/// the blocks `j < i` already updated in this sweep and `j > i` from `theta`.
pub fn gibbs_cycle(
    model: &dyn TargetModel,
    theta: &ParamVector,
    rng: &mut dyn RngCore,
) -> Result<ParamVector> {
    let dec = model.decomposition();
    dec.check_len(theta.len())?;
    let mut next = theta.clone();
    for block in 0..dec.num_blocks() {
        let draw = model.full_conditional(block, next.as_slice())?.sample(rng);
        dec.substitute_in_place(next.as_mut_slice(), block, &draw)?;
    }
    Ok(next)
}

/// Run one chain with a ChaCha20 generator seeded from `cfg.seed`.
pub fn run_chain(model: &dyn TargetModel, cfg: &GibbsConfig) -> Result<ChainTrace> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let burn_in = cfg.effective_burn_in();
    let mut theta = initial_point(model, &cfg.init, &mut rng)?;
    let mut samples = Vec::with_capacity(cfg.n_cycles - burn_in);
    for cycle in 0..cfg.n_cycles {
        theta = gibbs_cycle(model, &theta, &mut rng)?;
        if cycle >= burn_in {
            samples.push(theta.clone());
        }
    }
    Ok(ChainTrace {
        decomposition: model.decomposition().clone(),
        samples,
        cycle_count: cfg.n_cycles,
        burn_in,
        seed: cfg.seed,
        init: cfg.init.label(),
    })
}

/// Run `chains` chains with seeds `seed, seed + 1, ...` on separate threads.
pub fn run_chains(model: &dyn TargetModel, cfg: &GibbsConfig, chains: usize) -> Result<Vec<ChainTrace>> {
    if chains == 0 {
        return Err(Error::InvalidConfig("at least one chain is required".into()));
    }
    cfg.validate()?;
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..chains)
            .map(|c| {
                let mut chain_cfg = cfg.clone();
                chain_cfg.seed = cfg.seed.wrapping_add(c as u64);
                scope.spawn(move || run_chain(model, &chain_cfg))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain thread panicked"))
            .collect()
    })
}

/// `log K_G(θ_from, θ_to) = Σᵢ log π(θᵢ_to | θ_{<i} from θ_to, θ_{>i} from θ_from)`.
///
/// Once a factor is `-inf` the path has probability zero and `-inf` is
/// returned without evaluating later conditionals, which may be undefined.
pub fn kernel_log_density(model: &dyn TargetModel, from: &ParamVector, to: &ParamVector) -> Result<f64> {
    let dec = model.decomposition();
    dec.check_len(from.len())?;
    dec.check_len(to.len())?;
    let mut state = from.as_slice().to_vec();
    let mut total = 0.0;
    for block in 0..dec.num_blocks() {
        let r = dec.range(block);
        state[r.clone()].copy_from_slice(&to.as_slice()[r]);
        let lp = model.log_full_conditional(block, &state)?;
        if lp == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        total += lp;
    }
    Ok(total)
}

/// Every state of a model whose blocks all have finite support, in row-major order.
pub fn enumerate_states(model: &dyn TargetModel) -> Result<Vec<ParamVector>> {
    let dec = model.decomposition();
    let mut grids = Vec::with_capacity(dec.num_blocks());
    for b in 0..dec.num_blocks() {
        match model.support(b) {
            Support::Finite(_) => grids.push(model.block_grid(b, 0)?),
            Support::Real => {
                return Err(Error::Unsupported(format!(
                    "block {} has continuous support; the kernel cannot be enumerated",
                    b + 1
                )))
            }
        }
    }
    let parts: Vec<(usize, &BlockGrid)> = grids.iter().enumerate().collect();
    let mut theta = vec![0.0; dec.total_dim()];
    let mut states = Vec::new();
    visit_product(dec, &parts, &mut theta, |t, _| {
        states.push(ParamVector::new(t.to_vec())?);
        Ok(())
    })?;
    Ok(states)
}

/// Enumerated cycle kernel on a finite model.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    pub states: Vec<ParamVector>,
    /// `rows[a][b] = K_G(states[a], states[b])`; `None` where `states[a]` has
    /// zero target mass and the first conditional is undefined.
    pub rows: Vec<Option<Vec<f64>>>,
}

pub fn kernel_matrix(model: &dyn TargetModel) -> Result<KernelMatrix> {
    let states = enumerate_states(model)?;
    let mut rows = Vec::with_capacity(states.len());
    for from in &states {
        let mut row = Vec::with_capacity(states.len());
        let mut defined = true;
        for to in &states {
            match kernel_log_density(model, from, to) {
                Ok(lp) => row.push(lp.exp()),
                Err(Error::ZeroMass { .. }) if model.log_unnormalized_posterior(from.as_slice()) == f64::NEG_INFINITY => {
                    defined = false;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        rows.push(defined.then_some(row));
    }
    Ok(KernelMatrix { states, rows })
}

impl KernelMatrix {
    /// Largest `|Σ_b K(a, b) − 1|` over defined rows.
    pub fn max_row_defect(&self) -> f64 {
        self.rows
            .iter()
            .flatten()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Largest `|(πᵀK)_b − π_b|`. Rows of zero-mass states do not contribute.
    pub fn stationarity_residual(&self, model: &dyn AnalyticMarginals) -> f64 {
        let pi: Vec<f64> = self
            .states
            .iter()
            .map(|s| model.log_posterior(s.as_slice()).exp())
            .collect();
        let mut out = vec![0.0; self.states.len()];
        for (a, row) in self.rows.iter().enumerate() {
            if let Some(row) = row {
                for (b, k) in row.iter().enumerate() {
                    out[b] += pi[a] * k;
                }
            }
        }
        out.iter()
            .zip(&pi)
            .map(|(x, p)| (x - p).abs())
            .fold(0.0, f64::max)
    }
}

/// A declared functional of the parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimand {
    Constant(f64),
    /// Flat coordinate index (0-based).
    Coordinate(usize),
    /// Product of two flat coordinates.
    Product(usize, usize),
}

impl Estimand {
    pub fn eval(&self, theta: &[f64]) -> f64 {
        match *self {
            Estimand::Constant(c) => c,
            Estimand::Coordinate(j) => theta[j],
            Estimand::Product(j, k) => theta[j] * theta[k],
        }
    }

    pub fn name(&self, dec: &BlockDecomposition) -> String {
        let cols = column_names(dec);
        match *self {
            Estimand::Constant(c) => format!("constant({c})"),
            Estimand::Coordinate(j) => cols[j].clone(),
            Estimand::Product(j, k) => format!("{}*{}", cols[j], cols[k]),
        }
    }
}

/// Sample mean with an optional batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: Option<f64>,
    pub n: usize,
}

impl Estimate {
    /// Mean and 32-batch batch-means standard error of `values`. Leading
    /// samples that do not fill a whole batch are excluded from the error only.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::InvalidConfig("cannot estimate from an empty trace".into()));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        if n < MIN_SAMPLES_FOR_SE {
            return Ok(Self { mean, std_error: None, n });
        }
        let size = n / BATCHES;
        let skip = n - size * BATCHES;
        let batch_means: Vec<f64> = values[skip..]
            .chunks_exact(size)
            .map(|c| c.iter().sum::<f64>() / size as f64)
            .collect();
        let grand = batch_means.iter().sum::<f64>() / BATCHES as f64;
        let var = batch_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
        Ok(Self {
            mean,
            std_error: Some((var / BATCHES as f64).sqrt()),
            n,
        })
    }

    /// Pool estimates from independent chains: sample-size weighted mean, and
    /// the standard error of that weighted mean when every part has one.
    pub fn pool(parts: &[Estimate]) -> Result<Self> {
        let n: usize = parts.iter().map(|p| p.n).sum();
        if n == 0 {
            return Err(Error::InvalidConfig("nothing to pool".into()));
        }
        let mean = parts.iter().map(|p| p.mean * p.n as f64).sum::<f64>() / n as f64;
        let std_error = parts
            .iter()
            .map(|p| p.std_error.map(|se| (se * p.n as f64).powi(2)))
            .sum::<Option<f64>>()
            .map(|s| s.sqrt() / n as f64);
        Ok(Self { mean, std_error, n })
    }

    /// `|mean − reference| ≤ k·SE + floor`; `false` without a standard error.
    pub fn agrees_with(&self, reference: f64, k: f64, floor: f64) -> bool {
        match self.std_error {
            Some(se) => (self.mean - reference).abs() <= k * se + floor,
            None => false,
        }
    }
}

pub fn estimate(trace: &ChainTrace, estimand: &Estimand) -> Result<Estimate> {
    estimate_with(trace, |t| estimand.eval(t))
}

pub fn estimate_with<F: Fn(&[f64]) -> f64>(trace: &ChainTrace, f: F) -> Result<Estimate> {
    let values: Vec<f64> = trace.samples.iter().map(|s| f(s.as_slice())).collect();
    Estimate::from_values(&values)
}

/// Every coordinate and every product of coordinates `j ≤ k`.
pub fn default_estimands(dec: &BlockDecomposition) -> Vec<Estimand> {
    let d = dec.total_dim();
    let mut out: Vec<Estimand> = (0..d).map(Estimand::Coordinate).collect();
    for j in 0..d {
        for k in j..d {
            out.push(Estimand::Product(j, k));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discrete::DiscreteTarget;
    use crate::gaussian::GaussianTarget;
    use approx::assert_abs_diff_eq;

    fn table() -> DiscreteTarget {
        DiscreteTarget::new(vec![2, 2], vec![0.4, 0.1, 0.2, 0.3]).unwrap()
    }

    #[test]
    fn burn_in_validation() {
        let mut cfg = GibbsConfig::new(100, 0);
        assert_eq!(cfg.effective_burn_in(), 10);
        cfg.burn_in = Some(100);
        assert!(cfg.validate().is_err());
        let t = GaussianTarget::standard_bivariate(0.0).unwrap();
        assert!(run_chain(&t, &cfg).is_err());
    }

    #[test]
    fn trace_length_and_seed_echo() {
        let t = GaussianTarget::standard_bivariate(0.3).unwrap();
        let mut cfg = GibbsConfig::new(200, 0);
        cfg.burn_in = Some(50);
        let tr = run_chain(&t, &cfg).unwrap();
        assert_eq!(tr.len(), 150);
        assert_eq!(tr.seed, 0);
        assert_eq!(tr.cycle_count, 200);
        assert_eq!(tr.init, "standard_normal");
    }

    #[test]
    fn same_seed_same_trace() {
        let t = GaussianTarget::standard_bivariate(0.7).unwrap();
        let cfg = GibbsConfig::new(500, 42);
        let a = run_chain(&t, &cfg).unwrap();
        let b = run_chain(&t, &cfg).unwrap();
        assert_eq!(a, b);
        let mut other = cfg.clone();
        other.seed = 43;
        assert_ne!(a.samples, run_chain(&t, &other).unwrap().samples);
    }

    #[test]
    fn degenerate_table_cycle_is_identity() {
        let t = DiscreteTarget::new(vec![2, 3], vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let theta = ParamVector::new(vec![1.0, 1.0]).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..20 {
            assert_eq!(gibbs_cycle(&t, &theta, &mut rng).unwrap(), theta);
        }
    }

    #[test]
    fn kernel_rows_and_stationarity() {
        let t = table();
        let k = kernel_matrix(&t).unwrap();
        assert_eq!(k.states.len(), 4);
        assert!(k.max_row_defect() <= 1e-12);
        assert!(k.stationarity_residual(&t) <= 1e-12);
    }

    #[test]
    fn kernel_skips_zero_mass_rows() {
        let t = DiscreteTarget::new(vec![2, 2], vec![0.5, 0.0, 0.2, 0.3]).unwrap();
        let k = kernel_matrix(&t).unwrap();
        assert!(k.max_row_defect() <= 1e-12);
        assert!(k.stationarity_residual(&t) <= 1e-12);
    }

    #[test]
    fn independent_gaussian_kernel_ignores_origin() {
        let t = GaussianTarget::standard_bivariate(0.0).unwrap();
        let to = ParamVector::new(vec![0.3, -1.1]).unwrap();
        let a = kernel_log_density(&t, &ParamVector::new(vec![5.0, -2.0]).unwrap(), &to).unwrap();
        let b = kernel_log_density(&t, &ParamVector::new(vec![-1.0, 0.4]).unwrap(), &to).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        let expected = t.log_posterior(to.as_slice());
        assert_abs_diff_eq!(a, expected, epsilon = 1e-14);
    }

    #[test]
    fn constant_estimand() {
        let t = GaussianTarget::standard_bivariate(0.5).unwrap();
        let tr = run_chain(&t, &GibbsConfig::new(1000, 1)).unwrap();
        let e = estimate(&tr, &Estimand::Constant(1.0)).unwrap();
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.std_error, Some(0.0));
    }

    #[test]
    fn short_traces_have_no_standard_error() {
        let e = Estimate::from_values(&[1.0; 63]).unwrap();
        assert_eq!(e.std_error, None);
        assert!(Estimate::from_values(&[]).is_err());
        assert!(Estimate::from_values(&[1.0; 64]).unwrap().std_error.is_some());
    }

    #[test]
    fn pooling_weights_by_size() {
        let a = Estimate { mean: 1.0, std_error: Some(0.1), n: 100 };
        let b = Estimate { mean: 3.0, std_error: Some(0.1), n: 300 };
        let p = Estimate::pool(&[a, b]).unwrap();
        assert_abs_diff_eq!(p.mean, 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p.std_error.unwrap(), (0.01f64 * 1e4 + 0.01 * 9e4).sqrt() / 400.0, epsilon = 1e-15);
    }

    #[test]
    fn csv_header_and_cycle_numbers() {
        let t = GaussianTarget::new(
            vec![0.0; 3],
            nalgebra::DMatrix::identity(3, 3),
            BlockDecomposition::new(&[2, 1]).unwrap(),
        )
        .unwrap();
        let mut cfg = GibbsConfig::new(5, 9);
        cfg.burn_in = Some(2);
        let tr = run_chain(&t, &cfg).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "cycle,block1_dim1,block1_dim2,block2_dim1");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("3,"));
        assert!(text.ends_with('\n') && !text.contains('\r'));
    }
}
