//! Gap in the variational duality formula
//! `log E_p[exp h] = sup_{q ≪ p} { E_q[h] − KL(q ‖ p) }`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{log_sum_exp, BlockGrid, Rule1d};

/// Share of `∫ p e^h` allowed on the outermost grid nodes before the
/// integral is declared non-integrable on the working grid.
pub const TAIL_SHARE_LIMIT: f64 = 1e-12;

/// A base density `p`, a test function `h` and a candidate `q`, tabulated on
/// one grid. `p` and `q` are renormalized on the grid at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DualityProblem {
    grid: BlockGrid,
    /// `log(p · w)`, summing to one in probability.
    log_pw: Vec<f64>,
    h: Vec<f64>,
    log_qw: Vec<f64>,
}

fn normalize_masses(grid: &BlockGrid, log_density: &[f64], what: &str) -> Result<Vec<f64>> {
    if log_density.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::InvalidDensity(format!("{what} contains NaN or +inf")));
    }
    let lw: Vec<f64> = log_density
        .iter()
        .zip(grid.log_weights())
        .map(|(d, w)| d + w)
        .collect();
    let z = log_sum_exp(&lw);
    if !z.is_finite() {
        return Err(Error::InvalidDensity(format!("{what} has no mass on the grid")));
    }
    Ok(lw.iter().map(|v| v - z).collect())
}

/// Nodes lying on the boundary of a tensor grid.
fn boundary_nodes(grid: &BlockGrid) -> Vec<usize> {
    let lens: Vec<usize> = grid.axes().iter().map(Rule1d::len).collect();
    (0..grid.len())
        .filter(|&k| {
            let mut rem = k;
            let mut on_edge = false;
            for &n in lens.iter().rev() {
                let i = rem % n;
                rem /= n;
                on_edge |= i == 0 || i == n - 1;
            }
            on_edge
        })
        .collect()
}

impl DualityProblem {
    /// Build from tabulated log densities and test function values.
    ///
    /// With `truncated` set, the grid stands in for an unbounded space and
    /// `exp h` must be negligible against `p` on the grid boundary.
    pub fn new(grid: BlockGrid, log_p: &[f64], h: Vec<f64>, log_q: &[f64], truncated: bool) -> Result<Self> {
        for (what, len) in [("p", log_p.len()), ("h", h.len()), ("q", log_q.len())] {
            if len != grid.len() {
                return Err(Error::InvalidDensity(format!(
                    "{what}: expected {} values, found {len}",
                    grid.len()
                )));
            }
        }
        if h.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::InvalidDensity("h contains NaN or +inf".into()));
        }
        let log_pw = normalize_masses(&grid, log_p, "p")?;
        let log_qw = normalize_masses(&grid, log_q, "q")?;
        if let Some(k) = (0..grid.len()).find(|&k| log_qw[k] > f64::NEG_INFINITY && log_pw[k] == f64::NEG_INFINITY) {
            return Err(Error::SupportViolation(format!(
                "q has mass at node {k} where p has none"
            )));
        }
        let prob = Self {
            grid,
            log_pw,
            h,
            log_qw,
        };
        let log_e = prob.log_partition();
        if !log_e.is_finite() {
            return Err(Error::NotIntegrable);
        }
        if truncated {
            let edge: Vec<f64> = boundary_nodes(&prob.grid)
                .into_iter()
                .map(|k| prob.log_pw[k] + prob.h[k])
                .collect();
            if log_sum_exp(&edge) - log_e > TAIL_SHARE_LIMIT.ln() {
                return Err(Error::NotIntegrable);
            }
        }
        Ok(prob)
    }

    /// Build from callables evaluated at every grid node.
    pub fn from_fns<P, H, Q>(grid: BlockGrid, log_p: P, h: H, log_q: Q, truncated: bool) -> Result<Self>
    where
        P: Fn(&[f64]) -> f64,
        H: Fn(&[f64]) -> f64,
        Q: Fn(&[f64]) -> f64,
    {
        let n = grid.len();
        let lp: Vec<f64> = (0..n).map(|k| log_p(grid.point(k))).collect();
        let hv: Vec<f64> = (0..n).map(|k| h(grid.point(k))).collect();
        let lq: Vec<f64> = (0..n).map(|k| log_q(grid.point(k))).collect();
        Self::new(grid, &lp, hv, &lq, truncated)
    }

    /// The problem whose candidate is the exponential tilt `q ∝ p e^h`.
    pub fn with_optimal_tilt(grid: BlockGrid, log_p: &[f64], h: Vec<f64>, truncated: bool) -> Result<Self> {
        let log_q: Vec<f64> = log_p.iter().zip(&h).map(|(p, h)| p + h).collect();
        Self::new(grid, log_p, h, &log_q, truncated)
    }

    pub fn grid(&self) -> &BlockGrid {
        &self.grid
    }

    /// `log E_p[exp h]`.
    pub fn log_partition(&self) -> f64 {
        let v: Vec<f64> = self.log_pw.iter().zip(&self.h).map(|(p, h)| p + h).collect();
        log_sum_exp(&v)
    }

    /// `E_q[h]`; `-inf` if `q` has mass where `h = -inf`.
    pub fn expected_h(&self) -> f64 {
        let mut s = 0.0;
        for (lq, h) in self.log_qw.iter().zip(&self.h) {
            if *lq > f64::NEG_INFINITY {
                s += lq.exp() * h;
            }
        }
        s
    }

    /// `KL(q ‖ p)`.
    pub fn kl_q_p(&self) -> f64 {
        let mut s = 0.0;
        for (lq, lp) in self.log_qw.iter().zip(&self.log_pw) {
            if *lq > f64::NEG_INFINITY {
                s += lq.exp() * (lq - lp);
            }
        }
        s
    }

    /// `E_q[h] − KL(q ‖ p)`, the value of the variational objective at `q`.
    pub fn objective(&self) -> f64 {
        self.expected_h() - self.kl_q_p()
    }
}

/// `log E_p[exp h] − (E_q[h] − KL(q ‖ p))`; nonnegative, zero at the tilt.
pub fn duality_gap(prob: &DualityProblem) -> Result<f64> {
    let gap = prob.log_partition() - prob.objective();
    if gap.is_nan() {
        return Err(Error::NotIntegrable);
    }
    Ok(gap)
}

/// Base-density families for randomized duality trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualityFamily {
    Gaussian,
    Discrete,
}

impl DualityFamily {
    pub fn name(self) -> &'static str {
        match self {
            DualityFamily::Gaussian => "gaussian",
            DualityFamily::Discrete => "discrete",
        }
    }
}

/// One row of a duality suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityTrial {
    /// 1-based trial number; each trial yields a random-`q` row and a tilt row.
    pub trial: usize,
    pub family: DualityFamily,
    pub gap: f64,
    pub at_optimum: bool,
}

/// Grid points for continuous suites.
pub const SUITE_GRID_POINTS: usize = 4097;

fn normal_log_pdf(x: f64, m: f64, v: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (x - m).powi(2) / v)
}

fn gaussian_trial(rng: &mut ChaCha20Rng) -> Result<(DualityProblem, DualityProblem)> {
    let mp = rng.random_range::<f64, _>(-2.0..=2.0);
    let vp = rng.random_range(0.25..=4.0);
    // h(θ) = aθ² + bθ + c with the tilt precision kept at least 0.2/vp
    let a = rng.random_range(-1.0..0.4 / vp);
    let b = rng.random_range(-1.0..=1.0);
    let c = rng.random_range(-1.0..=1.0);
    let mq = rng.random_range(-2.0..=2.0);
    let vq = rng.random_range(0.25..=4.0);
    let tau = 1.0 / vp - 2.0 * a;
    let (mt, vt) = ((mp / vp + b) / tau, 1.0 / tau);
    let spans = [(mp, vp), (mq, vq), (mt, vt)];
    let lo = spans.iter().map(|(m, v)| m - 10.0 * v.sqrt()).fold(f64::INFINITY, f64::min);
    let hi = spans.iter().map(|(m, v)| m + 10.0 * v.sqrt()).fold(f64::NEG_INFINITY, f64::max);
    let grid = BlockGrid::one_dimensional(Rule1d::trapezoid(lo, hi, SUITE_GRID_POINTS)?);
    let xs: Vec<f64> = (0..grid.len()).map(|k| grid.point(k)[0]).collect();
    let log_p: Vec<f64> = xs.iter().map(|&x| normal_log_pdf(x, mp, vp)).collect();
    let h: Vec<f64> = xs.iter().map(|&x| a * x * x + b * x + c).collect();
    let log_q: Vec<f64> = xs.iter().map(|&x| normal_log_pdf(x, mq, vq)).collect();
    let random = DualityProblem::new(grid.clone(), &log_p, h.clone(), &log_q, true)?;
    let tilt = DualityProblem::with_optimal_tilt(grid, &log_p, h, true)?;
    Ok((random, tilt))
}

/// Dirichlet(1, ..., 1) draw via normalized exponentials.
fn dirichlet(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn discrete_trial(rng: &mut ChaCha20Rng) -> Result<(DualityProblem, DualityProblem)> {
    let n = rng.random_range(2..=16usize);
    let p = dirichlet(rng, n);
    let h: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..=3.0)).collect();
    let q = dirichlet(rng, n);
    let grid = BlockGrid::one_dimensional(Rule1d::counting(n));
    let log_p: Vec<f64> = p.iter().map(|v| v.ln()).collect();
    let log_q: Vec<f64> = q.iter().map(|v| v.ln()).collect();
    let random = DualityProblem::new(grid.clone(), &log_p, h.clone(), &log_q, false)?;
    let tilt = DualityProblem::with_optimal_tilt(grid, &log_p, h, false)?;
    Ok((random, tilt))
}

/// `trials` randomized `(p, h, q)` problems plus, for each, the problem with
/// `q` replaced by the exponential tilt. Gaussian trials draw `p` and `q` with
/// mean in `[-2, 2]` and variance in `[0.25, 4]` and a quadratic `h`; discrete
/// trials draw Dirichlet(1) pmfs on 2 to 16 points and `h` in `[-3, 3]`.
pub fn duality_suite(family: DualityFamily, trials: usize, seed: u64) -> Result<Vec<DualityTrial>> {
    if trials == 0 {
        return Err(Error::InvalidConfig("the duality suite needs at least one trial".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * trials);
    for trial in 1..=trials {
        let (random, tilt) = match family {
            DualityFamily::Gaussian => gaussian_trial(&mut rng)?,
            DualityFamily::Discrete => discrete_trial(&mut rng)?,
        };
        out.push(DualityTrial {
            trial,
            family,
            gap: duality_gap(&random)?,
            at_optimum: false,
        });
        out.push(DualityTrial {
            trial,
            family,
            gap: duality_gap(&tilt)?,
            at_optimum: true,
        });
    }
    Ok(out)
}

/// Tolerances for a duality suite to pass.
pub const GAP_FLOOR: f64 = -1e-10;
pub const OPTIMUM_GAP_CEILING: f64 = 1e-8;

pub fn trial_passes(t: &DualityTrial) -> bool {
    t.gap >= GAP_FLOOR && (!t.at_optimum || t.gap <= OPTIMUM_GAP_CEILING)
}
