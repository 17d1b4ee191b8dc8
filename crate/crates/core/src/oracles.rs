//! Independent numerical references for tests.
//!
//! Everything here is deliberately computed along a different path from the
//! library: composite Simpson quadrature written from scratch, densities built
//! from raw covariance entries, and derivative-free search for minimizers.
//! Nothing in the library calls into this module.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::decomposition::BlockDecomposition;
use crate::discrete::{DiscreteFactor, DiscreteTarget};
use crate::gaussian::{GaussianFactor, GaussianTarget};

const SIMPSON_INTERVALS: usize = 20_000;

/// Composite Simpson rule for `∫_lo^hi f`.
pub fn simpson<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(lo + h * k as f64);
    }
    s * h / 3.0
}

fn peak<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> f64 {
    let n = 2000;
    (0..=n)
        .map(|k| f(lo + (hi - lo) * k as f64 / n as f64))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `log ∫_lo^hi exp(log_f)` by Simpson's rule with a peak shift.
pub fn log_normalizer_1d<F: Fn(f64) -> f64>(log_f: F, lo: f64, hi: f64) -> f64 {
    let m = peak(&log_f, lo, hi);
    m + simpson(|x| (log_f(x) - m).exp(), lo, hi, SIMPSON_INTERVALS).ln()
}

/// Mean and variance of the density proportional to `exp(log_f)` on `[lo, hi]`.
pub fn grid_conditional_moments_1d<F: Fn(f64) -> f64>(log_f: F, lo: f64, hi: f64) -> (f64, f64) {
    let log_z = log_normalizer_1d(&log_f, lo, hi);
    let dens = |x: f64| (log_f(x) - log_z).exp();
    let mean = simpson(|x| x * dens(x), lo, hi, SIMPSON_INTERVALS);
    let var = simpson(|x| (x - mean).powi(2) * dens(x), lo, hi, SIMPSON_INTERVALS);
    (mean, var)
}

fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

fn scalar_params(f: &GaussianFactor) -> (f64, f64) {
    assert_eq!(f.dim(), 1, "1-D oracle called with a multivariate factor");
    (f.mean()[0], f.covariance()[(0, 0)])
}

/// `∫ a log(a/b)` for univariate Gaussians by quadrature over `a`'s bulk.
pub fn kl_quadrature_1d(a: &GaussianFactor, b: &GaussianFactor) -> f64 {
    let (ma, va) = scalar_params(a);
    let (mb, vb) = scalar_params(b);
    let sd = va.sqrt();
    simpson(
        |x| {
            let pa = normal_pdf(x, ma, va);
            if pa == 0.0 {
                return 0.0;
            }
            let log_ratio = -(x - ma).powi(2) / (2.0 * va) + (x - mb).powi(2) / (2.0 * vb)
                - 0.5 * (va / vb).ln();
            pa * log_ratio
        },
        ma - 12.0 * sd,
        ma + 12.0 * sd,
        SIMPSON_INTERVALS,
    )
}

/// `−∫ f log f` for a univariate Gaussian.
pub fn entropy_quadrature_1d(f: &GaussianFactor) -> f64 {
    let (m, v) = scalar_params(f);
    let sd = v.sqrt();
    simpson(
        |x| {
            let p = normal_pdf(x, m, v);
            if p == 0.0 {
                0.0
            } else {
                -p * p.ln()
            }
        },
        m - 12.0 * sd,
        m + 12.0 * sd,
        SIMPSON_INTERVALS,
    )
}

/// Bivariate Gaussian density evaluated from raw parameters.
struct Bivariate {
    m: [f64; 2],
    s: [[f64; 2]; 2],
    det: f64,
}

impl Bivariate {
    fn of(t: &GaussianTarget) -> Self {
        assert_eq!(t.mean().len(), 2, "bivariate oracle called with D != 2");
        let c = t.covariance();
        let s = [[c[(0, 0)], c[(0, 1)]], [c[(1, 0)], c[(1, 1)]]];
        Self {
            m: [t.mean()[0], t.mean()[1]],
            det: s[0][0] * s[1][1] - s[0][1] * s[1][0],
            s,
        }
    }

    fn pdf(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.m[0];
        let dy = y - self.m[1];
        let q = (self.s[1][1] * dx * dx - 2.0 * self.s[0][1] * dx * dy + self.s[0][0] * dy * dy) / self.det;
        (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * self.det.sqrt())
    }

    fn range(&self, c: usize) -> (f64, f64) {
        let sd = self.s[c][c].sqrt();
        (self.m[c] - 8.0 * sd, self.m[c] + 8.0 * sd)
    }
}

const GRID_2D: usize = 1200;

fn axis(lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    let n = GRID_2D;
    let h = (hi - lo) / n as f64;
    let nodes = (0..=n).map(|k| lo + h * k as f64).collect();
    let weights = (0..=n)
        .map(|k| {
            let w = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * h / 3.0
        })
        .collect();
    (nodes, weights)
}

/// Joint density tabulated on a Simpson tensor grid, with its numerically
/// integrated marginals.
struct Tensor2d {
    wx: Vec<f64>,
    wy: Vec<f64>,
    p: Vec<Vec<f64>>,
    px: Vec<f64>,
    py: Vec<f64>,
}

impl Tensor2d {
    fn of(t: &GaussianTarget) -> Self {
        let b = Bivariate::of(t);
        let (xlo, xhi) = b.range(0);
        let (ylo, yhi) = b.range(1);
        let (xs, wx) = axis(xlo, xhi);
        let (ys, wy) = axis(ylo, yhi);
        let p: Vec<Vec<f64>> = xs.iter().map(|&x| ys.iter().map(|&y| b.pdf(x, y)).collect()).collect();
        let px = p.iter().map(|row| row.iter().zip(&wy).map(|(v, w)| v * w).sum()).collect();
        let py = (0..ys.len())
            .map(|j| (0..xs.len()).map(|i| p[i][j] * wx[i]).sum())
            .collect();
        Self { wx, wy, p, px, py }
    }

    fn integrate<F: Fn(usize, usize) -> f64>(&self, f: F) -> f64 {
        let mut s = 0.0;
        for i in 0..self.wx.len() {
            for j in 0..self.wy.len() {
                s += self.wx[i] * self.wy[j] * f(i, j);
            }
        }
        s
    }
}

fn plogq(p: f64, q: f64) -> f64 {
    if p > 0.0 && q > 0.0 {
        p * q.ln()
    } else {
        0.0
    }
}

/// `∫∫ p log(p / (p₁ p₂))` on a tensor Simpson grid with numerically
/// integrated marginals. Scalar-block bivariate targets only.
pub fn mutual_information_quadrature_2d(t: &GaussianTarget) -> f64 {
    let g = Tensor2d::of(t);
    g.integrate(|i, j| {
        let p = g.p[i][j];
        plogq(p, p) - plogq(p, g.px[i]) - plogq(p, g.py[j])
    })
}

/// `H(θ_other)` for the scalar block `other` of a bivariate target, from the
/// numerically integrated marginal.
pub fn marginal_entropy_quadrature_2d(t: &GaussianTarget, other: usize) -> f64 {
    let g = Tensor2d::of(t);
    let (m, w) = if other == 0 { (&g.px, &g.wx) } else { (&g.py, &g.wy) };
    -m.iter().zip(w).map(|(p, w)| w * plogq(*p, *p)).sum::<f64>()
}

/// `H(θ_other | θ_given) = −∫∫ p log(p / p_given)` on the tensor grid.
pub fn conditional_entropy_quadrature_2d(t: &GaussianTarget, given: usize) -> f64 {
    let g = Tensor2d::of(t);
    -g.integrate(|i, j| {
        let p = g.p[i][j];
        let pg = if given == 0 { g.px[i] } else { g.py[j] };
        plogq(p, p) - plogq(p, pg)
    })
}

/// `KL(q₁ ⊗ q₂ ‖ π)` for a bivariate target by tensor quadrature.
pub fn product_kl_quadrature_2d(t: &GaussianTarget, q1: &GaussianFactor, q2: &GaussianFactor) -> f64 {
    let b = Bivariate::of(t);
    let (m1, v1) = scalar_params(q1);
    let (m2, v2) = scalar_params(q2);
    let (xs, wx) = axis(m1 - 10.0 * v1.sqrt(), m1 + 10.0 * v1.sqrt());
    let (ys, wy) = axis(m2 - 10.0 * v2.sqrt(), m2 + 10.0 * v2.sqrt());
    let mut s = 0.0;
    for (x, wxi) in xs.iter().zip(&wx) {
        let qx = normal_pdf(*x, m1, v1);
        for (y, wyj) in ys.iter().zip(&wy) {
            let q = qx * normal_pdf(*y, m2, v2);
            let p = b.pdf(*x, *y);
            if q > 0.0 {
                s += wxi * wyj * q * (q.ln() - p.ln());
            }
        }
    }
    s
}

/// Random Gaussian target with covariance `A Aᵀ / D + ½ I` and mean in `[-1, 1]`.
pub fn random_gaussian_target(dims: &[usize], seed: u64) -> GaussianTarget {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let dec = BlockDecomposition::new(dims).expect("valid dims");
    let d = dec.total_dim();
    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut cov = &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.5;
    cov = 0.5 * (&cov + cov.transpose());
    let mean = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    GaussianTarget::new(mean, cov, dec).expect("random covariance is well conditioned")
}

/// Random strictly positive table with entries drawn from `U(0.05, 1)` then normalized.
pub fn random_discrete_target(shape: &[usize], seed: u64) -> DiscreteTarget {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    DiscreteTarget::new(shape.to_vec(), w.iter().map(|v| v / s).collect()).expect("valid table")
}

/// Random strictly positive pmf of length `n`.
pub fn random_pmf(n: usize, rng: &mut ChaCha20Rng) -> DiscreteFactor {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    DiscreteFactor::new(w.iter().map(|v| v / s).collect()).expect("valid pmf")
}

/// Flat index and strides of a row-major table, recomputed here.
fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for b in (0..shape.len().saturating_sub(1)).rev() {
        s[b] = s[b + 1] * shape[b + 1];
    }
    s
}

/// `KL(q ⊗ ∏_{j≠i} fⱼ ‖ π)` by full enumeration with compensated summation.
pub fn enumerated_kl(t: &DiscreteTarget, factors: &[DiscreteFactor], block: usize, q: &[f64]) -> f64 {
    let shape = t.shape();
    let st = strides(shape);
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for (flat, &p) in t.pmf().iter().enumerate() {
        let mut w = 1.0;
        for b in 0..shape.len() {
            let v = (flat / st[b]) % shape[b];
            w *= if b == block { q[v] } else { factors[b].pmf()[v] };
        }
        if w <= 0.0 {
            continue;
        }
        let term = if p <= 0.0 { f64::INFINITY } else { w * (w.ln() - p.ln()) };
        let y = term - comp;
        let s = sum + y;
        comp = (s - sum) - y;
        sum = s;
    }
    sum
}

/// Coordinate-wise KL minimizer over the probability simplex of block
/// `block`, holding the other factors fixed.
///
/// Derivative-free pattern search along the directions `e_a − e_b`, halving
/// the step when no move improves the objective, down to a step of `1e-13`.
pub fn brute_force_coordinate_minimizer(
    t: &DiscreteTarget,
    factors: &[DiscreteFactor],
    block: usize,
) -> DiscreteFactor {
    let n = t.shape()[block];
    let mut q = vec![1.0 / n as f64; n];
    let mut best = enumerated_kl(t, factors, block, &q);
    let mut step: f64 = 0.25;
    while step > 1e-13 {
        let mut improved = false;
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                let delta = step.min(q[b]);
                if delta <= 0.0 {
                    continue;
                }
                let mut trial = q.clone();
                trial[a] += delta;
                trial[b] -= delta;
                let v = enumerated_kl(t, factors, block, &trial);
                if v < best {
                    best = v;
                    q = trial;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    let s: f64 = q.iter().sum();
    DiscreteFactor::new(q.iter().map(|v| v / s).collect()).expect("search stays on the simplex")
}

/// Draws from a Gaussian target's joint by `L z + μ` with `L` the Cholesky
/// factor of the covariance, computed independently of the library.
pub fn exact_gaussian_draws(t: &GaussianTarget, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let l = t
        .covariance()
        .clone()
        .cholesky()
        .expect("covariance is positive definite")
        .l();
    let d = t.mean().len();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            (t.mean() + &l * z).iter().copied().collect()
        })
        .collect()
}

/// Exact draws from a finite table by inverse-CDF over the flat index.
pub fn exact_discrete_draws(t: &DiscreteTarget, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let shape = t.shape().to_vec();
    let st = strides(&shape);
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut flat = t.pmf().len() - 1;
            for (k, p) in t.pmf().iter().enumerate() {
                acc += p;
                if u < acc {
                    flat = k;
                    break;
                }
            }
            (0..shape.len()).map(|b| ((flat / st[b]) % shape[b]) as f64).collect()
        })
        .collect()
}
