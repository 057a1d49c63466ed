//! Discretization of the endowment process.
//!
//! The persistent component `log y' = rho log y + sigma_eps eps'` becomes a
//! finite Markov chain on an equally spaced log grid (Tauchen). The i.i.d.
//! component `x ~ N(0, sigma_x^2)` truncated to `[-2 sigma_x, 2 sigma_x]` is
//! integrated with a Gauss rule built for that weight.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dist::{norm_cdf, norm_pdf, TruncatedNormal};
use crate::error::{Error, Result};

/// Truncation of the i.i.d. shock, in standard deviations.
pub const X_TRUNCATION: f64 = 2.0;

const STATIONARY_TOL: f64 = 1e-12;
const STATIONARY_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArSpec {
    pub rho: f64,
    pub sigma_eps: f64,
}

impl ArSpec {
    pub fn new(rho: f64, sigma_eps: f64) -> Result<Self> {
        let spec = ArSpec { rho, sigma_eps };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rho.is_finite() || self.rho.abs() >= 1.0 {
            return Err(Error::invalid("rho", format!("need |rho| < 1, got {}", self.rho)));
        }
        if !self.sigma_eps.is_finite() || self.sigma_eps <= 0.0 {
            return Err(Error::invalid(
                "sigma_eps",
                format!("need sigma_eps > 0, got {}", self.sigma_eps),
            ));
        }
        Ok(())
    }

    /// Unconditional standard deviation of `log y`.
    pub fn unconditional_std(&self) -> f64 {
        self.sigma_eps / (1.0 - self.rho * self.rho).sqrt()
    }
}

/// Finite-state chain with row-major transition matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovChain {
    pub levels: Vec<f64>,
    pub log_levels: Vec<f64>,
    pub transition: Vec<f64>,
    pub stationary: Vec<f64>,
}

impl MarkovChain {
    /// Builds a chain from explicit levels and a row-major transition
    /// matrix; the stationary distribution is computed here.
    pub fn from_parts(levels: Vec<f64>, transition: Vec<f64>) -> Result<Self> {
        let n = levels.len();
        if n == 0 || transition.len() != n * n {
            return Err(Error::invalid("transition", "shape does not match levels"));
        }
        if levels.iter().any(|&y| !(y > 0.0) || !y.is_finite()) {
            return Err(Error::invalid("levels", "levels must be positive and finite"));
        }
        if levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("levels", "levels must be strictly increasing"));
        }
        for row in transition.chunks(n) {
            let s: f64 = row.iter().sum();
            if row.iter().any(|&p| p < 0.0 || !p.is_finite()) || (s - 1.0).abs() > 1e-12 {
                return Err(Error::invalid("transition", "rows must be probability vectors"));
            }
        }
        let stationary = stationary_distribution(&transition, n)?;
        let log_levels = levels.iter().map(|y| y.ln()).collect();
        Ok(MarkovChain {
            levels,
            log_levels,
            transition,
            stationary,
        })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.len();
        &self.transition[i * n..(i + 1) * n]
    }

    /// `E[g(Y') | y_i]`.
    pub fn expect(&self, i: usize, g: &[f64]) -> f64 {
        self.row(i).iter().zip(g).map(|(p, v)| p * v).sum()
    }

    pub fn conditional_mean(&self, i: usize) -> f64 {
        self.expect(i, &self.levels)
    }

    /// Largest deviation of `nu P` from `nu`.
    pub fn stationary_residual(&self) -> f64 {
        stationary_residual(&self.transition, &self.stationary)
    }

    /// Index of the grid point closest to `y` in log distance.
    pub fn nearest_index(&self, y: f64) -> usize {
        let ly = y.ln();
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, &l) in self.log_levels.iter().enumerate() {
            let d = (l - ly).abs();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Index of the stationary median (first state whose CDF reaches 1/2).
    pub fn median_index(&self) -> usize {
        let mut acc = 0.0;
        for (i, p) in self.stationary.iter().enumerate() {
            acc += p;
            if acc >= 0.5 {
                return i;
            }
        }
        self.len() - 1
    }
}

/// Tauchen discretization on `coverage_m` unconditional standard deviations.
pub fn tauchen(spec: ArSpec, n_states: usize, coverage_m: f64) -> Result<MarkovChain> {
    tauchen_shifted(spec, n_states, coverage_m, 0.0)
}

/// Tauchen transition probabilities with the conditional mean of `log y'`
/// moved by `mean_shift` (same grid, same innovation variance).
pub fn tauchen_shifted(
    spec: ArSpec,
    n_states: usize,
    coverage_m: f64,
    mean_shift: f64,
) -> Result<MarkovChain> {
    spec.validate()?;
    if n_states < 2 {
        return Err(Error::invalid("n_y", format!("need at least 2 states, got {n_states}")));
    }
    if !coverage_m.is_finite() || coverage_m <= 0.0 {
        return Err(Error::invalid("coverage_m", "must be positive and finite"));
    }
    if !mean_shift.is_finite() {
        return Err(Error::invalid("mean_shift", "must be finite"));
    }
    let (grid, transition) = tauchen_matrix(spec, n_states, coverage_m, mean_shift);
    let levels = grid.iter().map(|z| z.exp()).collect();
    MarkovChain::from_parts(levels, transition)
}

pub(crate) fn tauchen_matrix(
    spec: ArSpec,
    n: usize,
    coverage_m: f64,
    mean_shift: f64,
) -> (Vec<f64>, Vec<f64>) {
    let half = coverage_m * spec.unconditional_std();
    let step = 2.0 * half / (n - 1) as f64;
    let grid: Vec<f64> = (0..n).map(|i| -half + step * i as f64).collect();
    let s = spec.sigma_eps;
    let mut transition = vec![0.0; n * n];
    for i in 0..n {
        let mean = spec.rho * grid[i] + mean_shift;
        let row = &mut transition[i * n..(i + 1) * n];
        for j in 0..n {
            let hi = (grid[j] + 0.5 * step - mean) / s;
            let lo = (grid[j] - 0.5 * step - mean) / s;
            row[j] = if j == 0 {
                norm_cdf(hi)
            } else if j == n - 1 {
                norm_cdf(-lo)
            } else if lo > 0.0 {
                // upper tail: difference of survival functions keeps precision
                norm_cdf(-lo) - norm_cdf(-hi)
            } else {
                norm_cdf(hi) - norm_cdf(lo)
            };
        }
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= total);
    }
    (grid, transition)
}

fn stationary_residual(transition: &[f64], nu: &[f64]) -> f64 {
    let n = nu.len();
    let mut worst: f64 = 0.0;
    for j in 0..n {
        let mut s = 0.0;
        for i in 0..n {
            s += nu[i] * transition[i * n + j];
        }
        worst = worst.max((s - nu[j]).abs());
    }
    worst
}

/// Invariant distribution by power iteration from the uniform vector.
pub fn stationary_distribution(transition: &[f64], n: usize) -> Result<Vec<f64>> {
    if n == 0 || transition.len() != n * n {
        return Err(Error::invalid("transition", "matrix must be square"));
    }
    let mut nu = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..STATIONARY_MAX_ITER {
        next.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let w = nu[i];
            if w == 0.0 {
                continue;
            }
            let row = &transition[i * n..(i + 1) * n];
            for (acc, p) in next.iter_mut().zip(row) {
                *acc += w * p;
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        residual = nu
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut nu, &mut next);
        if residual < STATIONARY_TOL {
            return Ok(nu);
        }
    }
    Err(Error::StationaryNotConverged {
        iterations: STATIONARY_MAX_ITER,
        residual,
    })
}

/// Quadrature for the truncated i.i.d. shock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IidShockQuad {
    pub sigma_x: f64,
    pub lower: f64,
    pub upper: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl IidShockQuad {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn distribution(&self) -> TruncatedNormal {
        TruncatedNormal::symmetric(self.sigma_x, X_TRUNCATION)
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    /// Index of the node at zero, if the rule has one.
    pub fn zero_node(&self) -> Option<usize> {
        self.nodes.iter().position(|&x| x == 0.0)
    }
}

/// Gauss rule with `n_nodes` points for the normal truncated to
/// `[-2 sigma_x, 2 sigma_x]`.
///
/// The three-term recurrence of the weight is obtained by the discretized
/// Stieltjes procedure on a fine Gauss-Legendre grid; nodes and weights then
/// come from the eigen-decomposition of the Jacobi matrix (Golub-Welsch).
pub fn iid_quadrature(sigma_x: f64, n_nodes: usize) -> Result<IidShockQuad> {
    if !sigma_x.is_finite() || sigma_x < 0.0 {
        return Err(Error::invalid("sigma_x", format!("need sigma_x >= 0, got {sigma_x}")));
    }
    if n_nodes == 0 {
        return Err(Error::invalid("n_x", "need at least one node"));
    }
    if sigma_x == 0.0 {
        return Ok(IidShockQuad {
            sigma_x,
            lower: 0.0,
            upper: 0.0,
            nodes: vec![0.0],
            weights: vec![1.0],
        });
    }
    let (t, w) = standard_truncated_gauss(n_nodes);
    Ok(IidShockQuad {
        sigma_x,
        lower: -X_TRUNCATION * sigma_x,
        upper: X_TRUNCATION * sigma_x,
        nodes: t.iter().map(|v| v * sigma_x).collect(),
        weights: w,
    })
}

fn standard_truncated_gauss(n: usize) -> (Vec<f64>, Vec<f64>) {
    let k = X_TRUNCATION;
    let fine = (40 * n).max(400);
    let (gl_x, gl_w) = gauss_legendre(fine);
    // discrete measure approximating phi(t) dt on [-k, k], normalized
    let pts: Vec<f64> = gl_x.iter().map(|x| k * x).collect();
    let mut mass: Vec<f64> = gl_w
        .iter()
        .zip(&pts)
        .map(|(w, t)| k * w * norm_pdf(*t))
        .collect();
    let total: f64 = mass.iter().sum();
    mass.iter_mut().for_each(|m| *m /= total);

    // Stieltjes: alpha_j, beta_j of the monic orthogonal polynomials
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; n];
    let mut p_prev = vec![0.0; fine];
    let mut p_cur = vec![1.0; fine];
    let mut norm_prev = 1.0;
    for j in 0..n {
        let norm_cur: f64 = mass.iter().zip(&p_cur).map(|(m, p)| m * p * p).sum();
        alpha[j] = mass
            .iter()
            .zip(&p_cur)
            .zip(&pts)
            .map(|((m, p), t)| m * p * p * t)
            .sum::<f64>()
            / norm_cur;
        if j > 0 {
            beta[j] = norm_cur / norm_prev;
        }
        let p_next: Vec<f64> = (0..fine)
            .map(|i| (pts[i] - alpha[j]) * p_cur[i] - beta[j] * p_prev[i])
            .collect();
        p_prev = std::mem::replace(&mut p_cur, p_next);
        norm_prev = norm_cur;
    }

    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        jacobi[(i, i)] = alpha[i];
        if i + 1 < n {
            let b = beta[i + 1].sqrt();
            jacobi[(i, i + 1)] = b;
            jacobi[(i + 1, i)] = b;
        }
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // the weight is even: enforce exact mirror symmetry
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let j = n - 1 - i;
        nodes[i] = 0.5 * (pairs[i].0 - pairs[j].0);
        weights[i] = 0.5 * (pairs[i].1 + pairs[j].1);
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    (nodes, weights)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iid_chain_rows_are_identical() {
        let chain = tauchen(ArSpec::new(0.0, 0.3).unwrap(), 5, 3.0).unwrap();
        for i in 1..5 {
            for j in 0..5 {
                assert!((chain.row(i)[j] - chain.row(0)[j]).abs() < 1e-15);
            }
        }
        // rows equal the unconditional cell probabilities
        for j in 0..5 {
            assert!((chain.stationary[j] - chain.row(0)[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn calibrated_chain_is_stochastic_and_stationary() {
        let chain = tauchen(ArSpec::new(0.9484, 0.02).unwrap(), 200, 3.0).unwrap();
        for i in 0..200 {
            let s: f64 = chain.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(chain.stationary_residual() < 1e-10);
        // monotone likelihood: conditional means nondecreasing in y
        let means: Vec<f64> = (0..200).map(|i| chain.conditional_mean(i)).collect();
        assert!(means.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn two_state_stationary_by_hand() {
        let nu = stationary_distribution(&[0.9, 0.1, 0.2, 0.8], 2).unwrap();
        assert!((nu[0] - 2.0 / 3.0).abs() < 1e-11);
        assert!((nu[1] - 1.0 / 3.0).abs() < 1e-11);
        let nu = stationary_distribution(&[0.5, 0.5, 0.5, 0.5], 2).unwrap();
        assert_eq!(nu, vec![0.5, 0.5]);
    }

    #[test]
    fn periodic_chain_fails_to_converge() {
        // bipartite chain 0 -> 1 -> {0, 2} -> 1 oscillates from the uniform start
        let p = [0.0, 1.0, 0.0, 0.5, 0.0, 0.5, 0.0, 1.0, 0.0];
        assert!(matches!(
            stationary_distribution(&p, 3),
            Err(Error::StationaryNotConverged { .. })
        ));
    }

    #[test]
    fn degenerate_shock_has_one_node() {
        let q = iid_quadrature(0.0, 21).unwrap();
        assert_eq!(q.nodes, vec![0.0]);
        assert_eq!(q.weights, vec![1.0]);
        assert!(iid_quadrature(-0.1, 3).is_err());
    }

    #[test]
    fn quadrature_is_symmetric_and_normalized() {
        let q = iid_quadrature(0.03, 21).unwrap();
        let mean: f64 = q.integrate(|x| x);
        assert!(mean.abs() < 1e-12);
        assert!((q.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(q.nodes.iter().all(|&x| x > q.lower && x < q.upper));
        assert_eq!(q.zero_node(), Some(10));
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(7);
        let i: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(12)).sum();
        assert!((i - 2.0 / 13.0).abs() < 1e-14);
    }
}
