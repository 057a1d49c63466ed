//! Detection-error probabilities and the quantile-moment uncertainty measure.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::markov::MarkovChain;
use crate::simulate::{path_rng, step, Measure, State};
use crate::solver::{EquilibriumSolution, Model};
use crate::{Error, Result};

pub const DEFAULT_BURN_IN: usize = 2000;
pub const GMM_WARM_UP: usize = 1000;

/// `{90, 120, ..., 2400}`.
pub fn default_t_grid() -> Vec<usize> {
    (90..=2400).step_by(30).collect()
}

/// `log L_distorted - log L_approximating` along one simulated path,
/// recorded after each length in `t_grid` (ascending).
pub fn loglik_ratio_path(
    model: &Model,
    solution: &EquilibriumSolution,
    t_grid: &[usize],
    burn_in: usize,
    generator: Measure,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let t_max = t_grid.last().copied().unwrap_or(0);
    let mut state = State::initial(model);
    for _ in 0..burn_in {
        step(model, solution, &mut state, rng, generator);
    }
    let mut out = Vec::with_capacity(t_grid.len());
    let mut next = t_grid.iter().peekable();
    let mut total = 0.0;
    for t in 1..=t_max {
        let (_, m) = step(model, solution, &mut state, rng, generator);
        if let Some(m) = m {
            total += m[state.y].ln();
        }
        while next.peek() == Some(&&t) {
            out.push(total);
            next.next();
        }
    }
    out
}

/// Classification error rates of the likelihood-ratio test, with exact
/// ties counted as a coin flip.
pub fn error_rates(ratios_approx: &[f64], ratios_distorted: &[f64]) -> (f64, f64) {
    let rate = |v: &[f64], wrong: fn(f64) -> bool| -> f64 {
        if v.is_empty() {
            return 0.0;
        }
        let s: f64 = v
            .iter()
            .map(|&r| {
                if r == 0.0 {
                    0.5
                } else if wrong(r) {
                    1.0
                } else {
                    0.0
                }
            })
            .sum();
        s / v.len() as f64
    };
    (rate(ratios_approx, |r| r > 0.0), rate(ratios_distorted, |r| r < 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "t", rename_all = "snake_case")]
pub enum TAlpha {
    /// Detection error is already below `alpha` at the first grid point.
    BelowGrid,
    Crossing(f64),
    /// Detection error never falls below `alpha` on the grid.
    OpenEnded,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TAlphaEntry {
    pub alpha: f64,
    pub t_alpha: TAlpha,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepReport {
    pub theta: String,
    pub t_grid: Vec<usize>,
    pub p_a: Vec<f64>,
    pub p_d: Vec<f64>,
    pub dep: Vec<f64>,
    pub n_reps: usize,
    pub seed: u64,
    pub burn_in: usize,
    pub t_alpha: Vec<TAlphaEntry>,
}

/// Detection-error probabilities over a grid of sample lengths. Each
/// replication simulates one path per generator and reads the ratio off
/// at every grid length.
pub fn dep_curve(
    solution: &EquilibriumSolution,
    t_grid: &[usize],
    n_reps: usize,
    seed: u64,
    burn_in: usize,
    alphas: &[f64],
) -> Result<DepReport> {
    let model = solution.model()?;
    let mut grid = t_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let run = |generator: Measure, offset: usize| -> Vec<Vec<f64>> {
        (0..n_reps)
            .into_par_iter()
            .map(|r| {
                let mut rng = path_rng(seed, 2 * r + offset);
                loglik_ratio_path(&model, solution, &grid, burn_in, generator, &mut rng)
            })
            .collect()
    };
    let approx = run(Measure::Approximating, 0);
    let distorted = run(Measure::Distorted, 1);
    let mut p_a = Vec::with_capacity(grid.len());
    let mut p_d = Vec::with_capacity(grid.len());
    let mut dep = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let a: Vec<f64> = approx.iter().map(|v| v[k]).collect();
        let d: Vec<f64> = distorted.iter().map(|v| v[k]).collect();
        let (pa, pd) = error_rates(&a, &d);
        p_a.push(pa);
        p_d.push(pd);
        dep.push(0.5 * (pa + pd));
    }
    let t_alpha = alphas
        .iter()
        .map(|&alpha| TAlphaEntry {
            alpha,
            t_alpha: t_alpha(&grid, &dep, alpha),
        })
        .collect();
    Ok(DepReport {
        theta: solution.config.effective_theta().to_string(),
        t_grid: grid,
        p_a,
        p_d,
        dep,
        n_reps,
        seed,
        burn_in,
        t_alpha,
    })
}

/// Longest sample for which the running-minimum envelope of the
/// detection-error curve stays at or above `alpha`, interpolated linearly.
pub fn t_alpha(t_grid: &[usize], dep: &[f64], alpha: f64) -> TAlpha {
    let mut env = Vec::with_capacity(dep.len());
    let mut lowest = f64::INFINITY;
    for &d in dep {
        lowest = lowest.min(d);
        env.push(lowest);
    }
    match env.iter().position(|&e| e < alpha) {
        None => TAlpha::OpenEnded,
        Some(0) => TAlpha::BelowGrid,
        Some(k) => {
            let (t0, t1) = (t_grid[k - 1] as f64, t_grid[k] as f64);
            let (e0, e1) = (env[k - 1], env[k]);
            TAlpha::Crossing(t0 + (e0 - alpha) / (e0 - e1) * (t1 - t0))
        }
    }
}

/// Smallest simulated output level whose empirical CDF reaches `tau`.
pub fn simulated_quantile(
    solution: &EquilibriumSolution,
    measure: Measure,
    tau: f64,
    n_draws: usize,
    seed: u64,
    burn_in: usize,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&tau) || n_draws == 0 {
        return Err(Error::invalid("tau", format!("need tau in [0, 1] and draws > 0, got {tau}")));
    }
    let model = solution.model()?;
    let mut rng = path_rng(seed, 0);
    let mut state = State::initial(&model);
    for _ in 0..burn_in {
        step(&model, solution, &mut state, &mut rng, measure);
    }
    let mut ys = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        step(&model, solution, &mut state, &mut rng, measure);
        ys.push(model.grids.chain.levels[state.y]);
    }
    ys.sort_by(f64::total_cmp);
    let k = ((tau * n_draws as f64).ceil() as usize).clamp(1, n_draws);
    Ok(ys[k - 1])
}

pub fn distorted_quantile(solution: &EquilibriumSolution, tau: f64, n_draws: usize, seed: u64) -> Result<f64> {
    simulated_quantile(solution, Measure::Distorted, tau, n_draws, seed, DEFAULT_BURN_IN)
}

/// Draws output levels from the chain alone.
struct ChainWalk<'a> {
    chain: &'a MarkovChain,
    cdf: Vec<f64>,
    state: usize,
}

impl<'a> ChainWalk<'a> {
    fn new(chain: &'a MarkovChain) -> Self {
        let n = chain.len();
        let mut cdf = Vec::with_capacity(n * n);
        for y in 0..n {
            let mut acc = 0.0;
            for &p in chain.row(y) {
                acc += p;
                cdf.push(acc);
            }
        }
        ChainWalk {
            chain,
            cdf,
            state: chain.median_index(),
        }
    }

    fn next(&mut self, rng: &mut impl Rng) -> f64 {
        let n = self.chain.len();
        let row = &self.cdf[self.state * n..(self.state + 1) * n];
        let u: f64 = rng.gen::<f64>() * row[n - 1];
        self.state = row.partition_point(|&c| c <= u).min(n - 1);
        self.chain.levels[self.state]
    }
}

/// Newey-West long-run variance with Bartlett weights.
pub fn newey_west(g: &[f64], bandwidth: usize) -> f64 {
    let n = g.len();
    if n == 0 {
        return 0.0;
    }
    let mean = g.iter().sum::<f64>() / n as f64;
    let autocov = |l: usize| -> f64 {
        (l..n).map(|t| (g[t] - mean) * (g[t - l] - mean)).sum::<f64>() / n as f64
    };
    let mut omega = autocov(0);
    for l in 1..=bandwidth.min(n - 1) {
        omega += 2.0 * (1.0 - l as f64 / (bandwidth as f64 + 1.0)) * autocov(l);
    }
    omega
}

/// Long-run variance of `1{y <= nu} - tau` under the stationary chain,
/// from the fundamental matrix `(I - P + 1 nu')^-1`.
pub fn exact_long_run_variance(chain: &MarkovChain, nu: f64, tau: f64) -> Result<f64> {
    use nalgebra::DMatrix;
    let n = chain.len();
    let pi = &chain.stationary;
    let g: Vec<f64> = chain.levels.iter().map(|&y| if y <= nu { 1.0 - tau } else { -tau }).collect();
    let mean: f64 = g.iter().zip(pi).map(|(g, p)| g * p).sum();
    let h = DMatrix::from_iterator(n, 1, g.iter().map(|g| g - mean));
    let p = DMatrix::from_row_slice(n, n, &chain.transition);
    let stat = DMatrix::from_row_slice(1, n, pi);
    let z = (DMatrix::identity(n, n) - p + DMatrix::from_element(n, 1, 1.0) * stat)
        .try_inverse()
        .ok_or_else(|| Error::Config("transition matrix has no fundamental matrix".into()))?;
    let zh = (2.0 * z - DMatrix::identity(n, n)) * &h;
    Ok((0..n).map(|i| pi[i] * h[(i, 0)] * zh[(i, 0)]).sum())
}

fn indicator_moments(levels: impl Iterator<Item = f64>, nu: f64, tau: f64) -> Vec<f64> {
    levels.map(|y| if y <= nu { 1.0 - tau } else { -tau }).collect()
}

/// `V = 1 / omega`, with `omega` the long-run variance of
/// `1{y <= nu} - tau` under the approximating chain, averaged over paths.
pub fn gmm_weight(chain: &MarkovChain, nu: f64, tau: f64, t_cal: usize, n_reps: usize, seed: u64) -> Result<f64> {
    let bandwidth = (t_cal as f64).cbrt().floor() as usize;
    let omegas: Vec<f64> = (0..n_reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = path_rng(seed, r);
            let mut walk = ChainWalk::new(chain);
            for _ in 0..GMM_WARM_UP {
                walk.next(&mut rng);
            }
            let g = indicator_moments((0..t_cal).map(|_| walk.next(&mut rng)), nu, tau);
            newey_west(&g, bandwidth)
        })
        .collect();
    let omega = omegas.iter().sum::<f64>() / omegas.len().max(1) as f64;
    if !(omega > 1e-12) {
        return Err(Error::DegenerateVariance(omega));
    }
    Ok(1.0 / omega)
}

/// Fraction of approximating-model samples of each length in `t_grid`
/// (ascending) for which `T * mean(g)^2 * V >= c_zeta`.
pub fn pi_curve(
    chain: &MarkovChain,
    nu: f64,
    v: f64,
    tau: f64,
    zeta: f64,
    t_grid: &[usize],
    n_reps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let c = chi2_quantile(zeta)?;
    let t_max = t_grid.iter().copied().max().unwrap_or(0);
    let rejections: Vec<Vec<bool>> = (0..n_reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = path_rng(seed, r);
            let mut walk = ChainWalk::new(chain);
            for _ in 0..GMM_WARM_UP {
                walk.next(&mut rng);
            }
            let mut out = Vec::with_capacity(t_grid.len());
            let mut sum = 0.0;
            let mut next = t_grid.iter().peekable();
            for t in 1..=t_max {
                sum += if walk.next(&mut rng) <= nu { 1.0 - tau } else { -tau };
                while next.peek() == Some(&&t) {
                    let mean = sum / t as f64;
                    out.push(t as f64 * mean * mean * v >= c);
                    next.next();
                }
            }
            out
        })
        .collect();
    Ok((0..t_grid.len())
        .map(|k| rejections.iter().filter(|r| r[k]).count() as f64 / n_reps.max(1) as f64)
        .collect())
}

pub fn pi_measure(chain: &MarkovChain, nu: f64, v: f64, tau: f64, t: usize, zeta: f64, n_reps: usize, seed: u64) -> Result<f64> {
    Ok(pi_curve(chain, nu, v, tau, zeta, &[t], n_reps, seed)?[0])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentMeasureReport {
    pub theta: String,
    pub tau: f64,
    pub zeta: f64,
    pub nu: f64,
    pub v: f64,
    pub c_zeta: f64,
    pub t_grid: Vec<usize>,
    pub pi: Vec<f64>,
    pub n_quantile_draws: usize,
    pub t_cal: usize,
    pub n_cal_reps: usize,
    pub n_reps: usize,
    pub seed: u64,
    pub weight: WeightEstimator,
}

/// How the GMM weight `V` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WeightEstimator {
    /// Newey-West on simulated paths of length `t_cal`.
    #[default]
    NeweyWest,
    /// Closed form from the chain's fundamental matrix.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentOptions {
    pub tau: f64,
    pub zeta: f64,
    pub n_quantile_draws: usize,
    pub t_cal: usize,
    pub n_cal_reps: usize,
    pub n_reps: usize,
    pub seed: u64,
    pub weight: WeightEstimator,
}

impl Default for MomentOptions {
    fn default() -> Self {
        MomentOptions {
            tau: 0.1,
            zeta: 0.05,
            n_quantile_draws: 100_000,
            t_cal: 240,
            n_cal_reps: 2000,
            n_reps: 50_000,
            seed: 0,
            weight: WeightEstimator::NeweyWest,
        }
    }
}

pub fn moment_measure(solution: &EquilibriumSolution, t_grid: &[usize], o: &MomentOptions) -> Result<MomentMeasureReport> {
    let mut grid = t_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let nu = distorted_quantile(solution, o.tau, o.n_quantile_draws, o.seed)?;
    let chain = &solution.grids.chain;
    let v = match o.weight {
        WeightEstimator::NeweyWest => gmm_weight(chain, nu, o.tau, o.t_cal, o.n_cal_reps, o.seed.wrapping_add(1))?,
        WeightEstimator::Exact => {
            let omega = exact_long_run_variance(chain, nu, o.tau)?;
            if !(omega > 1e-12) {
                return Err(Error::DegenerateVariance(omega));
            }
            1.0 / omega
        }
    };
    let pi = pi_curve(chain, nu, v, o.tau, o.zeta, &grid, o.n_reps, o.seed.wrapping_add(2))?;
    Ok(MomentMeasureReport {
        theta: solution.config.effective_theta().to_string(),
        tau: o.tau,
        zeta: o.zeta,
        nu,
        v,
        c_zeta: chi2_quantile(o.zeta)?,
        t_grid: grid,
        pi,
        n_quantile_draws: o.n_quantile_draws,
        t_cal: o.t_cal,
        n_cal_reps: o.n_cal_reps,
        n_reps: o.n_reps,
        seed: o.seed,
        weight: o.weight,
    })
}

/// Share of default announcements that occur with output at or below `nu`.
pub fn default_share_below(solution: &EquilibriumSolution, panel: &crate::simulate::SimulationPanel, nu: f64) -> Option<f64> {
    let levels = &solution.grids.chain.levels;
    let (mut below, mut total) = (0usize, 0usize);
    for p in panel.paths.iter().flatten().filter(|p| p.default) {
        total += 1;
        below += (levels[p.y as usize] <= nu) as usize;
    }
    (total > 0).then(|| below as f64 / total as f64)
}

/// `(1 - zeta)` quantile of the chi-square distribution with one degree of
/// freedom, by bisection on the regularized lower incomplete gamma function.
pub fn chi2_quantile(zeta: f64) -> Result<f64> {
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(Error::invalid("zeta", format!("need 0 < zeta < 1, got {zeta}")));
    }
    let target = 1.0 - zeta;
    let cdf = |x: f64| statrs::function::gamma::gamma_lr(0.5, 0.5 * x);
    let mut hi = 1.0;
    while cdf(hi) < target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 * hi.max(1e-300) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn write_dep_csv(path: &Path, report: &DepReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "p_a", "p_d", "dep"])?;
    for k in 0..report.t_grid.len() {
        w.write_record(&[
            report.t_grid[k].to_string(),
            report.p_a[k].to_string(),
            report.p_d[k].to_string(),
            report.dep[k].to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_pi_csv(path: &Path, report: &MomentMeasureReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "pi"])?;
    for (t, p) in report.t_grid.iter().zip(&report.pi) {
        w.write_record(&[t.to_string(), p.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
