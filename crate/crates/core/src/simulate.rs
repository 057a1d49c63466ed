//! Monte Carlo panels under the approximating or distorted measure,
//! business-cycle statistics and the observed-output-path exercise.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::economy::{irr, spread_annualized};
use crate::measures::default_probs_with;
use crate::solver::{repay_choice_at, EquilibriumSolution, Model};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Approximating,
    Distorted,
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Measure::Approximating => "approximating",
            Measure::Distorted => "distorted",
        })
    }
}

impl FromStr for Measure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "approximating" => Ok(Measure::Approximating),
            "distorted" => Ok(Measure::Distorted),
            other => Err(Error::Config(format!(
                "unknown measure `{other}` (expected approximating or distorted)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub n_paths: usize,
    /// Total periods per path, burn-in included.
    pub n_periods: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub measure: Measure,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            n_paths: 2000,
            n_periods: 4000,
            burn_in: 2000,
            seed: 0,
            measure: Measure::Approximating,
        }
    }
}

pub const NO_CHOICE: u16 = u16::MAX;

/// One simulated period. `access` is the standing at the start of the
/// period; a default announcement happens in an access period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Period {
    pub y: u16,
    pub b: u16,
    /// Debt chosen for next period, `NO_CHOICE` outside repayment.
    pub b_next: u16,
    pub x: f64,
    pub access: bool,
    pub default: bool,
}

impl Period {
    pub fn repaid(&self) -> bool {
        self.access && !self.default
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationPanel {
    pub measure: Measure,
    pub seed: u64,
    pub burn_in: usize,
    /// Post-burn-in periods of each path.
    pub paths: Vec<Vec<Period>>,
}

/// Derived per-period series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    /// Output net of default costs.
    pub output: f64,
    pub consumption: f64,
    /// Price of the bond issued this period; `NaN` outside repayment.
    pub q: f64,
    /// Annualized spread in percent; `NaN` outside repayment.
    pub spread: f64,
    /// Trade balance in percent of output.
    pub tb_y: f64,
    /// `-B / output`; `NaN` in autarky.
    pub debt_y: f64,
}

impl Observation {
    pub fn of(model: &Model, solution: &EquilibriumSolution, p: &Period) -> Observation {
        let y = p.y as usize;
        let level = model.grids.chain.levels[y];
        if p.repaid() {
            let j = p.b_next as usize;
            let q = solution.prices.get(y, j);
            let c = model.consumption(&solution.prices, y, p.b as usize, p.x, j);
            let output = level + p.x;
            Observation {
                output,
                consumption: c,
                q,
                spread: spread_percent(model, q),
                tb_y: 100.0 * (output - c) / output,
                debt_y: -model.grids.bonds[p.b as usize] / output,
            }
        } else {
            let c = model.autarky_consumption(y, p.x);
            Observation {
                output: c,
                consumption: c,
                q: f64::NAN,
                spread: f64::NAN,
                tb_y: 0.0,
                debt_y: if p.access {
                    -model.grids.bonds[p.b as usize] / c
                } else {
                    f64::NAN
                },
            }
        }
    }
}

fn spread_percent(model: &Model, q: f64) -> f64 {
    match irr(q, model.config.lambda, model.config.psi) {
        Ok(r) if q > 0.0 => 100.0 * spread_annualized(r, model.config.r_f),
        _ => f64::NAN,
    }
}

/// Per-path RNG: one ChaCha8 stream per path index.
pub fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

pub(crate) fn draw_index(rng: &mut impl Rng, probs: &[f64], weights: Option<&[f64]>) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        let w = p * weights.map_or(1.0, |m| m[i]);
        if w > 0.0 {
            last = i;
            acc += w;
            if u < acc {
                return i;
            }
        }
    }
    last
}

pub(crate) fn draw_shock(rng: &mut impl Rng, sigma_x: f64, k: f64) -> f64 {
    if sigma_x == 0.0 {
        return 0.0;
    }
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= k {
            return sigma_x * z;
        }
    }
}

/// Economy state carried across periods.
#[derive(Debug, Clone, Copy)]
pub(crate) struct State {
    pub y: usize,
    pub b: usize,
    pub access: bool,
}

impl State {
    pub fn initial(model: &Model) -> State {
        State {
            y: model.grids.chain.median_index(),
            b: model.grids.zero_index,
            access: true,
        }
    }
}

/// Advance one period. Returns the period record and the distortion row
/// that governs the draw of next period's output, if any.
pub(crate) fn step<'a>(
    model: &Model,
    solution: &'a EquilibriumSolution,
    state: &mut State,
    rng: &mut impl Rng,
    measure: Measure,
) -> (Period, Option<&'a [f64]>) {
    let xq = &model.grids.xquad;
    let k = crate::markov::X_TRUNCATION;
    let mut x = draw_shock(rng, xq.sigma_x, k);
    let y = state.y;
    let mut period = Period {
        y: y as u16,
        b: state.b as u16,
        b_next: NO_CHOICE,
        x,
        access: state.access,
        default: false,
    };
    let field = solution.field();
    let m = if state.access {
        match solution.policies.decision_at(model, y, state.b, x) {
            Some(j) => {
                period.b_next = j as u16;
                state.b = j;
                field.m_star_row(y, j)
            }
            None => {
                x = xq.lower;
                period.x = x;
                period.default = true;
                state.access = false;
                field.m_autarky_row(y)
            }
        }
    } else {
        field.m_autarky_row(y)
    };
    if !state.access && rng.gen::<f64>() < model.config.pi_reentry {
        state.access = true;
        state.b = model.grids.zero_index;
    }
    let weights = match measure {
        Measure::Approximating => None,
        Measure::Distorted => m,
    };
    state.y = draw_index(rng, model.grids.chain.row(y), weights);
    (period, m)
}

pub fn simulate_panel(solution: &EquilibriumSolution, opts: &SimOptions) -> Result<SimulationPanel> {
    if opts.n_periods <= opts.burn_in {
        return Err(Error::invalid(
            "n_periods",
            format!("must exceed burn_in ({} <= {})", opts.n_periods, opts.burn_in),
        ));
    }
    let model = solution.model()?;
    if model.n_y() >= NO_CHOICE as usize || model.n_b() >= NO_CHOICE as usize {
        return Err(Error::invalid("numerics", "grids must have fewer than 65535 points to simulate"));
    }
    let paths = (0..opts.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(opts.seed, p);
            let mut state = State::initial(&model);
            let mut out = Vec::with_capacity(opts.n_periods - opts.burn_in);
            for t in 0..opts.n_periods {
                let (period, _) = step(&model, solution, &mut state, &mut rng, opts.measure);
                if t >= opts.burn_in {
                    out.push(period);
                }
            }
            out
        })
        .collect();
    Ok(SimulationPanel {
        measure: opts.measure,
        seed: opts.seed,
        burn_in: opts.burn_in,
        paths,
    })
}

/// Defaults per year over all simulated post-burn-in quarters.
pub fn default_frequency(panel: &SimulationPanel) -> f64 {
    let (mut defaults, mut periods) = (0usize, 0usize);
    for path in &panel.paths {
        periods += path.len();
        defaults += path.iter().filter(|p| p.default).count();
    }
    if periods == 0 {
        0.0
    } else {
        4.0 * defaults as f64 / periods as f64
    }
}

/// Lengths of completed exclusion spells, counting the announcement quarter.
pub fn autarky_spells(panel: &SimulationPanel) -> Vec<usize> {
    let mut spells = Vec::new();
    for path in &panel.paths {
        let mut current: Option<usize> = None;
        for p in path {
            if p.default {
                current = Some(1);
            } else if !p.access {
                if let Some(n) = current.as_mut() {
                    *n += 1;
                }
            } else if let Some(n) = current.take() {
                spells.push(n);
            }
        }
    }
    spells
}

/// Grid index of the median debt over periods in good standing.
pub fn median_debt_index(panel: &SimulationPanel) -> Option<usize> {
    let mut b: Vec<u16> = panel.paths.iter().flatten().filter(|p| p.access).map(|p| p.b).collect();
    if b.is_empty() {
        return None;
    }
    let mid = (b.len() - 1) / 2;
    let (_, m, _) = b.select_nth_unstable(mid);
    Some(*m as usize)
}

/// Point estimate with a 90% band across simulated paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: Option<f64>,
    pub p05: Option<f64>,
    pub p95: Option<f64>,
}

impl Stat {
    fn from_samples(mut v: Vec<f64>) -> Stat {
        v.retain(|x| x.is_finite());
        if v.is_empty() {
            return Stat {
                mean: None,
                p05: None,
                p95: None,
            };
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.sort_by(f64::total_cmp);
        Stat {
            mean: Some(mean),
            p05: Some(quantile_sorted(&v, 0.05)),
            p95: Some(quantile_sorted(&v, 0.95)),
        }
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(v: &[f64], tau: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let h = tau.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpreadQuantile {
    pub tau: f64,
    pub value: Option<f64>,
}

/// Business-cycle statistics; spreads and ratios in percent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PanelStats {
    pub mean_spread: Stat,
    pub std_spread: Stat,
    pub mean_debt_output: Stat,
    pub std_c_over_std_y: Stat,
    pub std_tb_y: Stat,
    pub corr_y_c: Stat,
    pub corr_y_spread: Stat,
    pub corr_y_tb_y: Stat,
    pub default_frequency: f64,
    pub output_drop: Stat,
    pub spread_quantiles: Vec<SpreadQuantile>,
    pub n_windows: usize,
    pub n_paths_with_windows: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowOptions {
    pub window: usize,
    pub pre_quiet: usize,
    /// Minimum number of qualifying windows across the panel.
    pub n_subsamples: usize,
    pub detrend: bool,
}

impl Default for WindowOptions {
    fn default() -> Self {
        WindowOptions {
            window: 35,
            pre_quiet: 4,
            n_subsamples: 1000,
            detrend: true,
        }
    }
}

/// Start indices of windows that end in a default announcement, with the
/// window and the `pre_quiet` periods before it all in good standing.
pub fn qualifying_windows(path: &[Period], opts: &WindowOptions) -> Vec<usize> {
    let need = opts.window + opts.pre_quiet;
    let mut out = Vec::new();
    let mut run = 0usize;
    for (t, p) in path.iter().enumerate() {
        run = if p.access { run + 1 } else { 0 };
        if p.default && run >= need {
            out.push(t + 1 - opts.window);
        }
    }
    out
}

/// Residuals of an OLS fit on a linear time trend.
pub fn detrend(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    if v.len() < 2 {
        return vec![0.0; v.len()];
    }
    let tbar = (n - 1.0) / 2.0;
    let vbar = v.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (t, &x) in v.iter().enumerate() {
        let dt = t as f64 - tbar;
        sxy += dt * (x - vbar);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    v.iter()
        .enumerate()
        .map(|(t, &x)| x - vbar - slope * (t as f64 - tbar))
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Pearson correlation; `None` when either series is constant.
pub fn correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    let scale = (saa * sbb).sqrt();
    (scale > 1e-300 * a.len() as f64 && saa > 0.0 && sbb > 0.0).then(|| sab / scale)
}

#[derive(Debug, Clone, Copy, Default)]
struct WindowStats {
    mean_spread: f64,
    std_spread: f64,
    debt_y: f64,
    rel_std_c: f64,
    std_tb: f64,
    corr_y_c: f64,
    corr_y_spread: f64,
    corr_y_tb: f64,
    drop: f64,
}

fn window_stats(obs: &[Observation], detrend_logs: bool) -> WindowStats {
    let ly: Vec<f64> = obs.iter().map(|o| o.output.ln()).collect();
    let lc: Vec<f64> = obs.iter().map(|o| o.consumption.ln()).collect();
    let (ly, lc) = if detrend_logs {
        (detrend(&ly), detrend(&lc))
    } else {
        (ly, lc)
    };
    let tb: Vec<f64> = obs.iter().map(|o| o.tb_y).collect();
    let (mut sy, mut ss): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
    for (o, &y) in obs.iter().zip(&ly) {
        if o.spread.is_finite() {
            sy.push(y);
            ss.push(o.spread);
        }
    }
    let debt: Vec<f64> = obs.iter().map(|o| o.debt_y).filter(|d| d.is_finite()).collect();
    let sd_y = std_dev(&ly);
    let nan = f64::NAN;
    WindowStats {
        mean_spread: if ss.is_empty() { nan } else { mean(&ss) },
        std_spread: if ss.is_empty() { nan } else { std_dev(&ss) },
        debt_y: if debt.is_empty() { nan } else { 100.0 * mean(&debt) },
        rel_std_c: if sd_y > 0.0 { std_dev(&lc) / sd_y } else { nan },
        std_tb: std_dev(&tb),
        corr_y_c: correlation(&ly, &lc).unwrap_or(nan),
        corr_y_spread: correlation(&sy, &ss).unwrap_or(nan),
        corr_y_tb: correlation(&ly, &tb).unwrap_or(nan),
        drop: 100.0 * ly[ly.len() - 1],
    }
}

pub const SPREAD_QUANTILES: [f64; 5] = [0.10, 0.25, 0.50, 0.75, 0.90];

/// Statistics over windows of good standing that end in a default,
/// averaged within each path and then across paths.
pub fn subsample_stats(solution: &EquilibriumSolution, panel: &SimulationPanel, opts: &WindowOptions) -> Result<PanelStats> {
    let model = solution.model()?;
    let per_path: Vec<(Vec<WindowStats>, Vec<f64>)> = panel
        .paths
        .par_iter()
        .map(|path| {
            let mut stats = Vec::new();
            let mut spreads = Vec::new();
            for start in qualifying_windows(path, opts) {
                let obs: Vec<Observation> = path[start..start + opts.window]
                    .iter()
                    .map(|p| Observation::of(&model, solution, p))
                    .collect();
                spreads.extend(obs.iter().map(|o| o.spread).filter(|s| s.is_finite()));
                stats.push(window_stats(&obs, opts.detrend));
            }
            (stats, spreads)
        })
        .collect();
    let n_windows: usize = per_path.iter().map(|(s, _)| s.len()).sum();
    if n_windows < opts.n_subsamples.max(1) {
        return Err(Error::TooFewWindows {
            found: n_windows,
            needed: opts.n_subsamples.max(1),
        });
    }
    let used: Vec<&Vec<WindowStats>> = per_path.iter().map(|(s, _)| s).filter(|s| !s.is_empty()).collect();
    let collect = |f: &dyn Fn(&WindowStats) -> f64| -> Stat {
        Stat::from_samples(
            used.iter()
                .map(|ws| {
                    let v: Vec<f64> = ws.iter().map(f).filter(|v| v.is_finite()).collect();
                    if v.is_empty() {
                        f64::NAN
                    } else {
                        mean(&v)
                    }
                })
                .collect(),
        )
    };
    let mut pooled: Vec<f64> = per_path.iter().flat_map(|(_, s)| s.iter().copied()).collect();
    pooled.sort_by(f64::total_cmp);
    Ok(PanelStats {
        mean_spread: collect(&|w| w.mean_spread),
        std_spread: collect(&|w| w.std_spread),
        mean_debt_output: collect(&|w| w.debt_y),
        std_c_over_std_y: collect(&|w| w.rel_std_c),
        std_tb_y: collect(&|w| w.std_tb),
        corr_y_c: collect(&|w| w.corr_y_c),
        corr_y_spread: collect(&|w| w.corr_y_spread),
        corr_y_tb_y: collect(&|w| w.corr_y_tb),
        default_frequency: default_frequency(panel),
        output_drop: collect(&|w| w.drop),
        spread_quantiles: SPREAD_QUANTILES
            .iter()
            .map(|&tau| SpreadQuantile {
                tau,
                value: (!pooled.is_empty()).then(|| quantile_sorted(&pooled, tau)),
            })
            .collect(),
        n_windows,
        n_paths_with_windows: used.len(),
    })
}

/// Mean detrended log-output deviation, in percent, in announcement
/// quarters that close a full window of good standing.
pub fn output_drop_at_default(solution: &EquilibriumSolution, panel: &SimulationPanel, window: usize) -> Result<f64> {
    let model = solution.model()?;
    let opts = WindowOptions {
        window,
        pre_quiet: 0,
        n_subsamples: 1,
        detrend: true,
    };
    let mut drops = Vec::new();
    let mut any_default = false;
    for path in &panel.paths {
        any_default |= path.iter().any(|p| p.default);
        for start in qualifying_windows(path, &opts) {
            let ly: Vec<f64> = path[start..start + window]
                .iter()
                .map(|p| Observation::of(&model, solution, p).output.ln())
                .collect();
            drops.push(100.0 * detrend(&ly)[window - 1]);
        }
    }
    if !any_default {
        return Err(Error::NoDefaults);
    }
    if drops.is_empty() {
        return Err(Error::TooFewWindows { found: 0, needed: 1 });
    }
    Ok(mean(&drops))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathRun {
    pub y_path: Vec<f64>,
    pub y_index: Vec<usize>,
    pub b0: usize,
    /// Debt chosen each period.
    pub b_next: Vec<usize>,
    pub spread: Vec<f64>,
    pub p_approx: Vec<f64>,
    pub p_distorted: Vec<f64>,
}

/// Feed an observed output path through the equilibrium policies at
/// `x = 0`, without letting the borrower default along the way.
pub fn run_observed_path(solution: &EquilibriumSolution, y_path: &[f64], b0: usize) -> Result<PathRun> {
    let model = solution.model()?;
    if b0 >= model.n_b() {
        return Err(Error::OffGrid(b0));
    }
    let chain = &model.grids.chain;
    let (lo, hi) = (chain.levels[0], chain.levels[model.n_y() - 1]);
    let mut run = PathRun {
        y_path: y_path.to_vec(),
        y_index: Vec::new(),
        b0,
        b_next: Vec::new(),
        spread: Vec::new(),
        p_approx: Vec::new(),
        p_distorted: Vec::new(),
    };
    let mut b = b0;
    for &y in y_path {
        if !(y > 0.0) {
            return Err(Error::invalid("y_path", format!("output levels must be positive, got {y}")));
        }
        if y < lo || y > hi {
            log::warn!("observed output {y} lies outside the grid [{lo}, {hi}]; using the nearest grid point");
        }
        let yi = chain.nearest_index(y);
        let j = match solution.policies.decision_at(&model, yi, b, 0.0) {
            Some(j) => j,
            None => repay_choice_at(&model, &solution.prices, &solution.borrower, yi, b, 0.0).1,
        };
        let (pa, pd) = default_probs_with(&model, solution, yi, j);
        run.y_index.push(yi);
        run.b_next.push(j);
        run.spread.push(spread_percent(&model, solution.prices.get(yi, j)));
        run.p_approx.push(pa);
        run.p_distorted.push(pd);
        b = j;
    }
    Ok(run)
}

/// Reads a `date, value` CSV with a header row. Values are output levels,
/// or log deviations from trend when `log_deviation` is set.
pub fn read_observed_path(path: &Path, log_deviation: bool) -> Result<(Vec<String>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let mut dates = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = || Error::Config(format!("{}: row {} needs `date,value`", path.display(), line + 2));
        let date = rec.get(0).ok_or_else(bad)?.trim().to_string();
        let v: f64 = rec.get(1).ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
        dates.push(date);
        values.push(if log_deviation { v.exp() } else { v });
    }
    Ok((dates, values))
}

pub fn write_path_csv(path: &Path, dates: Option<&[String]>, run: &PathRun, solution: &EquilibriumSolution) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "date", "y", "y_grid", "b_next", "spread", "p_approx", "p_distorted"])?;
    for t in 0..run.y_path.len() {
        w.write_record(&[
            t.to_string(),
            dates.and_then(|d| d.get(t)).cloned().unwrap_or_default(),
            run.y_path[t].to_string(),
            solution.grids.chain.levels[run.y_index[t]].to_string(),
            solution.grids.bonds[run.b_next[t]].to_string(),
            fmt_num(run.spread[t]),
            run.p_approx[t].to_string(),
            run.p_distorted[t].to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

/// One row per path and period; undefined values are empty fields.
pub fn write_panel_csv(path: &Path, solution: &EquilibriumSolution, panel: &SimulationPanel) -> Result<()> {
    let model = solution.model()?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "path", "t", "y", "x", "b", "access", "default", "b_next", "q", "spread", "consumption", "tb_y",
    ])?;
    for (i, periods) in panel.paths.iter().enumerate() {
        for (t, p) in periods.iter().enumerate() {
            let o = Observation::of(&model, solution, p);
            let b_next = if p.b_next == NO_CHOICE {
                String::new()
            } else {
                model.grids.bonds[p.b_next as usize].to_string()
            };
            w.write_record(&[
                i.to_string(),
                (t + panel.burn_in).to_string(),
                model.grids.chain.levels[p.y as usize].to_string(),
                p.x.to_string(),
                model.grids.bonds[p.b as usize].to_string(),
                (p.access as u8).to_string(),
                (p.default as u8).to_string(),
                b_next,
                fmt_num(o.q),
                fmt_num(o.spread),
                o.consumption.to_string(),
                o.tb_y.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
