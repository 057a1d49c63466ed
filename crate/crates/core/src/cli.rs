//! Command-line front end: config ingestion, subcommands and manifests.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::artifact::{config_hash, load_solution, save_solution, RunManifest};
use crate::economy::{EconomyConfig, Theta};
use crate::measures::{autarky_slice, density_slice, distorted_moments, reference_state, write_slice_csv, Moments};
use crate::simulate::{
    median_debt_index, read_observed_path, run_observed_path, simulate_panel, subsample_stats, write_panel_csv,
    write_path_csv, Measure, PanelStats, SimOptions, WindowOptions,
};
use crate::solver::{solve_model, EquilibriumSolution, Model, Progress};
use crate::uncertainty::{default_t_grid, dep_curve, moment_measure, write_dep_csv, write_pi_csv, MomentOptions, WeightEstimator, DEFAULT_BURN_IN};
use crate::{Error, Result};

pub const THREADS_ENV: &str = "ROBUST_SOVEREIGN_THREADS";

#[derive(Debug, Parser)]
#[command(name = "robust-sovereign", version, about = "Sovereign default with robust lenders")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the equilibrium for a config and write the solution artifact.
    Solve(SolveArgs),
    /// Simulate a panel from a solved equilibrium.
    Simulate(SimulateArgs),
    /// Solve and simulate for a list of robustness parameters.
    SweepTheta(SweepArgs),
    /// Feed an observed output path through the equilibrium policies.
    Path(PathArgs),
    /// Detection-error probabilities or the quantile-moment measure.
    Uncertainty(UncertaintyArgs),
    /// Density slices, price schedule, thresholds and the output chain as CSV.
    ExportSlices(ExportArgs),
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Seed of the smoke simulation recorded in the manifest.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Paths in the smoke simulation; 0 skips it.
    #[arg(long, default_value_t = 200)]
    pub smoke_paths: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MeasureArg {
    Approximating,
    Distorted,
}

impl From<MeasureArg> for Measure {
    fn from(m: MeasureArg) -> Self {
        match m {
            MeasureArg::Approximating => Measure::Approximating,
            MeasureArg::Distorted => Measure::Distorted,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimFlags {
    #[arg(long, default_value_t = 2000)]
    pub n_paths: usize,
    #[arg(long, default_value_t = 4000)]
    pub n_periods: usize,
    #[arg(long, default_value_t = 2000)]
    pub burn_in: usize,
    #[arg(long, value_enum, default_value_t = MeasureArg::Approximating)]
    pub measure: MeasureArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep simulated logs in levels inside each window.
    #[arg(long)]
    pub no_detrend: bool,
    /// Minimum number of qualifying windows.
    #[arg(long, default_value_t = 1000)]
    pub min_windows: usize,
}

impl SimFlags {
    fn options(&self) -> SimOptions {
        SimOptions {
            n_paths: self.n_paths,
            n_periods: self.n_periods,
            burn_in: self.burn_in,
            seed: self.seed,
            measure: self.measure.into(),
        }
    }

    fn windows(&self) -> WindowOptions {
        WindowOptions {
            n_subsamples: self.min_windows,
            detrend: !self.no_detrend,
            ..WindowOptions::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub solution: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub sim: SimFlags,
    /// Skip the per-period panel CSV.
    #[arg(long)]
    pub no_panel: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Comma-separated values; `inf` for no robustness.
    #[arg(long, value_delimiter = ',', default_value = "inf,5,1,0.75,0.5,0.25")]
    pub thetas: Vec<Theta>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub sim: SimFlags,
    /// Replications per generator for the detection error at T = 240.
    #[arg(long, default_value_t = 2000)]
    pub dep_reps: usize,
}

#[derive(Debug, Args)]
pub struct PathArgs {
    #[arg(long)]
    pub solution: PathBuf,
    /// Two-column CSV `date,value` with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// Initial debt level B0 (negative for debt); mapped to the nearest grid point.
    #[arg(long, allow_hyphen_values = true)]
    pub b0: f64,
    /// Values are log deviations rather than levels.
    #[arg(long)]
    pub log_deviation: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum UncertaintyMode {
    Dep,
    Pi,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WeightArg {
    NeweyWest,
    Exact,
}

#[derive(Debug, Args)]
pub struct UncertaintyArgs {
    #[arg(long)]
    pub solution: PathBuf,
    #[arg(long, value_enum)]
    pub mode: UncertaintyMode,
    /// `start:stop:step` or a comma-separated list; defaults to 90:2400:30.
    #[arg(long)]
    pub t_grid: Option<String>,
    /// Replications (per generator for `dep`, paths for `pi`).
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "0.2")]
    pub alpha: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.05)]
    pub zeta: f64,
    #[arg(long, default_value_t = 100_000)]
    pub quantile_draws: usize,
    /// Path length for the long-run variance estimate.
    #[arg(long, default_value_t = 240)]
    pub t_cal: usize,
    #[arg(long, default_value_t = 2000)]
    pub cal_reps: usize,
    /// Estimator of the GMM weight.
    #[arg(long, value_enum, default_value_t = WeightArg::NeweyWest)]
    pub weight: WeightArg,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub solution: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Output state index; defaults to the reference state.
    #[arg(long)]
    pub y: Option<usize>,
    /// Debt level; defaults to the simulated median.
    #[arg(long, allow_hyphen_values = true)]
    pub b: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Paths used to locate the median debt.
    #[arg(long, default_value_t = 200)]
    pub n_paths: usize,
}

pub fn parse_t_grid(text: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("bad T grid `{text}`: use start:stop:step or a comma-separated list"));
    let grid: Vec<usize> = if text.contains(':') {
        let parts: Vec<usize> = text
            .split(':')
            .map(|s| s.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        match parts[..] {
            [a, b, s] if s > 0 && a <= b => (a..=b).step_by(s).collect(),
            _ => return Err(bad()),
        }
    } else {
        text.split(',')
            .map(|s| s.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    if grid.is_empty() || grid.contains(&0) {
        return Err(bad());
    }
    Ok(grid)
}

/// Prints a line every 50 iterations to stderr.
struct Reporter;

impl Progress for Reporter {
    fn iteration(&mut self, it: usize, value: f64, price: f64, damping: f64) {
        if it.is_multiple_of(50) {
            eprintln!("iteration {it}: value residual {value:.3e}, price residual {price:.3e}, damping {damping}");
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn solve(config: &EconomyConfig) -> Result<EquilibriumSolution> {
    let model = Model::new(config.clone())?;
    let started = std::time::Instant::now();
    let sol = solve_model(&model, &mut Reporter)?;
    eprintln!(
        "converged after {} iterations in {:.1?}",
        sol.diagnostics.iterations,
        started.elapsed()
    );
    Ok(sol)
}

fn nearest_bond(solution: &EquilibriumSolution, b: f64) -> usize {
    let bonds = &solution.grids.bonds;
    let mut best = 0;
    for (i, &v) in bonds.iter().enumerate() {
        if (v - b).abs() < (bonds[best] - b).abs() {
            best = i;
        }
    }
    best
}

pub fn cmd_solve(args: &SolveArgs, manifest: &mut RunManifest) -> Result<EquilibriumSolution> {
    let config = EconomyConfig::from_path(&args.config)?;
    manifest.config_hash = Some(config_hash(&config));
    manifest.seed = Some(args.seed);
    let sol = solve(&config)?;
    save_solution(&args.out, &sol)?;
    manifest.artifacts.push(args.out.clone());
    let d = &sol.diagnostics;
    manifest.summary.insert("iterations".into(), json!(d.iterations));
    manifest.summary.insert("value_residual".into(), json!(d.value_residual));
    manifest.summary.insert("price_residual".into(), json!(d.price_residual));
    manifest.summary.insert("lower_bound_choices".into(), json!(d.lower_bound_choices));
    manifest.summary.insert("monotonicity_violations".into(), json!(d.monotonicity_violations));
    if args.smoke_paths > 0 {
        let opts = SimOptions {
            n_paths: args.smoke_paths,
            seed: args.seed,
            ..SimOptions::default()
        };
        let panel = simulate_panel(&sol, &opts)?;
        manifest.summary.insert(
            "smoke_default_frequency".into(),
            json!(crate::simulate::default_frequency(&panel)),
        );
    }
    Ok(sol)
}

fn simulate_into(solution: &EquilibriumSolution, flags: &SimFlags, out_dir: &Path, panel_csv: bool, manifest: &mut RunManifest) -> Result<PanelStats> {
    let panel = simulate_panel(solution, &flags.options())?;
    let stats = subsample_stats(solution, &panel, &flags.windows())?;
    let stats_path = out_dir.join("stats.json");
    write_json(&stats_path, &stats)?;
    manifest.artifacts.push(stats_path);
    if panel_csv {
        let p = out_dir.join("panel.csv");
        write_panel_csv(&p, solution, &panel)?;
        manifest.artifacts.push(p);
    }
    Ok(stats)
}

pub fn cmd_simulate(args: &SimulateArgs, manifest: &mut RunManifest) -> Result<PanelStats> {
    let sol = load_solution(&args.solution)?;
    manifest.config_hash = Some(config_hash(&sol.config));
    manifest.seed = Some(args.sim.seed);
    create_dir(&args.out_dir)?;
    let stats = simulate_into(&sol, &args.sim, &args.out_dir, !args.no_panel, manifest)?;
    manifest.summary.insert("default_frequency".into(), json!(stats.default_frequency));
    manifest.summary.insert("mean_spread".into(), json!(stats.mean_spread.mean));
    Ok(stats)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub theta: String,
    pub iterations: usize,
    pub stats: PanelStats,
    pub dep_240: f64,
}

pub fn cmd_sweep_theta(args: &SweepArgs, manifest: &mut RunManifest) -> Result<Vec<SweepRow>> {
    let base = EconomyConfig::from_path(&args.config)?;
    manifest.config_hash = Some(config_hash(&base));
    manifest.seed = Some(args.sim.seed);
    create_dir(&args.out_dir)?;
    let json_path = args.out_dir.join("sweep.json");
    let csv_path = args.out_dir.join("sweep.csv");
    let mut rows = Vec::new();
    for &theta in &args.thetas {
        let config = EconomyConfig { theta, ..base.clone() };
        eprintln!("theta = {theta}");
        let sol = solve(&config)?;
        let tag = theta.to_string();
        let sol_path = args.out_dir.join(format!("solution_theta_{tag}.bin"));
        save_solution(&sol_path, &sol)?;
        manifest.artifacts.push(sol_path);
        let dir = args.out_dir.join(format!("theta_{tag}"));
        create_dir(&dir)?;
        let stats = simulate_into(&sol, &args.sim, &dir, false, manifest)?;
        let dep = dep_curve(&sol, &[240], args.dep_reps, args.sim.seed, DEFAULT_BURN_IN, &[])?;
        rows.push(SweepRow {
            theta: tag,
            iterations: sol.diagnostics.iterations,
            stats,
            dep_240: dep.dep[0],
        });
        // partial results survive a later failure
        write_json(&json_path, &rows)?;
        write_sweep_csv(&csv_path, &rows)?;
    }
    manifest.artifacts.push(json_path);
    manifest.artifacts.push(csv_path);
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "theta",
        "mean_spread",
        "std_spread",
        "mean_debt_output",
        "std_c_over_std_y",
        "std_tb_y",
        "corr_y_c",
        "corr_y_spread",
        "corr_y_tb_y",
        "default_frequency",
        "dep_240",
    ])?;
    for r in rows {
        let s = &r.stats;
        w.write_record(&[
            r.theta.clone(),
            opt(s.mean_spread.mean),
            opt(s.std_spread.mean),
            opt(s.mean_debt_output.mean),
            opt(s.std_c_over_std_y.mean),
            opt(s.std_tb_y.mean),
            opt(s.corr_y_c.mean),
            opt(s.corr_y_spread.mean),
            opt(s.corr_y_tb_y.mean),
            s.default_frequency.to_string(),
            r.dep_240.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn cmd_path(args: &PathArgs, manifest: &mut RunManifest) -> Result<()> {
    let sol = load_solution(&args.solution)?;
    manifest.config_hash = Some(config_hash(&sol.config));
    manifest.seed = Some(args.seed);
    let (dates, ys) = read_observed_path(&args.input, args.log_deviation)?;
    let b0 = nearest_bond(&sol, args.b0);
    let run = run_observed_path(&sol, &ys, b0)?;
    write_path_csv(&args.out, Some(&dates), &run, &sol)?;
    manifest.artifacts.push(args.out.clone());
    if let (Some(pa), Some(pd)) = (run.p_approx.last(), run.p_distorted.last()) {
        manifest.summary.insert("terminal_p_approx".into(), json!(pa));
        manifest.summary.insert("terminal_p_distorted".into(), json!(pd));
    }
    Ok(())
}

pub fn cmd_uncertainty(args: &UncertaintyArgs, manifest: &mut RunManifest) -> Result<()> {
    let sol = load_solution(&args.solution)?;
    manifest.config_hash = Some(config_hash(&sol.config));
    manifest.seed = Some(args.seed);
    create_dir(&args.out_dir)?;
    let grid = match &args.t_grid {
        Some(t) => parse_t_grid(t)?,
        None => default_t_grid(),
    };
    match args.mode {
        UncertaintyMode::Dep => {
            let report = dep_curve(&sol, &grid, args.reps.unwrap_or(2000), args.seed, DEFAULT_BURN_IN, &args.alpha)?;
            let (json_path, csv_path) = (args.out_dir.join("dep.json"), args.out_dir.join("dep.csv"));
            write_json(&json_path, &report)?;
            write_dep_csv(&csv_path, &report)?;
            manifest.artifacts.extend([json_path, csv_path]);
            if let Some(k) = report.t_grid.iter().position(|&t| t == 240) {
                manifest.summary.insert("dep_240".into(), json!(report.dep[k]));
            }
        }
        UncertaintyMode::Pi => {
            let o = MomentOptions {
                tau: args.tau,
                zeta: args.zeta,
                n_quantile_draws: args.quantile_draws,
                t_cal: args.t_cal,
                n_cal_reps: args.cal_reps,
                n_reps: args.reps.unwrap_or(50_000),
                seed: args.seed,
                weight: match args.weight {
                    WeightArg::NeweyWest => WeightEstimator::NeweyWest,
                    WeightArg::Exact => WeightEstimator::Exact,
                },
            };
            let report = moment_measure(&sol, &grid, &o)?;
            let (json_path, csv_path) = (args.out_dir.join("pi.json"), args.out_dir.join("pi.csv"));
            write_json(&json_path, &report)?;
            write_pi_csv(&csv_path, &report)?;
            manifest.artifacts.extend([json_path, csv_path]);
            if let Some(k) = report.t_grid.iter().position(|&t| t == 240) {
                manifest.summary.insert("pi_240".into(), json!(report.pi[k]));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SliceSummary {
    y: usize,
    b: usize,
    b_next: usize,
    p_approx: f64,
    p_distorted: f64,
    approximating: Moments,
    distorted: Moments,
}

pub fn cmd_export_slices(args: &ExportArgs, manifest: &mut RunManifest) -> Result<()> {
    let sol = load_solution(&args.solution)?;
    manifest.config_hash = Some(config_hash(&sol.config));
    manifest.seed = Some(args.seed);
    create_dir(&args.out_dir)?;
    let model = sol.model()?;
    let b = match args.b {
        Some(b) => nearest_bond(&sol, b),
        None => {
            let opts = SimOptions {
                n_paths: args.n_paths,
                seed: args.seed,
                ..SimOptions::default()
            };
            median_debt_index(&simulate_panel(&sol, &opts)?).unwrap_or(model.grids.zero_index)
        }
    };
    let (y, b_next, p_approx, p_distorted) = match args.y {
        Some(y) => {
            if y >= model.n_y() {
                return Err(Error::invalid("y", format!("state {y} is outside the {}-state chain", model.n_y())));
            }
            let j = sol
                .policies
                .decision_at(&model, y, b, 0.0)
                .unwrap_or(model.grids.zero_index);
            let (pa, pd) = crate::measures::conditional_default_probs(&sol, y, j)?;
            (y, j, pa, pd)
        }
        None => {
            let r = reference_state(&sol, b)?;
            (r.y, r.b_next, r.p_approx, r.p_distorted)
        }
    };
    let slice = density_slice(&sol, y, b, b_next)?;
    let (approximating, distorted) = distorted_moments(&slice);
    let mut written = Vec::new();
    let p = args.out_dir.join("slice_access.csv");
    write_slice_csv(&p, &slice)?;
    written.push(p);
    let p = args.out_dir.join("slice_autarky.csv");
    write_slice_csv(&p, &autarky_slice(&sol, y)?)?;
    written.push(p);
    let p = args.out_dir.join("slice_summary.json");
    write_json(
        &p,
        &SliceSummary {
            y,
            b,
            b_next,
            p_approx,
            p_distorted,
            approximating,
            distorted,
        },
    )?;
    written.push(p);
    let p = args.out_dir.join("prices.csv");
    write_grid_csv(&p, &sol, |y, b| sol.prices.get(y, b))?;
    written.push(p);
    let p = args.out_dir.join("thresholds.csv");
    write_grid_csv(&p, &sol, |y, b| sol.policies.x_threshold[model.yb(y, b)])?;
    written.push(p);
    let p = args.out_dir.join("default_prob.csv");
    write_grid_csv(&p, &sol, |y, b| sol.policies.default_prob[model.yb(y, b)])?;
    written.push(p);
    let p = args.out_dir.join("chain.csv");
    write_chain_csv(&p, &sol)?;
    written.push(p);
    manifest.artifacts.extend(written);
    manifest.summary.insert("p_approx".into(), json!(p_approx));
    manifest.summary.insert("p_distorted".into(), json!(p_distorted));
    Ok(())
}

/// Long format: `y, b, value`.
fn write_grid_csv(path: &Path, sol: &EquilibriumSolution, f: impl Fn(usize, usize) -> f64) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["y", "b", "value"])?;
    for (yi, y) in sol.grids.chain.levels.iter().enumerate() {
        for (bi, b) in sol.grids.bonds.iter().enumerate() {
            let v = f(yi, bi);
            let v = if v.is_finite() { v.to_string() } else if v > 0.0 { "inf".into() } else { "-inf".into() };
            w.write_record(&[y.to_string(), b.to_string(), v])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Columns: `level, stationary, p_0 .. p_{n-1}`.
fn write_chain_csv(path: &Path, sol: &EquilibriumSolution) -> Result<()> {
    let chain = &sol.grids.chain;
    let n = chain.len();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["level".to_string(), "stationary".to_string()];
    header.extend((0..n).map(|j| format!("p_{j}")));
    w.write_record(&header)?;
    for i in 0..n {
        let mut row = vec![chain.levels[i].to_string(), chain.stationary[i].to_string()];
        row.extend(chain.row(i).iter().map(|p| p.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn manifest_path(command: &Command) -> PathBuf {
    match command {
        Command::Solve(a) => a.out.with_extension("manifest.json"),
        Command::Simulate(a) => a.out_dir.join("manifest.json"),
        Command::SweepTheta(a) => a.out_dir.join("manifest.json"),
        Command::Path(a) => a.out.with_extension("manifest.json"),
        Command::Uncertainty(a) => a.out_dir.join("manifest.json"),
        Command::ExportSlices(a) => a.out_dir.join("manifest.json"),
    }
}

/// Runs a parsed command line and writes its manifest.
pub fn run(cli: Cli, argv: Vec<String>) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let mut manifest = RunManifest::start(argv);
    match &cli.command {
        Command::Solve(a) => cmd_solve(a, &mut manifest).map(|_| ())?,
        Command::Simulate(a) => cmd_simulate(a, &mut manifest).map(|_| ())?,
        Command::SweepTheta(a) => cmd_sweep_theta(a, &mut manifest).map(|_| ())?,
        Command::Path(a) => cmd_path(a, &mut manifest)?,
        Command::Uncertainty(a) => cmd_uncertainty(a, &mut manifest)?,
        Command::ExportSlices(a) => cmd_export_slices(a, &mut manifest)?,
    }
    manifest.finish(&manifest_path(&cli.command))
}
