//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Criteria 1-10 run on the 21 x 120 grids. Criteria 11-15 need the full
//! 200 x 580 calibration and only run with `ACCEPTANCE_FULL=1`; solved
//! artifacts are cached by config hash (`ACCEPTANCE_CACHE`, default under
//! the cargo target directory). Set `ACCEPTANCE_STRICT=1` to exit nonzero
//! when any criterion fails.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use robust_sovereign::artifact::{config_hash, load_solution, save_solution};
use robust_sovereign::economy::{irr, EconomyConfig, KernelChoice, Numerics, Theta};
use robust_sovereign::measures::{distortion_violations, reference_state};
use robust_sovereign::simulate::{
    autarky_spells, median_debt_index, path_rng, simulate_panel, subsample_stats, Measure, SimOptions, WindowOptions,
};
use robust_sovereign::solver::{
    autarky_forever, borrower_step, price_update, solve_equilibrium, EquilibriumSolution, PriceSchedule, Segments,
};
use robust_sovereign::uncertainty::{
    chi2_quantile, default_t_grid, dep_curve, exact_long_run_variance, gmm_weight, loglik_ratio_path, moment_measure, pi_curve,
    simulated_quantile, MomentOptions, TAlpha, WeightEstimator, DEFAULT_BURN_IN,
};

struct Report {
    passed: usize,
    failed: usize,
    skipped: usize,
}

impl Report {
    fn check(&mut self, id: u32, name: &str, ok: bool, detail: String) {
        if ok {
            self.passed += 1;
        } else {
            self.failed += 1;
        }
        println!("[{}] {id:>2} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }

    fn error(&mut self, id: u32, name: &str, e: impl std::fmt::Display) {
        self.failed += 1;
        println!("[FAIL] {id:>2} {name}: error: {e}");
    }

    fn skip(&mut self, id: u32, name: &str, why: &str) {
        self.skipped += 1;
        println!("[SKIP] {id:>2} {name}: {why}");
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn small() -> EconomyConfig {
    EconomyConfig::small()
}

fn within(v: f64, target: f64, tol: f64) -> bool {
    (v - target).abs() <= tol
}

/// Joint value and price iteration for one-period debt without the shock:
/// `V_o = max(V_R, V_A)`, `q(y, B') = gamma * sum_y' P (1 - D(y', B'))`.
fn monolithic_oracle(sol: &EquilibriumSolution) -> (Vec<f64>, Vec<f64>) {
    let cfg = &sol.config;
    let chain = &sol.grids.chain;
    let bonds = &sol.grids.bonds;
    let zero = sol.grids.zero_index;
    let (n_y, n_b) = (chain.len(), bonds.len());
    let u = |c: f64| if c > 0.0 { -1.0 / c } else { f64::NEG_INFINITY };
    assert_eq!(cfg.sigma, 2.0);
    let p = |y: usize, yp: usize| chain.transition[y * n_y + yp];
    let cost = |y: f64| (cfg.kappa1 * y + cfg.kappa2 * y * y).max(0.0);

    let mut v_o = vec![0.0; n_y * n_b];
    let mut v_a = vec![0.0; n_y];
    let mut q = vec![cfg.gamma; n_y * n_b];
    for _ in 0..20_000 {
        let mut ev_o = vec![0.0; n_y * n_b];
        let mut ev_a = vec![0.0; n_y];
        for y in 0..n_y {
            for yp in 0..n_y {
                for j in 0..n_b {
                    ev_o[y * n_b + j] += p(y, yp) * v_o[yp * n_b + j];
                }
                ev_a[y] += p(y, yp) * (cfg.pi_reentry * v_o[yp * n_b + zero] + (1.0 - cfg.pi_reentry) * v_a[yp]);
            }
        }
        let new_a: Vec<f64> = (0..n_y)
            .map(|y| {
                let lvl = chain.levels[y];
                u(lvl - cost(lvl)) + cfg.beta * ev_a[y]
            })
            .collect();
        let mut new_o = vec![0.0; n_y * n_b];
        let mut default = vec![false; n_y * n_b];
        for y in 0..n_y {
            for b in 0..n_b {
                let mut best = f64::NEG_INFINITY;
                for j in 0..n_b {
                    let c = chain.levels[y] + bonds[b] - q[y * n_b + j] * bonds[j];
                    best = best.max(u(c) + cfg.beta * ev_o[y * n_b + j]);
                }
                default[y * n_b + b] = best < new_a[y];
                new_o[y * n_b + b] = best.max(new_a[y]);
            }
        }
        let mut new_q = vec![0.0; n_y * n_b];
        for y in 0..n_y {
            for j in 0..n_b {
                let repaid: f64 = (0..n_y).filter(|&yp| !default[yp * n_b + j]).map(|yp| p(y, yp)).sum();
                new_q[y * n_b + j] = cfg.gamma * repaid;
            }
        }
        let change = sup_diff(&new_o, &v_o).max(sup_diff(&new_a, &v_a)).max(sup_diff(&new_q, &q));
        v_o = new_o;
        v_a = new_a;
        q = new_q;
        if change < 1e-13 {
            break;
        }
    }
    (v_o, q)
}

fn solve_or(report: &mut Report, id: u32, name: &str, cfg: &EconomyConfig) -> Option<EquilibriumSolution> {
    match solve_equilibrium(cfg) {
        Ok(s) => Some(s),
        Err(e) => {
            report.error(id, name, e);
            None
        }
    }
}

fn property_suite(r: &mut Report) {
    let base = match solve_equilibrium(&small()) {
        Ok(s) => s,
        Err(e) => {
            for id in 1..=10 {
                r.error(id, "small-grid solve", &e);
            }
            return;
        }
    };
    let model = base.model().expect("model");

    // 1
    let err = base.field().normalization_error(&base.grids.chain, model.n_b());
    r.check(1, "distortion normalization", err <= 1e-10, format!("max |E[m|y,B'] - 1| = {err:.2e} (tol 1e-10)"));

    // 2
    let inf = EconomyConfig { theta: Theta::Infinite, ..small() };
    let re = EconomyConfig { kernel: KernelChoice::Rational, ..small() };
    if let (Some(a), Some(b)) = (
        solve_or(r, 2, "theta degeneracy", &inf),
        solve_or(r, 2, "theta degeneracy", &re),
    ) {
        let d = sup_diff(&a.prices.q, &b.prices.q);
        r.check(2, "theta degeneracy", d <= 1e-12, format!("sup |q_inf - q_RE| = {d:.2e} (tol 1e-12)"));
    }

    // 3
    let runs: Vec<Option<EquilibriumSolution>> = [0.0, 1.0, 10.0]
        .iter()
        .map(|&z_bar| solve_or(r, 3, "lender endowment irrelevance", &EconomyConfig { z_bar, ..small() }))
        .collect();
    if let [Some(a), Some(b), Some(c)] = &runs[..] {
        let same = |x: &EquilibriumSolution| x.prices.q == a.prices.q && x.policies == a.policies;
        r.check(
            3,
            "lender endowment irrelevance",
            same(b) && same(c),
            format!("z_bar in {{0, 1, 10}}: bit-identical q and policies = {}", same(b) && same(c)),
        );
    }

    // 4
    {
        let start = autarky_forever(&model);
        let (_, mut policies) = borrower_step(&model, &PriceSchedule::constant(&model, model.q_rf), &start);
        let n = model.n_y() * model.n_b();
        policies.default_prob = vec![0.0; n];
        policies.segments = Segments {
            offsets: (0..=n as u32).collect(),
            start: vec![model.grids.x_lower(); n],
            choice: (0..n).map(|i| (i % model.n_b()) as u32).collect(),
            prob: vec![1.0; n],
        };
        let mut q = PriceSchedule::constant(&model, 0.0);
        let mut outcome = Ok(());
        for _ in 0..20_000 {
            match price_update(&model, &policies, base.field(), &q, 1.0) {
                Ok((next, change)) => {
                    q = next;
                    if change < 1e-15 {
                        break;
                    }
                }
                Err(e) => {
                    outcome = Err(e);
                    break;
                }
            }
        }
        match outcome {
            Err(e) => r.error(4, "risk-free identity", e),
            Ok(()) => {
                let gap = q.q.iter().map(|v| (v - model.q_rf).abs()).fold(0.0, f64::max);
                let rate = irr(model.q_rf, model.config.lambda, model.config.psi).map(|r| 1.0 + r);
                let rate_gap = rate.as_ref().map(|g| (g - 1.0 / model.config.gamma).abs()).unwrap_or(f64::INFINITY);
                r.check(
                    4,
                    "risk-free identity",
                    gap <= 1e-10 && rate_gap <= 1e-10,
                    format!("sup |q - q_rf| = {gap:.2e} (tol 1e-10); |1 + irr - 1/gamma| = {rate_gap:.2e}"),
                );
            }
        }
    }

    // 5
    let one_period = |theta: Theta| EconomyConfig {
        theta,
        lambda: 1.0,
        sigma_x: 0.0,
        numerics: Numerics {
            n_x: 1,
            tol_value: 1e-12,
            tol_price: 1e-12,
            ..Numerics::small()
        },
        ..small()
    };
    if let (Some(robust), Some(rational)) = (
        solve_or(r, 5, "one-period reduction", &one_period(Theta::Finite(0.619))),
        solve_or(r, 5, "one-period reduction", &one_period(Theta::Infinite)),
    ) {
        let m = robust.model().expect("model");
        let (n_y, n_b) = (m.n_y(), m.n_b());
        let mut direct_err: f64 = 0.0;
        for y in 0..n_y {
            for b in 0..n_b {
                let q: f64 = m.config.gamma
                    * (0..n_y)
                        .map(|yp| {
                            let repay = robust.policies.repay[m.ybx(yp, b, 0)] as f64;
                            m.grids.chain.row(y)[yp] * robust.field().m_star(y, b, yp) * repay
                        })
                        .sum::<f64>();
                direct_err = direct_err.max((q - robust.prices.get(y, b)).abs());
            }
        }
        let (v, q) = monolithic_oracle(&rational);
        let v_err = sup_diff(&v, &rational.borrower.ev_option);
        let q_err = sup_diff(&q, &rational.prices.q);
        r.check(
            5,
            "one-period reduction",
            direct_err <= 1e-8 && v_err <= 1e-8 && q_err <= 1e-8,
            format!(
                "robust pricing vs direct sum {direct_err:.2e}; rational vs monolithic oracle: V {v_err:.2e}, q {q_err:.2e} (tol 1e-8)"
            ),
        );
    }

    // 6
    match distortion_violations(&base, 1e-12) {
        Err(e) => r.error(6, "distorted >= approximating default probability", e),
        Ok(v) => {
            let worst = v.iter().map(|&(_, _, pa, pd)| pa - pd).fold(0.0, f64::max);
            let detail = match v.first() {
                None => "no state with p_distorted < p_approx".to_string(),
                Some(&(y, b, pa, pd)) => format!(
                    "{} violating states (first y={y}, B'={b}: {pa:.3e} > {pd:.3e}; largest gap {worst:.2e})",
                    v.len()
                ),
            };
            r.check(6, "distorted >= approximating default probability", v.is_empty(), detail);
        }
    }

    // 7
    {
        let grid = [50, 240];
        let n = 20_000;
        let ratios: Vec<Vec<f64>> = (0..n)
            .map(|k| {
                let mut rng = path_rng(7, k);
                loglik_ratio_path(&model, &base, &grid, 500, Measure::Approximating, &mut rng)
            })
            .collect();
        let mut ok = true;
        let mut parts = Vec::new();
        for (i, t) in grid.iter().enumerate() {
            let x: Vec<f64> = ratios.iter().map(|v| v[i].exp()).collect();
            let mean = x.iter().sum::<f64>() / n as f64;
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            ok &= (mean - 1.0).abs() <= 3.0 * se;
            parts.push(format!("T={t}: {mean:.4} (3 se = {:.4})", 3.0 * se));
        }
        r.check(7, "likelihood-ratio martingale", ok, parts.join("; "));
    }

    // 8
    {
        let deps: Vec<Option<f64>> = [Theta::Infinite, Theta::Finite(5.0), Theta::Finite(1.0), Theta::Finite(0.5)]
            .iter()
            .map(|&theta| {
                let sol = solve_or(r, 8, "detection error", &EconomyConfig { theta, ..small() })?;
                match dep_curve(&sol, &[240], 2000, 8, DEFAULT_BURN_IN, &[]) {
                    Ok(d) => Some(d.dep[0]),
                    Err(e) => {
                        r.error(8, "detection error", e);
                        None
                    }
                }
            })
            .collect();
        if let [Some(d_inf), Some(d5), Some(d1), Some(d05)] = deps[..] {
            let ok = d_inf == 0.5 && d5 > d1 && d1 > d05;
            r.check(
                8,
                "detection error",
                ok,
                format!("DEP_240: theta=inf {d_inf}, 5 {d5:.4}, 1 {d1:.4}, 0.5 {d05:.4}"),
            );
        }
    }

    // 9
    {
        let c = chi2_quantile(0.05);
        let inf = solve_or(r, 9, "moment-test size", &EconomyConfig { theta: Theta::Infinite, ..small() });
        if let (Ok(c), Some(inf)) = (c, inf) {
            let chain = &inf.grids.chain;
            let tau = 0.1;
            let outcome = simulated_quantile(&inf, Measure::Approximating, tau, 100_000, 9, DEFAULT_BURN_IN).and_then(|nu| {
                let v_exact = 1.0 / exact_long_run_variance(chain, nu, tau)?;
                let v_nw = gmm_weight(chain, nu, tau, 240, 2000, 10)?;
                let pi_exact = pi_curve(chain, nu, v_exact, tau, 0.05, &[240, 1000], 50_000, 11)?;
                let pi_nw = pi_curve(chain, nu, v_nw, tau, 0.05, &[240, 1000], 50_000, 11)?;
                Ok((nu, v_exact, pi_exact, v_nw, pi_nw))
            });
            match outcome {
                Err(e) => r.error(9, "moment-test size", e),
                Ok((nu, v, pi, v_nw, pi_nw)) => {
                    let se = (0.05f64 * 0.95 / 50_000.0).sqrt();
                    let ok = (c - 3.841459).abs() <= 1e-6 && pi.iter().all(|p| (p - 0.05).abs() <= 2.0 * se);
                    r.check(
                        9,
                        "moment-test size",
                        ok,
                        format!(
                            "c_0.05 = {c:.6}; nu = {nu:.4}; exact long-run variance V = {v:.3}: rejection T=240 {:.4}, T=1000 {:.4} (target 0.05 +- {:.4}); Newey-West at T_cal=240 V = {v_nw:.3}: {:.4}, {:.4}",
                            pi[0],
                            pi[1],
                            2.0 * se,
                            pi_nw[0],
                            pi_nw[1]
                        ),
                    );
                }
            }
        }
    }

    // 10
    {
        let opts = SimOptions {
            n_paths: 250,
            n_periods: 4000,
            burn_in: 0,
            seed: 10,
            measure: Measure::Approximating,
        };
        match simulate_panel(&base, &opts) {
            Err(e) => r.error(10, "re-entry spell mean", e),
            Ok(panel) => {
                let spells = autarky_spells(&panel);
                let n = spells.len() as f64;
                let mean = spells.iter().sum::<usize>() as f64 / n;
                let var = spells.iter().map(|&s| (s as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
                let se = (var / n).sqrt();
                let target = 1.0 / base.config.pi_reentry;
                r.check(
                    10,
                    "re-entry spell mean",
                    (mean - target).abs() <= 2.0 * se,
                    format!("{} spells, mean {mean:.3} vs 1/pi = {target:.3} (2 se = {:.3})", spells.len(), 2.0 * se),
                );
            }
        }
    }
}

fn cache_dir() -> PathBuf {
    std::env::var_os("ACCEPTANCE_CACHE")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-cache"))
}

fn cached_solve(cfg: &EconomyConfig) -> robust_sovereign::Result<EquilibriumSolution> {
    let dir = cache_dir();
    let path = dir.join(format!("{}.bin", config_hash(cfg)));
    if let Ok(sol) = load_solution(&path) {
        return Ok(sol);
    }
    let started = Instant::now();
    let sol = solve_equilibrium(cfg)?;
    eprintln!("solved theta = {} in {:.0?}", cfg.theta, started.elapsed());
    std::fs::create_dir_all(&dir).ok();
    if let Err(e) = save_solution(&path, &sol) {
        eprintln!("could not cache {}: {e}", path.display());
    }
    Ok(sol)
}

fn full_suite(r: &mut Report) {
    let cfg = EconomyConfig::default();
    let sol = match cached_solve(&cfg) {
        Ok(s) => s,
        Err(e) => {
            for id in 11..=14 {
                r.error(id, "full-grid solve", &e);
            }
            return;
        }
    };
    let sim = SimOptions::default();
    let panel = match simulate_panel(&sol, &sim) {
        Ok(p) => p,
        Err(e) => {
            for id in 11..=13 {
                r.error(id, "simulation", &e);
            }
            return;
        }
    };

    match subsample_stats(&sol, &panel, &WindowOptions::default()) {
        Err(e) => {
            r.error(11, "business-cycle moments", &e);
            r.error(12, "spread quantiles", &e);
        }
        Ok(s) => {
            let get = |x: Option<f64>| x.unwrap_or(f64::NAN);
            let (mean, std) = (get(s.mean_spread.mean), get(s.std_spread.mean));
            let (debt, corr) = (get(s.mean_debt_output.mean), get(s.corr_y_spread.mean));
            let freq = 100.0 * s.default_frequency;
            let ok = within(mean, 8.15, 1.0)
                && within(std, 4.62, 1.0)
                && within(freq, 3.0, 0.5)
                && within(debt, 44.0, 5.0)
                && within(corr, -0.75, 0.10);
            r.check(
                11,
                "business-cycle moments",
                ok,
                format!(
                    "mean spread {mean:.2} (8.15 +- 1), std {std:.2} (4.62 +- 1), default freq {freq:.2} (3.0 +- 0.5), debt/y {debt:.1} (44 +- 5), corr(y, spread) {corr:.2} (-0.75 +- 0.10)"
                ),
            );
            let q = |tau: f64| {
                s.spread_quantiles
                    .iter()
                    .find(|x| x.tau == tau)
                    .and_then(|x| x.value)
                    .unwrap_or(f64::NAN)
            };
            let (q50, q90) = (q(0.5), q(0.9));
            r.check(
                12,
                "spread quantiles",
                within(q50, 6.66, 1.5) && within(q90, 13.61, 1.5),
                format!("Q50 {q50:.2} (6.66 +- 1.5), Q90 {q90:.2} (13.61 +- 1.5)"),
            );
        }
    }

    let b = median_debt_index(&panel).unwrap_or(sol.grids.zero_index);
    match reference_state(&sol, b) {
        Err(e) => r.error(13, "reference-state default probabilities", e),
        Ok(rs) => r.check(
            13,
            "reference-state default probabilities",
            within(rs.p_approx, 0.093, 0.02) && within(rs.p_distorted, 0.162, 0.02),
            format!(
                "y={}, B={}, B'={}: approx {:.3} (0.093 +- 0.02), distorted {:.3} (0.162 +- 0.02)",
                rs.y, rs.b, rs.b_next, rs.p_approx, rs.p_distorted
            ),
        ),
    }

    let dep = dep_curve(&sol, &default_t_grid(), 2000, 14, DEFAULT_BURN_IN, &[0.2]);
    let exact = moment_measure(
        &sol,
        &[240],
        &MomentOptions {
            seed: 14,
            weight: WeightEstimator::Exact,
            ..MomentOptions::default()
        },
    );
    let nw = moment_measure(&sol, &[240], &MomentOptions { seed: 14, ..MomentOptions::default() });
    match (dep, exact, nw) {
        (Ok(d), Ok(pe), Ok(pn)) => {
            let k = d.t_grid.iter().position(|&t| t == 240).expect("240 on grid");
            let t02 = match d.t_alpha[0].t_alpha {
                TAlpha::Crossing(t) => t,
                _ => f64::NAN,
            };
            let ok = within(d.dep[k], 0.313, 0.02) && within(t02, 700.0, 70.0) && within(pe.pi[0], 0.028, 0.01);
            r.check(
                14,
                "detection error and moment measure",
                ok,
                format!(
                    "DEP_240 {:.3} (0.313 +- 0.02), T_0.2 {t02:.0} (700 +- 70), pi_240 {:.4} with exact long-run variance (0.028 +- 0.01); Newey-West weight at T_cal=240 gives {:.4}",
                    d.dep[k], pe.pi[0], pn.pi[0]
                ),
            );
        }
        (d, pe, pn) => {
            let msg = [d.err().map(|e| e.to_string()), pe.err().map(|e| e.to_string()), pn.err().map(|e| e.to_string())]
                .into_iter()
                .flatten()
                .collect::<Vec<_>>()
                .join("; ");
            r.error(14, "detection error and moment measure", msg);
        }
    }

    let mut spreads = Vec::new();
    for theta in [Theta::Infinite, Theta::Finite(5.0), Theta::Finite(1.0), Theta::Finite(0.5)] {
        let out = cached_solve(&EconomyConfig { theta, ..cfg.clone() })
            .and_then(|s| Ok((s.clone(), simulate_panel(&s, &sim)?)))
            .and_then(|(s, p)| subsample_stats(&s, &p, &WindowOptions::default()));
        match out {
            Ok(s) => spreads.push((theta, s.mean_spread.mean.unwrap_or(f64::NAN))),
            Err(e) => {
                r.error(15, "robustness sweep", format!("theta = {theta}: {e}"));
                return;
            }
        }
    }
    let ok = spreads.windows(2).all(|w| w[1].1 > w[0].1);
    let detail = spreads
        .iter()
        .map(|(t, m)| format!("theta={t}: {m:.2}"))
        .collect::<Vec<_>>()
        .join(", ");
    r.check(15, "robustness sweep", ok, format!("mean spread {detail}"));
}

fn main() -> ExitCode {
    let mut r = Report {
        passed: 0,
        failed: 0,
        skipped: 0,
    };
    let started = Instant::now();
    property_suite(&mut r);
    if std::env::var("ACCEPTANCE_FULL").is_ok_and(|v| v == "1") {
        full_suite(&mut r);
    } else {
        for (id, name) in [
            (11, "business-cycle moments"),
            (12, "spread quantiles"),
            (13, "reference-state default probabilities"),
            (14, "detection error and moment measure"),
            (15, "robustness sweep"),
        ] {
            r.skip(id, name, "full calibration; set ACCEPTANCE_FULL=1");
        }
    }
    println!(
        "acceptance: {} passed, {} failed, {} skipped in {:.0?}",
        r.passed,
        r.failed,
        r.skipped,
        started.elapsed()
    );
    if r.failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
