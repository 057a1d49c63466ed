use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use super::*;
use crate::economy::{EconomyConfig, KernelChoice, Numerics};

fn tiny_config() -> EconomyConfig {
    EconomyConfig {
        numerics: Numerics {
            n_y: 11,
            n_b: 60,
            n_x: 7,
            ..Numerics::small()
        },
        ..EconomyConfig::default()
    }
}

fn tiny_solution() -> &'static EquilibriumSolution {
    static SOL: OnceLock<EquilibriumSolution> = OnceLock::new();
    SOL.get_or_init(|| solve_equilibrium(&tiny_config()).expect("tiny economy solves"))
}

#[test]
fn myopic_borrower_maximizes_period_utility() {
    let cfg = EconomyConfig {
        beta: 1e-300,
        ..tiny_config()
    };
    let model = Model::new(cfg).unwrap();
    let q = PriceSchedule::constant(&model, 0.9 * model.q_rf);
    let start = autarky_forever(&model);
    let (values, policies) = borrower_step(&model, &q, &start);
    let xq = &model.grids.xquad;
    for y in 0..model.n_y() {
        for b in 0..model.n_b() {
            for (i, &x) in xq.nodes.iter().enumerate() {
                let best = (0..model.n_b())
                    .map(|j| model.util.eval(model.consumption(&q, y, b, x, j)))
                    .fold(f64::NEG_INFINITY, f64::max);
                let v = values.v_repay[model.ybx(y, b, i)];
                assert!((v - best).abs() < 1e-9 * best.abs().max(1.0), "{v} vs {best}");
                let j = policies.debt_choice[model.ybx(y, b, i)] as usize;
                // with no future, the most borrowing that raises revenue wins
                let c = model.consumption(&q, y, b, x, j);
                assert!((model.util.eval(c) - best).abs() < 1e-9 * best.abs().max(1.0));
            }
        }
    }
}

/// Direct value iteration with a default option, written state by state
/// over the quadrature nodes with a brute-force maximization.
fn brute_force_values(model: &Model, q: &PriceSchedule, iters: usize) -> Vec<f64> {
    let (n_y, n_b) = (model.n_y(), model.n_b());
    let xq = &model.grids.xquad;
    let beta = model.config.beta;
    let pi = model.config.pi_reentry;
    let p = |y: usize, yp: usize| model.grids.chain.transition[y * n_y + yp];
    let mut ev = vec![0.0; n_y * n_b];
    let mut ev_aut = vec![0.0; n_y];
    for _ in 0..iters {
        let mut next_ev = vec![0.0; n_y * n_b];
        let mut next_aut = vec![0.0; n_y];
        for y in 0..n_y {
            let cont_aut: f64 = (0..n_y)
                .map(|yp| p(y, yp) * ((1.0 - pi) * ev_aut[yp] + pi * ev[yp * n_b + model.grids.zero_index]))
                .sum::<f64>()
                * beta;
            let v_low = model.util.eval(model.autarky_consumption(y, xq.lower)) + cont_aut;
            next_aut[y] = xq.integrate(|x| model.util.eval(model.autarky_consumption(y, x)) + cont_aut);
            for b in 0..n_b {
                let mut e = 0.0;
                for (i, &x) in xq.nodes.iter().enumerate() {
                    let mut best = f64::NEG_INFINITY;
                    for j in 0..n_b {
                        let c = model.consumption(q, y, b, x, j);
                        if c <= 0.0 {
                            continue;
                        }
                        let cont: f64 = (0..n_y).map(|yp| p(y, yp) * ev[yp * n_b + j]).sum::<f64>() * beta;
                        best = best.max(model.util.eval(c) + cont);
                    }
                    e += xq.weights[i] * best.max(v_low);
                }
                next_ev[y * n_b + b] = e;
            }
        }
        ev = next_ev;
        ev_aut = next_aut;
    }
    ev
}

#[test]
fn borrower_matches_brute_force_iteration() {
    let cfg = EconomyConfig {
        numerics: Numerics {
            n_y: 5,
            n_b: 25,
            n_x: 5,
            ..Numerics::small()
        },
        ..EconomyConfig::default()
    };
    let model = Model::new(cfg).unwrap();
    let q = PriceSchedule {
        n_b: model.n_b(),
        q: (0..model.n_y() * model.n_b())
            .map(|i| model.q_rf * (0.6 + 0.4 * (i % model.n_b()) as f64 / model.n_b() as f64))
            .collect(),
    };
    let iters = 40;
    let mut values = BorrowerValues {
        ev_option: vec![0.0; model.n_y() * model.n_b()],
        ev_autarky: vec![0.0; model.n_y()],
        ..autarky_forever(&model)
    };
    for _ in 0..iters {
        values = borrower_step(&model, &q, &values).0;
    }
    let oracle = brute_force_values(&model, &q, iters);
    let err = sup_diff(&values.ev_option, &oracle);
    assert!(err < 1e-9, "sup error {err}");
}

#[test]
fn tiny_default_risk_free_grid_has_no_default_option_value() {
    // with debt below the gap between the lowest node and x_low, repaying
    // always beats defaulting, so values match the problem without default
    let cfg = EconomyConfig {
        kappa1: 0.0,
        kappa2: 0.0,
        pi_reentry: 1.0,
        lambda: 1.0,
        numerics: Numerics {
            n_y: 5,
            n_b: 5,
            n_x: 5,
            b_min: -0.001,
            ..Numerics::small()
        },
        ..EconomyConfig::default()
    };
    let model = Model::new(cfg).unwrap();
    let q = PriceSchedule::constant(&model, model.config.gamma);
    let mut values = autarky_forever(&model);
    let mut policies = None;
    for _ in 0..3000 {
        let (v, p) = borrower_step(&model, &q, &values);
        let done = sup_diff(&v.ev_option, &values.ev_option) < 1e-12;
        values = v;
        policies = Some(p);
        if done {
            break;
        }
    }
    let policies = policies.unwrap();
    assert!(policies.repay.iter().all(|&r| r == 1));

    // value iteration without a default option
    let (n_y, n_b) = (model.n_y(), model.n_b());
    let xq = &model.grids.xquad;
    let mut ev = vec![0.0; n_y * n_b];
    for _ in 0..3000 {
        let mut next = vec![0.0; n_y * n_b];
        for y in 0..n_y {
            for b in 0..n_b {
                next[y * n_b + b] = xq.integrate(|x| {
                    (0..n_b)
                        .map(|j| {
                            let cont: f64 = (0..n_y)
                                .map(|yp| model.grids.chain.transition[y * n_y + yp] * ev[yp * n_b + j])
                                .sum();
                            model.util.eval(model.consumption(&q, y, b, x, j)) + model.config.beta * cont
                        })
                        .fold(f64::NEG_INFINITY, f64::max)
                });
            }
        }
        let done = sup_diff(&next, &ev) < 1e-12;
        ev = next;
        if done {
            break;
        }
    }
    let err = sup_diff(&values.ev_option, &ev);
    assert!(err < 1e-9, "{err}");
}

#[test]
fn always_repaid_bond_prices_at_risk_free() {
    for (lambda, psi) in [(0.05, 0.03), (1.0, 0.0), (0.3, 0.1)] {
        let cfg = EconomyConfig {
            lambda,
            psi,
            ..tiny_config()
        };
        let model = Model::new(cfg).unwrap();
        let start = autarky_forever(&model);
        let q0 = PriceSchedule::constant(&model, model.q_rf);
        let (_, mut policies) = borrower_step(&model, &q0, &start);
        let n = model.n_y() * model.n_b();
        policies.default_prob = vec![0.0; n];
        policies.segments = Segments {
            offsets: (0..=n as u32).collect(),
            start: vec![model.grids.xquad.lower; n],
            choice: (0..n).map(|i| (i % model.n_b()) as u32).collect(),
            prob: vec![1.0; n],
        };
        let sol = tiny_solution();
        let field = sol.field();
        let (q, _) = price_update(&model, &policies, field, &q0, 1.0).unwrap();
        for v in &q.q {
            assert!((v - model.q_rf).abs() < 1e-10);
        }
        if lambda == 1.0 {
            assert!((model.q_rf - model.config.gamma).abs() < 1e-15);
        }
        let r = crate::economy::irr(q.q[0], lambda, psi).unwrap();
        assert!(((1.0 + r) - 1.0 / model.config.gamma).abs() < 1e-10);
    }
}

#[test]
fn solved_economy_satisfies_invariants() {
    let sol = tiny_solution();
    let model = sol.model().unwrap();
    let field = sol.field();
    assert!(field.normalization_error(&model.grids.chain, model.n_b()) < 1e-10);
    if let DistortionField::Full { m_star, m_autarky, .. } = field {
        assert!(m_star.iter().chain(m_autarky).all(|&m| m > 0.0));
    } else {
        panic!("finite theta gives a full field");
    }
    assert!(sol.prices.q.iter().all(|&q| (0.0..=model.q_rf).contains(&q)));

    let xq = &model.grids.xquad;
    for y in 0..model.n_y() {
        let v_low = sol.borrower.v_autarky_low[y];
        for b in 0..model.n_b() {
            let mut e = 0.0;
            let t = sol.policies.x_threshold[model.yb(y, b)];
            for i in 0..model.n_x() {
                let k = model.ybx(y, b, i);
                let v = sol.borrower.v_repay[k];
                assert_eq!(sol.policies.repay[k], (v >= v_low) as u8);
                if i > 0 && sol.policies.repay[k - 1] == 1 {
                    assert_eq!(sol.policies.repay[k], 1, "repayment is monotone in x");
                }
                assert_eq!(sol.policies.repay[k] == 1, xq.nodes[i] >= t, "threshold agrees with nodes");
                e += xq.weights[i] * v.max(v_low);
            }
            assert!((e - sol.borrower.ev_option[model.yb(y, b)]).abs() < 1e-12);
            let (_, _, prob) = sol.policies.segments.of(model.yb(y, b));
            let total: f64 = prob.iter().sum::<f64>() + sol.policies.default_prob[model.yb(y, b)];
            assert!((total - 1.0).abs() < 1e-12);
        }
        let ev_aut: f64 = (0..model.n_x())
            .map(|i| xq.weights[i] * sol.borrower.v_autarky[y * model.n_x() + i])
            .sum();
        assert!((ev_aut - sol.borrower.ev_autarky[y]).abs() < 1e-12);
    }
    // more debt never lowers the default probability
    let mut some_default = false;
    for y in 0..model.n_y() {
        for b in 1..model.n_b() {
            let more_debt = sol.policies.default_prob[model.yb(y, b - 1)];
            let less_debt = sol.policies.default_prob[model.yb(y, b)];
            some_default |= more_debt > 0.0;
            assert!(less_debt <= more_debt + 1e-12, "y={y}, b={b}");
        }
    }
    assert!(some_default);
}

#[test]
fn infinite_theta_matches_rational_expectations() {
    let inf = EconomyConfig {
        theta: crate::economy::Theta::Infinite,
        ..tiny_config()
    };
    let re = EconomyConfig {
        kernel: KernelChoice::Rational,
        ..tiny_config()
    };
    let a = solve_equilibrium(&inf).unwrap();
    let b = solve_equilibrium(&re).unwrap();
    assert!(sup_diff(&a.prices.q, &b.prices.q) <= 1e-12);
    assert!(a.field().is_trivial());
}

#[test]
fn lender_endowment_is_irrelevant() {
    let runs: Vec<EquilibriumSolution> = [0.0, 1.0, 10.0]
        .iter()
        .map(|&z_bar| solve_equilibrium(&EconomyConfig { z_bar, ..tiny_config() }).unwrap())
        .collect();
    let gamma = runs[0].config.gamma;
    for r in &runs[1..] {
        assert_eq!(r.prices.q, runs[0].prices.q);
        assert_eq!(r.policies, runs[0].policies);
        let shift = (r.config.z_bar - runs[0].config.z_bar) / (1.0 - gamma);
        for i in 0..r.lender.w_repay.len() {
            let d = r.lender.level_repay(i) - runs[0].lender.level_repay(i);
            assert!((d - shift).abs() < 1e-9 * shift.abs().max(1.0));
        }
    }
}

#[test]
fn distortion_ignores_constant_shifts() {
    let sol = tiny_solution();
    let model = sol.model().unwrap();
    let mut shifted = sol.lender.clone();
    shifted.w_repay.iter_mut().for_each(|w| *w += 3.7);
    shifted.w_autarky.iter_mut().for_each(|w| *w += 3.7);
    let a = distortion_field(&model, &sol.lender).unwrap();
    let b = distortion_field(&model, &shifted).unwrap();
    let (DistortionField::Full { m_star: ma, .. }, DistortionField::Full { m_star: mb, .. }) = (&a, &b) else {
        panic!("full field expected");
    };
    assert!(sup_diff(ma, mb) < 1e-12);
}

#[test]
fn lender_values_solve_the_linear_system() {
    let cfg = EconomyConfig {
        theta: crate::economy::Theta::Infinite,
        numerics: Numerics {
            n_y: 7,
            n_b: 25,
            n_x: 5,
            ..Numerics::small()
        },
        ..EconomyConfig::default()
    };
    let sol = solve_equilibrium(&cfg).unwrap();
    let model = sol.model().unwrap();
    let (n_y, n_b) = (model.n_y(), model.n_b());
    let (q, pol) = (&sol.prices, &sol.policies);
    let mut lender = LenderValues::zeros(&model);
    for _ in 0..20_000 {
        let next = lender_step(&model, q, pol, &lender).unwrap();
        let d = sup_diff(&next.w_repay, &lender.w_repay).max(sup_diff(&next.w_autarky, &lender.w_autarky));
        lender = next;
        if d < 1e-13 {
            break;
        }
    }

    // unknowns: W(y, B) then W_A(y)
    let n = n_y * n_b + n_y;
    let gamma = model.config.gamma;
    let pi = model.config.pi_reentry;
    let p = |y: usize, yp: usize| model.grids.chain.transition[y * n_y + yp];
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    let bonds = &model.grids.bonds;
    for y in 0..n_y {
        for b in 0..n_b {
            let row = y * n_b + b;
            let i = model.yb(y, b);
            a[(row, n_y * n_b + y)] -= pol.default_prob[i];
            let (_, choice, prob) = pol.segments.of(i);
            for (&j, &pr) in choice.iter().zip(prob) {
                let j = j as usize;
                rhs[row] += pr * (q.get(y, j) * (bonds[j] - model.carry * bonds[b]) - model.coupon * bonds[b]);
                for yp in 0..n_y {
                    a[(row, yp * n_b + j)] -= pr * gamma * p(y, yp);
                }
            }
        }
        let row = n_y * n_b + y;
        for yp in 0..n_y {
            a[(row, n_y * n_b + yp)] -= gamma * (1.0 - pi) * p(y, yp);
            a[(row, yp * n_b + model.grids.zero_index)] -= gamma * pi * p(y, yp);
        }
    }
    let w = a.lu().solve(&rhs).expect("nonsingular");
    for i in 0..n_y * n_b {
        assert!((w[i] - lender.w_repay[i]).abs() < 1e-9, "{} vs {}", w[i], lender.w_repay[i]);
    }
    for y in 0..n_y {
        assert!((w[n_y * n_b + y] - lender.w_autarky[y]).abs() < 1e-9);
    }
}

#[test]
fn one_period_bond_prices_expected_distorted_repayment() {
    let cfg = EconomyConfig {
        lambda: 1.0,
        sigma_x: 0.0,
        numerics: Numerics {
            n_x: 1,
            ..tiny_config().numerics
        },
        ..tiny_config()
    };
    let sol = solve_equilibrium(&cfg).unwrap();
    let model = sol.model().unwrap();
    let gamma = model.config.gamma;
    let field = sol.field();
    let (n_y, n_b) = (model.n_y(), model.n_b());
    let mut worst: f64 = 0.0;
    for y in 0..n_y {
        for b in 0..n_b {
            let direct: f64 = (0..n_y)
                .map(|yp| {
                    let repay = sol.policies.repay[model.ybx(yp, b, 0)] as f64;
                    model.grids.chain.row(y)[yp] * field.m_star(y, b, yp) * repay
                })
                .sum::<f64>()
                * gamma;
            worst = worst.max((direct - sol.prices.get(y, b)).abs());
        }
    }
    assert!(worst < 1e-8, "{worst}");
}
