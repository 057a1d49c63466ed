//! Recursive equilibrium: borrower Bellman updates, the lender's
//! on-diagonal recursion, the worst-case distortion field and the bond
//! price schedule, iterated jointly to a fixed point.
//!
//! Arrays are flat and row-major. Borrower arrays indexed by `(y, B, x)`
//! keep the x-node innermost; price and lender arrays are `(y, B)`.

mod borrower;
mod distortion;
mod lender;
mod pricing;

use serde::{Deserialize, Serialize};

pub use borrower::{autarky_forever, borrower_step, repay_choice_at};
pub use distortion::{
    certainty_equivalents, distortion_field, risk_sensitive_r, risk_sensitive_t, CertaintyEquivalents,
    DistortionField,
};
pub use lender::lender_step;
pub use pricing::{payoff_table, price_update};

use crate::economy::{output_cost, risk_free_price, EconomyConfig, Grids, KernelMode, Theta, Utility};
use crate::error::{Error, Result};

/// Parameters and grids with derived per-state quantities.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: EconomyConfig,
    pub grids: Grids,
    pub util: Utility,
    /// Output cost at each y-state.
    pub phi: Vec<f64>,
    pub q_rf: f64,
    /// `lambda + (1 - lambda) psi`
    pub coupon: f64,
    /// `1 - lambda`
    pub carry: f64,
    pub mode: KernelMode,
    /// Penalty in the lender recursion.
    pub theta: Theta,
}

impl Model {
    pub fn new(config: EconomyConfig) -> Result<Self> {
        config.validate()?;
        let grids = Grids::build(&config)?;
        Self::with_grids(config, grids)
    }

    pub fn with_grids(config: EconomyConfig, grids: Grids) -> Result<Self> {
        let phi = grids
            .chain
            .levels
            .iter()
            .map(|&y| output_cost(y, config.kappa1, config.kappa2))
            .collect();
        Ok(Model {
            util: Utility::new(config.sigma),
            phi,
            q_rf: risk_free_price(config.gamma, config.lambda, config.psi)?,
            coupon: config.coupon_factor(),
            carry: 1.0 - config.lambda,
            mode: config.kernel_mode(),
            theta: config.effective_theta(),
            config,
            grids,
        })
    }

    pub fn n_y(&self) -> usize {
        self.grids.n_y()
    }

    pub fn n_b(&self) -> usize {
        self.grids.n_b()
    }

    pub fn n_x(&self) -> usize {
        self.grids.n_x()
    }

    #[inline]
    pub fn yb(&self, y: usize, b: usize) -> usize {
        y * self.n_b() + b
    }

    #[inline]
    pub fn ybx(&self, y: usize, b: usize, x: usize) -> usize {
        (y * self.n_b() + b) * self.n_x() + x
    }

    /// Consumption when repaying at `(x, y, B)` and choosing `B'`.
    pub fn consumption(&self, q: &PriceSchedule, y: usize, b: usize, x: f64, b_next: usize) -> f64 {
        let bb = self.grids.bonds[b];
        let bn = self.grids.bonds[b_next];
        let cash = self.grids.chain.levels[y] + self.coupon * bb - q.get(y, b_next) * (bn - self.carry * bb);
        cash + x
    }

    /// Consumption in autarky at `(x, y)`.
    pub fn autarky_consumption(&self, y: usize, x: f64) -> f64 {
        self.grids.chain.levels[y] + x - self.phi[y]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BorrowerValues {
    /// `V_R(x, y, B)`, `-inf` where every choice is infeasible.
    pub v_repay: Vec<f64>,
    /// `V_A(x, y)`
    pub v_autarky: Vec<f64>,
    /// `V_A(x_low, y)`, the value compared against repayment.
    pub v_autarky_low: Vec<f64>,
    /// `E_X[max{V_A(x_low, y), V_R(X, y, B)}]`
    pub ev_option: Vec<f64>,
    /// `E_X[V_A(X, y)]`
    pub ev_autarky: Vec<f64>,
    /// `beta E[ev_option(y', B') | y]` used to produce these values.
    pub continuation: Vec<f64>,
    /// `beta E[(1 - pi) ev_autarky(y') + pi ev_option(y', 0) | y]`
    pub continuation_autarky: Vec<f64>,
}

impl BorrowerValues {
    pub fn option_value(&self, model: &Model, y: usize, b: usize, x: usize) -> f64 {
        self.v_repay[model.ybx(y, b, x)].max(self.v_autarky_low[y])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policies {
    /// Index of `B'` chosen when repaying at `(y, B, x)`.
    pub debt_choice: Vec<u32>,
    /// `1` when repaying at `(y, B, x)`, `0` on default.
    pub repay: Vec<u8>,
    /// Per `(y, B)`: default occurs for `x` below this value.
    pub x_threshold: Vec<f64>,
    /// Per `(y, B)`: probability of default over the shock.
    pub default_prob: Vec<f64>,
    /// Exact repayment policy over the shock interval.
    pub segments: Segments,
    /// Number of `(y, B, x)` states where no choice gives positive consumption.
    pub forced_defaults: usize,
}

impl Policies {
    pub fn default_probability(&self, model: &Model, y: usize, b: usize) -> f64 {
        self.default_prob[model.yb(y, b)]
    }

    /// Debt choice and repayment decision at an arbitrary shock value.
    pub fn decision_at(&self, model: &Model, y: usize, b: usize, x: f64) -> Option<usize> {
        let i = model.yb(y, b);
        if model.grids.xquad.sigma_x == 0.0 {
            let k = model.ybx(y, b, 0);
            return (self.repay[k] == 1).then_some(self.debt_choice[k] as usize);
        }
        if x < self.x_threshold[i] {
            return None;
        }
        let (start, choice, _) = self.segments.of(i);
        let s = start.iter().rposition(|&st| st <= x).unwrap_or(0);
        choice.get(s).map(|&j| j as usize)
    }

    /// `sum over repayment segments of prob * f(choice) + P(default) * on_default`.
    #[inline]
    pub fn integrate(&self, i: usize, on_default: f64, f: impl Fn(usize) -> f64) -> f64 {
        let (_, choice, prob) = self.segments.of(i);
        let mut acc = self.default_prob[i] * on_default;
        for (&j, &p) in choice.iter().zip(prob) {
            acc += p * f(j as usize);
        }
        acc
    }
}

/// Piecewise-constant debt choice over the repayment region of the shock,
/// stored flat: state `i` owns entries `offsets[i]..offsets[i + 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segments {
    pub offsets: Vec<u32>,
    /// Left end of each segment.
    pub start: Vec<f64>,
    pub choice: Vec<u32>,
    /// Probability of the shock falling in the segment.
    pub prob: Vec<f64>,
}

impl Segments {
    #[inline]
    pub fn of(&self, i: usize) -> (&[f64], &[u32], &[f64]) {
        let r = self.offsets[i] as usize..self.offsets[i + 1] as usize;
        (&self.start[r.clone()], &self.choice[r.clone()], &self.prob[r])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LenderValues {
    /// x-integrated on-diagonal value net of `z_bar / (1 - gamma)`.
    pub w_repay: Vec<f64>,
    /// Autarky value net of `z_bar / (1 - gamma)`.
    pub w_autarky: Vec<f64>,
    /// `z_bar / (1 - gamma)`
    pub level_offset: f64,
}

impl LenderValues {
    pub fn zeros(model: &Model) -> Self {
        LenderValues {
            w_repay: vec![0.0; model.n_y() * model.n_b()],
            w_autarky: vec![0.0; model.n_y()],
            level_offset: model.config.z_bar / (1.0 - model.config.gamma),
        }
    }

    pub fn level_repay(&self, i: usize) -> f64 {
        self.w_repay[i] + self.level_offset
    }

    pub fn level_autarky(&self, y: usize) -> f64 {
        self.w_autarky[y] + self.level_offset
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSchedule {
    pub n_b: usize,
    pub q: Vec<f64>,
}

impl PriceSchedule {
    pub fn constant(model: &Model, value: f64) -> Self {
        PriceSchedule {
            n_b: model.n_b(),
            q: vec![value; model.n_y() * model.n_b()],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, b: usize) -> f64 {
        self.q[y * self.n_b + b]
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.q[y * self.n_b..(y + 1) * self.n_b]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub value_residual: f64,
    pub price_residual: f64,
    pub final_damping: f64,
    /// `(value, price)` residual per iteration.
    pub history: Vec<(f64, f64)>,
    /// Equilibrium choices that sit on the lowest bond grid point.
    pub lower_bound_choices: usize,
    /// `(y, B')` pairs where `q` falls as `B'` rises.
    pub monotonicity_violations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquilibriumSolution {
    #[serde(with = "crate::economy::config_as_toml")]
    pub config: EconomyConfig,
    pub grids: Grids,
    pub borrower: BorrowerValues,
    pub policies: Policies,
    pub lender: LenderValues,
    pub prices: PriceSchedule,
    pub diagnostics: Diagnostics,
    /// Rebuilt from `lender` on load.
    #[serde(skip)]
    pub field: Option<DistortionField>,
}

impl EquilibriumSolution {
    pub fn model(&self) -> Result<Model> {
        Model::with_grids(self.config.clone(), self.grids.clone())
    }

    pub fn field(&self) -> &DistortionField {
        self.field
            .as_ref()
            .expect("distortion field is rebuilt when a solution is created or loaded")
    }

    /// Recompute the distortion field after deserialization.
    pub fn rebuild_field(&mut self) -> Result<()> {
        let model = self.model()?;
        self.field = Some(distortion_field(&model, &self.lender)?);
        Ok(())
    }
}

/// Per-iteration hook used by the CLI for progress reporting.
pub trait Progress {
    fn iteration(&mut self, _it: usize, _value: f64, _price: f64, _damping: f64) {}
}

impl Progress for () {}

pub fn solve_equilibrium(config: &EconomyConfig) -> Result<EquilibriumSolution> {
    let model = Model::new(config.clone())?;
    solve_model(&model, &mut ())
}

pub fn solve_model(model: &Model, progress: &mut dyn Progress) -> Result<EquilibriumSolution> {
    let num = &model.config.numerics;
    let mut values = autarky_forever(model);
    let mut q = PriceSchedule::constant(model, model.q_rf);
    let mut lender = LenderValues::zeros(model);
    let mut damping = num.damping;
    let mut history = Vec::new();
    let mut best_price = f64::INFINITY;
    let mut since_best = 0usize;

    for it in 1..=num.max_iter {
        let (next_values, policies) = borrower_step(model, &q, &values);
        let mut next_lender = lender.clone();
        for _ in 0..num.lender_steps {
            next_lender = lender_step(model, &q, &policies, &next_lender)?;
        }
        let field = distortion_field(model, &next_lender)?;
        let (next_q, price_residual) = price_update(model, &policies, &field, &q, damping)?;

        let value_residual = sup_diff(&next_values.ev_option, &values.ev_option)
            .max(sup_diff(&next_values.ev_autarky, &values.ev_autarky))
            .max(sup_diff(&next_lender.w_repay, &lender.w_repay))
            .max(sup_diff(&next_lender.w_autarky, &lender.w_autarky));
        history.push((value_residual, price_residual));
        progress.iteration(it, value_residual, price_residual, damping);
        log::debug!("iteration {it}: dV = {value_residual:e}, dq = {price_residual:e}, damping = {damping}");

        let converged = value_residual < num.tol_value && price_residual < num.tol_price;
        values = next_values;
        lender = next_lender;
        if converged {
            // policies and values consistent with the final prices
            let (values, policies) = borrower_step(model, &next_q, &values);
            let diagnostics = Diagnostics {
                iterations: it,
                value_residual,
                price_residual,
                final_damping: damping,
                history,
                lower_bound_choices: count_lower_bound(&policies),
                monotonicity_violations: count_monotonicity_violations(model, &next_q),
            };
            if diagnostics.lower_bound_choices > 0 {
                log::warn!(
                    "{} equilibrium choices sit on the lowest bond grid point; consider lowering b_min",
                    diagnostics.lower_bound_choices
                );
            }
            return Ok(EquilibriumSolution {
                config: model.config.clone(),
                grids: model.grids.clone(),
                borrower: values,
                policies,
                lender,
                prices: next_q,
                diagnostics,
                field: Some(field),
            });
        }
        q = next_q;

        if price_residual < best_price {
            best_price = price_residual;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= num.stall_window && damping > num.min_damping {
                damping = (damping * 0.5).max(num.min_damping);
                since_best = 0;
                best_price = price_residual;
                log::info!("price iteration stalled at iteration {it}; damping lowered to {damping}");
            }
        }
    }
    let (value_residual, price_residual) = history.last().copied().unwrap_or((f64::NAN, f64::NAN));
    Err(Error::NotConverged {
        iterations: num.max_iter,
        value_residual,
        price_residual,
        history,
    })
}

pub(crate) fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| {
        let d = if x == y { 0.0 } else { (x - y).abs() };
        if d.is_nan() {
            f64::INFINITY
        } else {
            m.max(d)
        }
    })
}

fn count_lower_bound(policies: &Policies) -> usize {
    policies
        .debt_choice
        .iter()
        .zip(&policies.repay)
        .filter(|(&c, &r)| r == 1 && c == 0)
        .count()
}

fn count_monotonicity_violations(model: &Model, q: &PriceSchedule) -> usize {
    let mut n = 0;
    for y in 0..model.n_y() {
        let row = q.row(y);
        n += row.windows(2).filter(|w| w[1] < w[0] - 1e-12).count();
    }
    n
}

#[cfg(test)]
mod tests;
