use rayon::prelude::*;

use super::distortion::DistortionField;
use super::{Model, Policies, PriceSchedule};
use crate::error::{Error, Result};

/// Expected payoff `chi(y', B')` of one unit of debt issued at `B'`,
/// integrated over next period's shock; indexed `(B', y')`.
pub fn payoff_table(model: &Model, policies: &Policies, q_old: &PriceSchedule) -> Vec<f64> {
    let (n_y, n_b) = (model.n_y(), model.n_b());
    let mut chi = vec![0.0; n_b * n_y];
    chi.par_chunks_mut(n_y).enumerate().for_each(|(b, row)| {
        for (yp, out) in row.iter_mut().enumerate() {
            *out = policies.integrate(model.yb(yp, b), 0.0, |j| model.coupon + model.carry * q_old.get(yp, j));
        }
    });
    chi
}

/// Damped update of the price schedule. Returns the new schedule and the
/// sup-norm distance between the undamped target and `q_old`.
pub fn price_update(
    model: &Model,
    policies: &Policies,
    field: &DistortionField,
    q_old: &PriceSchedule,
    damping: f64,
) -> Result<(PriceSchedule, f64)> {
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(Error::invalid("damping", "must lie in (0, 1]"));
    }
    let (n_y, n_b) = (model.n_y(), model.n_b());
    let gamma = model.config.gamma;
    let chi = payoff_table(model, policies, q_old);
    let chain = &model.grids.chain;
    let mut q = vec![0.0; n_y * n_b];
    let residual = q
        .par_chunks_mut(n_b)
        .enumerate()
        .map(|(y, row)| {
            let p = chain.row(y);
            let mut worst: f64 = 0.0;
            for (b, out) in row.iter_mut().enumerate() {
                let c = &chi[b * n_y..(b + 1) * n_y];
                let s: f64 = match field.m_star_row(y, b) {
                    None => p.iter().zip(c).map(|(p, c)| p * c).sum(),
                    Some(m) => p.iter().zip(m).zip(c).map(|((p, m), c)| p * m * c).sum(),
                };
                let target = (gamma * s).clamp(0.0, model.q_rf);
                let old = q_old.get(y, b);
                worst = worst.max((target - old).abs());
                *out = (damping * target + (1.0 - damping) * old).clamp(0.0, model.q_rf);
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    Ok((PriceSchedule { n_b, q }, residual))
}
