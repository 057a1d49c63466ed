use rayon::prelude::*;

use super::distortion::certainty_equivalents;
use super::{LenderValues, Model, Policies, PriceSchedule};
use crate::error::Result;

/// One sweep of the lender recursion on the market-clearing diagonal.
///
/// Values are stored net of `z_bar / (1 - gamma)`: the endowment enters
/// every state additively and the risk-sensitive operator commutes with
/// constant shifts, so the stored values and everything priced from them
/// are independent of `z_bar`.
pub fn lender_step(
    model: &Model,
    q: &PriceSchedule,
    policies: &Policies,
    lender: &LenderValues,
) -> Result<LenderValues> {
    let n_b = model.n_b();
    let gamma = model.config.gamma;
    let ce = certainty_equivalents(model, lender)?;
    let bonds = &model.grids.bonds;
    let mut w_repay = vec![0.0; model.n_y() * n_b];
    w_repay.par_chunks_mut(n_b).enumerate().for_each(|(y, row)| {
        let w_aut = lender.w_autarky[y];
        for (b, out) in row.iter_mut().enumerate() {
            let bb = bonds[b];
            *out = policies.integrate(model.yb(y, b), w_aut, |j| {
                q.get(y, j) * (bonds[j] - model.carry * bb) - model.coupon * bb + gamma * ce.repay[y * n_b + j]
            });
        }
    });
    let w_autarky = ce.autarky.iter().map(|r| gamma * r).collect();
    Ok(LenderValues {
        w_repay,
        w_autarky,
        level_offset: lender.level_offset,
    })
}
