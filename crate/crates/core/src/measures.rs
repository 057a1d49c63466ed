//! Diagnostics on the worst-case distortion: entropy, distorted densities
//! and conditional default probabilities under both measures.

use std::path::Path;

use serde::Serialize;

use crate::solver::{EquilibriumSolution, Model};
use crate::{Error, Result};

/// `E[m log m | y]`, with `0 log 0 = 0`.
pub fn relative_entropy(m: &[f64], probs: &[f64]) -> Result<f64> {
    let total: f64 = m.iter().zip(probs).map(|(m, p)| m * p).sum();
    if (total - 1.0).abs() > 1e-8 || m.iter().any(|&v| v < 0.0) {
        return Err(Error::NotNormalized(total));
    }
    let e: f64 = m
        .iter()
        .zip(probs)
        .filter(|(&m, &p)| m > 0.0 && p > 0.0)
        .map(|(m, p)| p * m * m.ln())
        .sum();
    Ok(e.max(0.0))
}

/// Entropy of the equilibrium distortion at every `(y, B')`, row-major.
pub fn entropy_field(solution: &EquilibriumSolution) -> Result<Vec<f64>> {
    let model = solution.model()?;
    let field = solution.field();
    let mut out = Vec::with_capacity(model.n_y() * model.n_b());
    for y in 0..model.n_y() {
        let p = model.grids.chain.row(y);
        for b in 0..model.n_b() {
            out.push(match field.m_star_row(y, b) {
                Some(m) => relative_entropy(m, p)?,
                None => 0.0,
            });
        }
    }
    Ok(out)
}

/// Approximating and distorted next-period densities at one state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistortedDensitySlice {
    pub y_levels: Vec<f64>,
    pub approx: Vec<f64>,
    pub distorted: Vec<f64>,
    pub m_star: Vec<f64>,
    /// Expected payoff per unit of `B'` in each `y'`.
    pub payoff: Vec<f64>,
    pub y: usize,
    pub b: usize,
    pub b_next: usize,
    pub access: bool,
}

/// Slice for a borrower in good standing issuing `b_next` at `(y, b)`.
pub fn density_slice(solution: &EquilibriumSolution, y: usize, b: usize, b_next: usize) -> Result<DistortedDensitySlice> {
    let model = solution.model()?;
    check_b(&model, b)?;
    check_b(&model, b_next)?;
    let n_y = model.n_y();
    let approx = model.grids.chain.row(y).to_vec();
    let m_star: Vec<f64> = (0..n_y).map(|yp| solution.field().m_star(y, b_next, yp)).collect();
    let payoff = (0..n_y)
        .map(|yp| {
            solution.policies.integrate(model.yb(yp, b_next), 0.0, |j| {
                model.coupon + model.carry * solution.prices.get(yp, j)
            })
        })
        .collect();
    Ok(DistortedDensitySlice {
        y_levels: model.grids.chain.levels.clone(),
        distorted: approx.iter().zip(&m_star).map(|(p, m)| p * m).collect(),
        approx,
        m_star,
        payoff,
        y,
        b,
        b_next,
        access: true,
    })
}

/// Slice for a borrower in autarky at `y`; bonds pay nothing there.
pub fn autarky_slice(solution: &EquilibriumSolution, y: usize) -> Result<DistortedDensitySlice> {
    let model = solution.model()?;
    let n_y = model.n_y();
    let approx = model.grids.chain.row(y).to_vec();
    let m_star: Vec<f64> = (0..n_y).map(|yp| solution.field().m_autarky(y, yp)).collect();
    let zero = model.grids.zero_index;
    Ok(DistortedDensitySlice {
        y_levels: model.grids.chain.levels.clone(),
        distorted: approx.iter().zip(&m_star).map(|(p, m)| p * m).collect(),
        approx,
        m_star,
        payoff: vec![0.0; n_y],
        y,
        b: zero,
        b_next: zero,
        access: false,
    })
}

fn check_b(model: &Model, b: usize) -> Result<()> {
    if b >= model.n_b() {
        Err(Error::OffGrid(b))
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
    /// `None` for a single-atom distribution.
    pub skewness: Option<f64>,
    pub kurtosis: Option<f64>,
}

pub fn pmf_moments(values: &[f64], pmf: &[f64]) -> Moments {
    let mean: f64 = values.iter().zip(pmf).map(|(v, p)| v * p).sum();
    let central = |k: i32| -> f64 { values.iter().zip(pmf).map(|(v, p)| p * (v - mean).powi(k)).sum() };
    let var = central(2).max(0.0);
    let std = var.sqrt();
    let degenerate = var <= 1e-300 || pmf.iter().filter(|&&p| p > 0.0).count() < 2;
    Moments {
        mean,
        std,
        skewness: (!degenerate).then(|| central(3) / var.powf(1.5)),
        kurtosis: (!degenerate).then(|| central(4) / (var * var)),
    }
}

/// Moments of next-period output under `(approximating, distorted)`.
pub fn distorted_moments(slice: &DistortedDensitySlice) -> (Moments, Moments) {
    (
        pmf_moments(&slice.y_levels, &slice.approx),
        pmf_moments(&slice.y_levels, &slice.distorted),
    )
}

/// One-step-ahead default probability after issuing `b_next` at `y`,
/// as `(approximating, distorted)`.
pub fn conditional_default_probs(solution: &EquilibriumSolution, y: usize, b_next: usize) -> Result<(f64, f64)> {
    let model = solution.model()?;
    check_b(&model, b_next)?;
    Ok(default_probs_with(&model, solution, y, b_next))
}

pub(crate) fn default_probs_with(model: &Model, solution: &EquilibriumSolution, y: usize, b_next: usize) -> (f64, f64) {
    let p = model.grids.chain.row(y);
    let field = solution.field();
    let mut approx = 0.0;
    let mut distorted = 0.0;
    for yp in 0..model.n_y() {
        let d = solution.policies.default_prob[model.yb(yp, b_next)];
        approx += p[yp] * d;
        distorted += p[yp] * field.m_star(y, b_next, yp) * d;
    }
    (approx, distorted)
}

/// States at which the tilt lowers the default probability, as
/// `(y, B', p_approx, p_distorted)`.
pub fn distortion_violations(solution: &EquilibriumSolution, tol: f64) -> Result<Vec<(usize, usize, f64, f64)>> {
    let model = solution.model()?;
    let mut out = Vec::new();
    for y in 0..model.n_y() {
        for b in 0..model.n_b() {
            let (pa, pd) = default_probs_with(&model, solution, y, b);
            if pa > 0.0 && pa < 1.0 && pd < pa - tol {
                out.push((y, b, pa, pd));
            }
        }
    }
    Ok(out)
}

/// State used to illustrate the distortion: output half an unconditional
/// standard deviation below its mean, debt at a given level and the debt
/// choice made at `x = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceState {
    pub y: usize,
    pub b: usize,
    pub b_next: usize,
    pub p_approx: f64,
    pub p_distorted: f64,
}

pub fn reference_state(solution: &EquilibriumSolution, b: usize) -> Result<ReferenceState> {
    let model = solution.model()?;
    check_b(&model, b)?;
    let target = (-0.5 * model.config.ar().unconditional_std()).exp();
    let y = model.grids.chain.nearest_index(target);
    let b_next = solution
        .policies
        .decision_at(&model, y, b, 0.0)
        .ok_or_else(|| Error::Config(format!("borrower defaults at the reference state (y = {y}, b = {b})")))?;
    let (p_approx, p_distorted) = default_probs_with(&model, solution, y, b_next);
    Ok(ReferenceState {
        y,
        b,
        b_next,
        p_approx,
        p_distorted,
    })
}

/// Columns: `y_next, approx, distorted, m_star, payoff`.
pub fn write_slice_csv(path: &Path, slice: &DistortedDensitySlice) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["y_next", "approx", "distorted", "m_star", "payoff"])?;
    for i in 0..slice.y_levels.len() {
        w.write_record(&[
            slice.y_levels[i].to_string(),
            slice.approx[i].to_string(),
            slice.distorted[i].to_string(),
            slice.m_star[i].to_string(),
            slice.payoff[i].to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
