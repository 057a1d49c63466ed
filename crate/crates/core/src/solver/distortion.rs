use rayon::prelude::*;

use super::borrower::expect_rows;
use super::{LenderValues, Model};
use crate::economy::{KernelMode, Theta};
use crate::error::{Error, Result};
use crate::markov::MarkovChain;

/// `-theta log E[exp(-g/theta)]` under `probs`; the plain expectation when
/// `theta` is infinite.
pub fn risk_sensitive(values: &[f64], probs: &[f64], theta: Theta) -> f64 {
    match theta {
        Theta::Infinite => values.iter().zip(probs).map(|(g, p)| p * g).sum(),
        Theta::Finite(t) => {
            let shift = values
                .iter()
                .zip(probs)
                .filter(|(_, &p)| p > 0.0)
                .map(|(&g, _)| g)
                .fold(f64::INFINITY, f64::min);
            let s: f64 = values
                .iter()
                .zip(probs)
                .map(|(&g, &p)| p * (-(g - shift) / t).exp())
                .sum();
            shift - t * s.ln()
        }
    }
}

/// Risk-sensitive operator over next period's endowment state.
pub fn risk_sensitive_r(values: &[f64], theta: Theta, chain: &MarkovChain, y: usize) -> f64 {
    risk_sensitive(values, chain.row(y), theta)
}

/// Risk-sensitive operator over a discretized conditional law of `z'`
/// with penalty `eta`.
pub fn risk_sensitive_t(values: &[f64], eta: Theta, probs: &[f64]) -> f64 {
    risk_sensitive(values, probs, eta)
}

/// Risk-adjusted continuation values of the lender.
#[derive(Debug, Clone)]
pub struct CertaintyEquivalents {
    /// `R[W(., B')](y)`, indexed `(y, B')`.
    pub repay: Vec<f64>,
    /// `R[(1 - pi) W_A + pi W(., 0)](y)`
    pub autarky: Vec<f64>,
    /// Tilting weights `exp(-(W(y', B') - a_B')/theta)`, indexed `(B', y')`.
    tilt: Option<Vec<f64>>,
    /// `E[tilt | y]`, indexed `(y, B')`.
    norm: Option<Vec<f64>>,
    tilt_autarky: Option<Vec<f64>>,
    norm_autarky: Option<Vec<f64>>,
}

fn autarky_continuation(model: &Model, lender: &LenderValues) -> Vec<f64> {
    let pi = model.config.pi_reentry;
    let n_b = model.n_b();
    let z = model.grids.zero_index;
    (0..model.n_y())
        .map(|y| (1.0 - pi) * lender.w_autarky[y] + pi * lender.w_repay[y * n_b + z])
        .collect()
}

pub fn certainty_equivalents(model: &Model, lender: &LenderValues) -> Result<CertaintyEquivalents> {
    let (n_y, n_b) = (model.n_y(), model.n_b());
    let g_aut = autarky_continuation(model, lender);
    let theta = model.theta;
    let Theta::Finite(t) = theta else {
        return Ok(CertaintyEquivalents {
            repay: expect_rows(model, &lender.w_repay, n_b, 1.0),
            autarky: expect_rows(model, &g_aut, 1, 1.0),
            tilt: None,
            norm: None,
            tilt_autarky: None,
            norm_autarky: None,
        });
    };
    let w = &lender.w_repay;
    let shift: Vec<f64> = (0..n_b)
        .map(|b| (0..n_y).map(|y| w[y * n_b + b]).fold(f64::INFINITY, f64::min))
        .collect();
    let mut tilt_yb = vec![0.0; n_y * n_b];
    for y in 0..n_y {
        for b in 0..n_b {
            tilt_yb[y * n_b + b] = (-(w[y * n_b + b] - shift[b]) / t).exp();
        }
    }
    let norm = expect_rows(model, &tilt_yb, n_b, 1.0);
    let mut repay = vec![0.0; n_y * n_b];
    repay.par_chunks_mut(n_b).enumerate().for_each(|(y, row)| {
        for (b, r) in row.iter_mut().enumerate() {
            let s = norm[y * n_b + b];
            *r = if s > 1e-200 && s.is_finite() {
                shift[b] - t * s.ln()
            } else {
                let col: Vec<f64> = (0..n_y).map(|yp| w[yp * n_b + b]).collect();
                risk_sensitive(&col, model.grids.chain.row(y), theta)
            };
        }
    });
    let a_shift = g_aut.iter().copied().fold(f64::INFINITY, f64::min);
    let tilt_aut: Vec<f64> = g_aut.iter().map(|g| (-(g - a_shift) / t).exp()).collect();
    let norm_aut = expect_rows(model, &tilt_aut, 1, 1.0);
    let autarky: Vec<f64> = (0..n_y)
        .map(|y| risk_sensitive(&g_aut, model.grids.chain.row(y), theta))
        .collect();
    if repay.iter().chain(&autarky).any(|v| !v.is_finite()) {
        return Err(Error::Breakdown { theta: t });
    }
    let mut tilt = vec![0.0; n_y * n_b];
    for y in 0..n_y {
        for b in 0..n_b {
            tilt[b * n_y + y] = tilt_yb[y * n_b + b];
        }
    }
    Ok(CertaintyEquivalents {
        repay,
        autarky,
        tilt: Some(tilt),
        norm: Some(norm),
        tilt_autarky: Some(tilt_aut),
        norm_autarky: Some(norm_aut),
    })
}

/// Likelihood ratios of the pricing measure with respect to the
/// approximating chain.
#[derive(Debug, Clone, PartialEq)]
pub enum DistortionField {
    /// No distortion (`m = 1`).
    Ones { n_y: usize },
    /// Ratio depending only on `(y, y')`, shared by every `B'` and autarky.
    ByState { n_y: usize, ratio: Vec<f64> },
    /// Worst-case field `m*(y'; y, B')` indexed `(y, B', y')` and the
    /// autarky field `m_A(y'; y)` indexed `(y, y')`.
    Full {
        n_y: usize,
        n_b: usize,
        m_star: Vec<f64>,
        m_autarky: Vec<f64>,
    },
}

impl DistortionField {
    /// Row `m(.; y, B')`; `None` means identically one.
    #[inline]
    pub fn m_star_row(&self, y: usize, b: usize) -> Option<&[f64]> {
        match self {
            DistortionField::Ones { .. } => None,
            DistortionField::ByState { n_y, ratio } => Some(&ratio[y * n_y..(y + 1) * n_y]),
            DistortionField::Full { n_y, n_b, m_star, .. } => {
                let s = (y * n_b + b) * n_y;
                Some(&m_star[s..s + n_y])
            }
        }
    }

    #[inline]
    pub fn m_autarky_row(&self, y: usize) -> Option<&[f64]> {
        match self {
            DistortionField::Ones { .. } => None,
            DistortionField::ByState { n_y, ratio } => Some(&ratio[y * n_y..(y + 1) * n_y]),
            DistortionField::Full { n_y, m_autarky, .. } => Some(&m_autarky[y * n_y..(y + 1) * n_y]),
        }
    }

    pub fn m_star(&self, y: usize, b: usize, yp: usize) -> f64 {
        self.m_star_row(y, b).map_or(1.0, |r| r[yp])
    }

    pub fn m_autarky(&self, y: usize, yp: usize) -> f64 {
        self.m_autarky_row(y).map_or(1.0, |r| r[yp])
    }

    pub fn is_trivial(&self) -> bool {
        matches!(self, DistortionField::Ones { .. })
    }

    /// Largest `|E[m | y, B'] - 1|` over all states.
    pub fn normalization_error(&self, chain: &MarkovChain, n_b: usize) -> f64 {
        let n_y = chain.len();
        let mut worst: f64 = 0.0;
        for y in 0..n_y {
            let p = chain.row(y);
            for b in 0..n_b {
                if let Some(m) = self.m_star_row(y, b) {
                    let s: f64 = p.iter().zip(m).map(|(p, m)| p * m).sum();
                    worst = worst.max((s - 1.0).abs());
                }
            }
            if let Some(m) = self.m_autarky_row(y) {
                let s: f64 = p.iter().zip(m).map(|(p, m)| p * m).sum();
                worst = worst.max((s - 1.0).abs());
            }
        }
        worst
    }
}

/// Worst-case distortion implied by the lender's continuation values, or
/// the fixed kernel of the non-robust pricing modes.
pub fn distortion_field(model: &Model, lender: &LenderValues) -> Result<DistortionField> {
    let n_y = model.n_y();
    match model.mode {
        KernelMode::RationalExpectations => return Ok(DistortionField::Ones { n_y }),
        KernelMode::AdHoc { .. } => {
            let ratio = model
                .grids
                .adhoc_ratio
                .clone()
                .unwrap_or_else(|| vec![1.0; n_y * n_y]);
            return Ok(DistortionField::ByState { n_y, ratio });
        }
        KernelMode::Robust(Theta::Infinite) => return Ok(DistortionField::Ones { n_y }),
        KernelMode::Robust(Theta::Finite(_)) => {}
    }
    let n_b = model.n_b();
    let ce = certainty_equivalents(model, lender)?;
    let tilt = ce.tilt.as_ref().expect("finite theta");
    let norm = ce.norm.as_ref().expect("finite theta");
    let mut m_star = vec![0.0; n_y * n_b * n_y];
    m_star.par_chunks_mut(n_b * n_y).enumerate().for_each(|(y, block)| {
        for b in 0..n_b {
            let s = norm[y * n_b + b];
            let col = &tilt[b * n_y..(b + 1) * n_y];
            let out = &mut block[b * n_y..(b + 1) * n_y];
            if s > 1e-200 && s.is_finite() {
                for (o, e) in out.iter_mut().zip(col) {
                    *o = e / s;
                }
            } else {
                // fall back to a row-specific shift
                let p = model.grids.chain.row(y);
                let logs: Vec<f64> = col.iter().map(|e| e.ln()).collect();
                let top = logs
                    .iter()
                    .zip(p)
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(&l, _)| l)
                    .fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logs.iter().zip(p).map(|(l, p)| p * (l - top).exp()).sum();
                for (o, l) in out.iter_mut().zip(&logs) {
                    *o = (l - top).exp() / z;
                }
            }
        }
    });
    let tilt_aut = ce.tilt_autarky.as_ref().expect("finite theta");
    let norm_aut = ce.norm_autarky.as_ref().expect("finite theta");
    let mut m_autarky = vec![0.0; n_y * n_y];
    for y in 0..n_y {
        for yp in 0..n_y {
            m_autarky[y * n_y + yp] = tilt_aut[yp] / norm_aut[y];
        }
    }
    if m_star.iter().chain(&m_autarky).any(|m| !m.is_finite()) {
        return Err(Error::Breakdown { theta: model.theta.value() });
    }
    Ok(DistortionField::Full {
        n_y,
        n_b,
        m_star,
        m_autarky,
    })
}
