//! Economy primitives: parameters, grids, output costs, utility and bond
//! cash-flow arithmetic.
//!
//! Sign convention: `B < 0` is government debt. The borrower pays
//! `(lambda + (1 - lambda) psi) |B|` per period on outstanding debt and the
//! lender's cash flow is the mirror image of the government's.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::markov::{iid_quadrature, tauchen, tauchen_matrix, ArSpec, IidShockQuad, MarkovChain};

/// Robustness penalty; `Infinite` is the exact rational-expectations case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Theta {
    Finite(f64),
    Infinite,
}

impl Theta {
    pub fn is_infinite(&self) -> bool {
        matches!(self, Theta::Infinite)
    }

    pub fn value(&self) -> f64 {
        match self {
            Theta::Finite(t) => *t,
            Theta::Infinite => f64::INFINITY,
        }
    }

    pub fn from_f64(t: f64) -> Theta {
        if t.is_infinite() && t > 0.0 {
            Theta::Infinite
        } else {
            Theta::Finite(t)
        }
    }
}

impl fmt::Display for Theta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Theta::Finite(t) => write!(f, "{t}"),
            Theta::Infinite => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for Theta {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") {
            return Ok(Theta::Infinite);
        }
        s.parse::<f64>()
            .map(Theta::from_f64)
            .map_err(|_| Error::invalid("theta", format!("`{s}` is neither a number nor \"inf\"")))
    }
}

impl Serialize for Theta {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Theta::Finite(t) => s.serialize_f64(*t),
            Theta::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Theta {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Int(i64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(t) => Ok(Theta::from_f64(t)),
            Repr::Int(t) => Ok(Theta::Finite(t as f64)),
            Repr::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Which stochastic discount factor prices the bond.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelChoice {
    Robust,
    Rational,
    Adhoc,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelMode {
    Robust(Theta),
    RationalExpectations,
    /// Log-normal kernel that lowers the conditional mean of `log y'` by
    /// `eta sigma_eps^2` and keeps its variance.
    AdHoc { eta: f64 },
}

impl KernelMode {
    /// True when the pricing measure coincides with the approximating one.
    pub fn is_undistorted(&self) -> bool {
        match self {
            KernelMode::Robust(t) => t.is_infinite(),
            KernelMode::RationalExpectations => true,
            KernelMode::AdHoc { eta } => *eta == 0.0,
        }
    }
}

/// Grid sizes, tolerances and other solver controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Numerics {
    pub n_y: usize,
    pub coverage_m: f64,
    pub n_x: usize,
    pub n_b: usize,
    pub b_min: f64,
    pub b_max: f64,
    pub tol_value: f64,
    pub tol_price: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub min_damping: f64,
    /// Iterations without a new best price residual before damping halves.
    pub stall_window: usize,
    /// Lender recursion sweeps per iteration.
    pub lender_steps: usize,
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            n_y: 200,
            coverage_m: 3.0,
            n_x: 21,
            n_b: 580,
            b_min: -1.0,
            b_max: 0.0,
            tol_value: 1e-8,
            tol_price: 1e-8,
            max_iter: 5000,
            damping: 0.5,
            min_damping: 1.0 / 64.0,
            stall_window: 200,
            lender_steps: 4,
        }
    }
}

impl Numerics {
    /// Reduced grids for tests and quick runs (21 y-states, 120 B-points).
    pub fn small() -> Self {
        Numerics {
            n_y: 21,
            n_b: 120,
            ..Numerics::default()
        }
    }
}

/// Every structural parameter plus numerical controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConfigFile")]
pub struct EconomyConfig {
    pub sigma: f64,
    pub beta: f64,
    pub pi_reentry: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub rho: f64,
    pub sigma_eps: f64,
    pub sigma_x: f64,
    pub theta: Theta,
    pub z_bar: f64,
    pub r_f: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub psi: f64,
    pub kernel: KernelChoice,
    pub eta: f64,
    pub numerics: Numerics,
}

impl Default for EconomyConfig {
    /// The benchmark calibration.
    fn default() -> Self {
        EconomyConfig {
            sigma: 2.0,
            beta: 0.9627,
            pi_reentry: 0.0385,
            kappa1: -0.255,
            kappa2: 0.296,
            rho: 0.9484,
            sigma_eps: 0.02,
            sigma_x: 0.03,
            theta: Theta::Finite(0.619),
            z_bar: std::f64::consts::E,
            r_f: 0.01,
            gamma: 1.0 / 1.01,
            lambda: 0.05,
            psi: 0.03,
            kernel: KernelChoice::Robust,
            eta: 0.0,
            numerics: Numerics::default(),
        }
    }
}

/// On-disk shape of the config: every key optional, unknown keys rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    sigma: Option<f64>,
    beta: Option<f64>,
    pi_reentry: Option<f64>,
    kappa1: Option<f64>,
    kappa2: Option<f64>,
    rho: Option<f64>,
    sigma_eps: Option<f64>,
    sigma_x: Option<f64>,
    theta: Option<Theta>,
    z_bar: Option<f64>,
    r_f: Option<f64>,
    gamma: Option<f64>,
    lambda: Option<f64>,
    psi: Option<f64>,
    kernel: Option<KernelChoice>,
    eta: Option<f64>,
    numerics: Option<Numerics>,
}

impl TryFrom<ConfigFile> for EconomyConfig {
    type Error = Error;

    fn try_from(f: ConfigFile) -> Result<Self> {
        let d = EconomyConfig::default();
        let r_f = f.r_f.unwrap_or(d.r_f);
        let cfg = EconomyConfig {
            sigma: f.sigma.unwrap_or(d.sigma),
            beta: f.beta.unwrap_or(d.beta),
            pi_reentry: f.pi_reentry.unwrap_or(d.pi_reentry),
            kappa1: f.kappa1.unwrap_or(d.kappa1),
            kappa2: f.kappa2.unwrap_or(d.kappa2),
            rho: f.rho.unwrap_or(d.rho),
            sigma_eps: f.sigma_eps.unwrap_or(d.sigma_eps),
            sigma_x: f.sigma_x.unwrap_or(d.sigma_x),
            theta: f.theta.unwrap_or(d.theta),
            z_bar: f.z_bar.unwrap_or(d.z_bar),
            r_f,
            gamma: f.gamma.unwrap_or(1.0 / (1.0 + r_f)),
            lambda: f.lambda.unwrap_or(d.lambda),
            psi: f.psi.unwrap_or(d.psi),
            kernel: f.kernel.unwrap_or(d.kernel),
            eta: f.eta.unwrap_or(d.eta),
            numerics: f.numerics.unwrap_or_default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl EconomyConfig {
    pub fn small() -> Self {
        EconomyConfig {
            numerics: Numerics::small(),
            ..EconomyConfig::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Canonical TOML text; identical configs serialize to identical bytes.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn ar(&self) -> ArSpec {
        ArSpec {
            rho: self.rho,
            sigma_eps: self.sigma_eps,
        }
    }

    pub fn kernel_mode(&self) -> KernelMode {
        match self.kernel {
            KernelChoice::Robust => KernelMode::Robust(self.theta),
            KernelChoice::Rational => KernelMode::RationalExpectations,
            KernelChoice::Adhoc => KernelMode::AdHoc { eta: self.eta },
        }
    }

    /// Penalty used by the lender's recursion (infinite unless robust).
    pub fn effective_theta(&self) -> Theta {
        match self.kernel_mode() {
            KernelMode::Robust(t) => t,
            _ => Theta::Infinite,
        }
    }

    /// Per-period repayment on one unit of outstanding debt.
    pub fn coupon_factor(&self) -> f64 {
        self.lambda + (1.0 - self.lambda) * self.psi
    }

    pub fn validate(&self) -> Result<()> {
        fn finite(name: &'static str, v: f64) -> Result<()> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(name, "must be finite"))
            }
        }
        for (name, v) in [
            ("sigma", self.sigma),
            ("beta", self.beta),
            ("pi_reentry", self.pi_reentry),
            ("kappa1", self.kappa1),
            ("kappa2", self.kappa2),
            ("sigma_x", self.sigma_x),
            ("z_bar", self.z_bar),
            ("r_f", self.r_f),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
            ("psi", self.psi),
            ("eta", self.eta),
        ] {
            finite(name, v)?;
        }
        self.ar().validate()?;
        if self.sigma <= 0.0 {
            return Err(Error::invalid("sigma", "risk aversion must be positive"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::invalid("beta", "must lie in (0, 1)"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid("gamma", "must lie in (0, 1)"));
        }
        if (self.gamma - 1.0 / (1.0 + self.r_f)).abs() > 1e-12 {
            return Err(Error::invalid(
                "gamma",
                format!(
                    "violates the risk-free identity gamma = 1/(1+r_f): gamma = {}, 1/(1+r_f) = {}",
                    self.gamma,
                    1.0 / (1.0 + self.r_f)
                ),
            ));
        }
        if !(self.pi_reentry >= 0.0 && self.pi_reentry <= 1.0) {
            return Err(Error::invalid("pi_reentry", "must lie in [0, 1]"));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::invalid("lambda", "must lie in (0, 1]"));
        }
        if self.psi < 0.0 {
            return Err(Error::invalid("psi", "coupon must be non-negative"));
        }
        if self.kappa2 < 0.0 {
            return Err(Error::invalid("kappa2", "must be non-negative"));
        }
        if self.sigma_x < 0.0 {
            return Err(Error::invalid("sigma_x", "must be non-negative"));
        }
        if let Theta::Finite(t) = self.theta {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::invalid("theta", "must be positive or \"inf\""));
            }
        }
        if self.eta < 0.0 {
            return Err(Error::invalid("eta", "tilt intensity must be non-negative"));
        }
        let n = &self.numerics;
        if n.n_y < 2 {
            return Err(Error::invalid("n_y", "need at least 2 states"));
        }
        if n.n_b < 2 || n.n_x == 0 {
            return Err(Error::invalid("n_b", "grids too small"));
        }
        if !(n.b_min < 0.0) || n.b_max < 0.0 || !n.b_min.is_finite() || !n.b_max.is_finite() {
            return Err(Error::invalid("b_min", "need b_min < 0 <= b_max"));
        }
        if !(n.damping > 0.0 && n.damping <= 1.0) {
            return Err(Error::invalid("damping", "must lie in (0, 1]"));
        }
        if !(n.min_damping > 0.0 && n.min_damping <= n.damping) {
            return Err(Error::invalid("min_damping", "must lie in (0, damping]"));
        }
        if !(n.tol_value > 0.0 && n.tol_price > 0.0) {
            return Err(Error::invalid("tol_value", "tolerances must be positive"));
        }
        if n.lender_steps == 0 {
            return Err(Error::invalid("lender_steps", "need at least one sweep"));
        }
        risk_free_price(self.gamma, self.lambda, self.psi)?;
        Ok(())
    }
}

/// Serde adapter storing a config as its canonical TOML text, for
/// non-self-describing formats.
pub mod config_as_toml {
    use super::EconomyConfig;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(cfg: &EconomyConfig, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&cfg.to_toml_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<EconomyConfig, D::Error> {
        let text = String::deserialize(d)?;
        EconomyConfig::from_toml_str(&text).map_err(serde::de::Error::custom)
    }
}

/// Discretized state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grids {
    pub chain: MarkovChain,
    pub bonds: Vec<f64>,
    /// Position of `B = 0` in `bonds`.
    pub zero_index: usize,
    pub xquad: IidShockQuad,
    /// Density ratio of the ad-hoc pricing measure, `n_y x n_y` row-major.
    pub adhoc_ratio: Option<Vec<f64>>,
}

impl Grids {
    pub fn build(cfg: &EconomyConfig) -> Result<Self> {
        let n = &cfg.numerics;
        let chain = tauchen(cfg.ar(), n.n_y, n.coverage_m)?;
        let xquad = iid_quadrature(cfg.sigma_x, n.n_x)?;
        let (bonds, zero_index) = bond_grid(n.b_min, n.b_max, n.n_b);
        let adhoc_ratio = match cfg.kernel_mode() {
            KernelMode::AdHoc { eta } => Some(adhoc_density_ratio(cfg, &chain, eta)),
            _ => None,
        };
        Ok(Grids {
            chain,
            bonds,
            zero_index,
            xquad,
            adhoc_ratio,
        })
    }

    pub fn n_y(&self) -> usize {
        self.chain.len()
    }

    pub fn n_b(&self) -> usize {
        self.bonds.len()
    }

    pub fn n_x(&self) -> usize {
        self.xquad.len()
    }

    pub fn x_lower(&self) -> f64 {
        self.xquad.lower
    }
}

/// Equally spaced grid over `[b_min, b_max]`, shifted so that zero is a node.
pub fn bond_grid(b_min: f64, b_max: f64, n: usize) -> (Vec<f64>, usize) {
    let step = (b_max - b_min) / (n - 1) as f64;
    let k = ((-b_min / step).round() as usize).min(n - 1);
    let grid = (0..n).map(|i| (i as f64 - k as f64) * step).collect();
    (grid, k)
}

fn adhoc_density_ratio(cfg: &EconomyConfig, chain: &MarkovChain, eta: f64) -> Vec<f64> {
    let n = chain.len();
    let shift = -eta * cfg.sigma_eps * cfg.sigma_eps;
    let (_, shifted) = tauchen_matrix(cfg.ar(), n, cfg.numerics.coverage_m, shift);
    let mut ratio = vec![1.0; n * n];
    for i in 0..n {
        let p = chain.row(i);
        let mut total = 0.0;
        for j in 0..n {
            if p[j] > 0.0 {
                ratio[i * n + j] = shifted[i * n + j] / p[j];
            }
            total += ratio[i * n + j] * p[j];
        }
        for j in 0..n {
            ratio[i * n + j] /= total;
        }
    }
    ratio
}

/// Output cost of default `max{0, k1 y + k2 y^2}`, capped at `y`.
pub fn output_cost(y: f64, kappa1: f64, kappa2: f64) -> f64 {
    let c = (kappa1 * y + kappa2 * y * y).max(0.0);
    if c > y {
        log::warn!("output cost {c} exceeds output {y}; capping at output");
        y
    } else {
        c
    }
}

pub fn crra_utility(c: f64, sigma: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::NonPositiveConsumption(c));
    }
    Ok(Utility::new(sigma).eval(c))
}

/// CRRA period utility with fast paths for log and `sigma = 2`.
#[derive(Debug, Clone, Copy)]
pub struct Utility {
    sigma: f64,
    kind: UtilityKind,
}

#[derive(Debug, Clone, Copy)]
enum UtilityKind {
    Log,
    Two,
    General,
}

impl Utility {
    pub fn new(sigma: f64) -> Self {
        let kind = if sigma == 1.0 {
            UtilityKind::Log
        } else if sigma == 2.0 {
            UtilityKind::Two
        } else {
            UtilityKind::General
        };
        Utility { sigma, kind }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Consumption delivering utility `v`.
    pub fn inverse(&self, v: f64) -> f64 {
        match self.kind {
            UtilityKind::Log => v.exp(),
            UtilityKind::Two => -1.0 / v,
            UtilityKind::General => ((1.0 - self.sigma) * v).powf(1.0 / (1.0 - self.sigma)),
        }
    }

    /// Utility of `c`; non-positive consumption is `-inf`.
    #[inline(always)]
    pub fn eval(&self, c: f64) -> f64 {
        if c <= 0.0 {
            return f64::NEG_INFINITY;
        }
        match self.kind {
            UtilityKind::Log => c.ln(),
            UtilityKind::Two => -1.0 / c,
            UtilityKind::General => c.powf(1.0 - self.sigma) / (1.0 - self.sigma),
        }
    }
}

/// Price of a bond that is repaid with certainty.
pub fn risk_free_price(gamma: f64, lambda: f64, psi: f64) -> Result<f64> {
    let denom = 1.0 - gamma * (1.0 - lambda);
    if denom < 1e-12 {
        return Err(Error::invalid("gamma", "gamma (1 - lambda) must be below one"));
    }
    Ok(gamma * (lambda + (1.0 - lambda) * psi) / denom)
}

/// Per-period internal rate of return `r` solving `q = (lambda + (1-lambda) psi)/(lambda + r)`.
pub fn irr(q: f64, lambda: f64, psi: f64) -> Result<f64> {
    if !(q > 0.0) {
        return Err(Error::NonPositivePrice(q));
    }
    Ok((lambda + (1.0 - lambda) * psi) / q - lambda)
}

/// Annualized spread (as a fraction) of a quarterly yield over the quarterly
/// risk-free rate, compounding both to annual.
pub fn spread_annualized(r: f64, r_f: f64) -> f64 {
    ((1.0 + r).powi(4) - 1.0) - ((1.0 + r_f).powi(4) - 1.0)
}
