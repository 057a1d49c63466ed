//! Normal and truncated-normal helpers shared by the discretization,
//! solver and simulation code.

use libm::erfc;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn norm_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal CDF, accurate in both tails.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Normal with standard deviation `sigma` and mean zero, truncated to
/// `[-k sigma, k sigma]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedNormal {
    pub sigma: f64,
    pub lower: f64,
    pub upper: f64,
    mass: f64,
    cdf_lower: f64,
}

impl TruncatedNormal {
    pub fn symmetric(sigma: f64, k: f64) -> Self {
        let mass = norm_cdf(k) - norm_cdf(-k);
        TruncatedNormal {
            sigma,
            lower: -k * sigma,
            upper: k * sigma,
            mass,
            cdf_lower: norm_cdf(-k),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if self.sigma == 0.0 {
            return if x >= 0.0 { 1.0 } else { 0.0 };
        }
        if x <= self.lower {
            0.0
        } else if x >= self.upper {
            1.0
        } else {
            ((norm_cdf(x / self.sigma) - self.cdf_lower) / self.mass).clamp(0.0, 1.0)
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < self.lower || x > self.upper || self.sigma == 0.0 {
            return 0.0;
        }
        norm_pdf(x / self.sigma) / (self.sigma * self.mass)
    }

    /// Analytic variance of the truncated law.
    pub fn variance(&self) -> f64 {
        if self.sigma == 0.0 {
            return 0.0;
        }
        let k = self.upper / self.sigma;
        self.sigma * self.sigma * (1.0 - 2.0 * k * norm_pdf(k) / self.mass)
    }

    /// Analytic raw moment `E[X^p]` via the standard truncated-normal
    /// recursion `m_p = (p-1) s^2 m_{p-2} - s^2 (b^{p-1} f(b) - a^{p-1} f(a))`.
    pub fn raw_moment(&self, p: u32) -> f64 {
        if self.sigma == 0.0 {
            return if p == 0 { 1.0 } else { 0.0 };
        }
        let s2 = self.sigma * self.sigma;
        let fa = self.pdf(self.lower);
        let fb = self.pdf(self.upper);
        let mut m = vec![0.0; (p as usize) + 1];
        m[0] = 1.0;
        if p >= 1 {
            m[1] = -s2 * (fb - fa);
        }
        for k in 2..=p as usize {
            let kk = (k - 1) as i32;
            m[k] = kk as f64 * s2 * m[k - 2]
                - s2 * (self.upper.powi(kk) * fb - self.lower.powi(kk) * fa);
        }
        m[p as usize]
    }
}
