//! Marchenko–Pastur law with ratio `gamma` and variance `var`.

use nalgebra::Complex;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarchenkoPastur {
    pub gamma: f64,
    pub var: f64,
}

impl MarchenkoPastur {
    pub fn new(gamma: f64, var: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite() && var > 0.0 && var.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "Marchenko-Pastur needs gamma > 0 and var > 0, got ({gamma}, {var})"
            )));
        }
        Ok(MarchenkoPastur { gamma, var })
    }

    /// `[x-, x+]` with `x± = var (1 ± sqrt(gamma))^2`.
    pub fn support(&self) -> (f64, f64) {
        let s = self.gamma.sqrt();
        (self.var * (1.0 - s).powi(2), self.var * (1.0 + s).powi(2))
    }

    /// `(1 - 1/gamma)_+`.
    pub fn point_mass_at_zero(&self) -> f64 {
        (1.0 - 1.0 / self.gamma).max(0.0)
    }

    /// Density of the absolutely continuous part.
    pub fn density(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if x <= lo || x >= hi || x <= 0.0 {
            return 0.0;
        }
        ((hi - x) * (x - lo)).sqrt() / (2.0 * std::f64::consts::PI * self.var * self.gamma * x)
    }

    /// Free cumulants `kappa_n = var^n gamma^(n-1)`.
    pub fn free_cumulant(&self, order: u32) -> f64 {
        self.var.powi(order as i32) * self.gamma.powi(order as i32 - 1)
    }

    /// Stieltjes transform `m(z) = E[(Y - z)^-1]`, the root of
    /// `var gamma z m^2 + (z - var(1 - gamma)) m + 1 = 0` mapping the upper half-plane
    /// into itself. Off the upper half-plane, `m(conj z) = conj m(z)` is used.
    pub fn stieltjes_continued(&self, z: C64) -> C64 {
        if z.im < 0.0 {
            return self.stieltjes_continued(z.conj()).conj();
        }
        let (g, v) = (self.gamma, self.var);
        let a = C64::new(v * (1.0 - g), 0.0) - z;
        let d = (z - v * (g + 1.0)).powi(2) - 4.0 * g * v * v;
        let mut s = d.sqrt();
        if s.im < 0.0 || (s.im == 0.0 && s.re * (z.re - v * (g + 1.0)) > 0.0) {
            s = -s;
        }
        // Two algebraically equal forms; use the one without cancellation.
        if (a + s).norm() >= (a - s).norm() {
            (a + s) / (2.0 * v * g * z)
        } else {
            2.0 / (a - s)
        }
    }

    pub fn stieltjes(&self, z: C64) -> Result<C64> {
        if !(z.im > 0.0) {
            return Err(Error::InvalidInput(format!("Stieltjes transform needs Im z > 0, got {z}")));
        }
        Ok(self.stieltjes_continued(z))
    }

    /// Cauchy transform `G = -m`.
    pub fn cauchy(&self, z: C64) -> Result<C64> {
        self.stieltjes(z).map(|m| -m)
    }
}

/// `m(z)` for MP(`gamma`, `var`).
pub fn mp_stieltjes(z: C64, gamma: f64, var: f64) -> Result<C64> {
    MarchenkoPastur::new(gamma, var)?.stieltjes(z)
}
