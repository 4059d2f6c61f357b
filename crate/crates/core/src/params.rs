//! Equation parameters `(p, a)` and the constants derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub p: f64,
    pub a: f64,
    /// Whether the logarithmic perturbation f is switched on.
    pub f_enabled: bool,
}

impl Params {
    pub fn new(p: f64, a: f64, f_enabled: bool) -> Result<Self> {
        let params = Params { p, a, f_enabled };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p.is_finite() && self.p > 1.0) {
            return invalid(format!("p must be > 1, got {}", self.p));
        }
        if !(self.a.is_finite() && self.a > 1.0) {
            return invalid(format!("a must be > 1, got {}", self.a));
        }
        Ok(())
    }

    pub fn with_f(self, f_enabled: bool) -> Self {
        Params { f_enabled, ..self }
    }

    /// κ₀ = (2(p+1)/(p−1)²)^{1/(p−1)}.
    pub fn kappa0(&self) -> f64 {
        self.c0().powf(1.0 / (self.p - 1.0))
    }

    /// 2(p+1)/(p−1)², the coefficient of the linear term.
    pub fn c0(&self) -> f64 {
        2.0 * (self.p + 1.0) / ((self.p - 1.0) * (self.p - 1.0))
    }

    /// (p+3)/(p−1), the damping coefficient.
    pub fn damping(&self) -> f64 {
        (self.p + 3.0) / (self.p - 1.0)
    }

    /// Exponent of the weight ρ = (1−y²)^{2/(p−1)}.
    pub fn alpha(&self) -> f64 {
        2.0 / (self.p - 1.0)
    }

    /// Scale exponent 2/(p−1) linking u and w.
    pub fn scale(&self) -> f64 {
        2.0 / (self.p - 1.0)
    }

    /// κ(d,y) = κ₀(1−d²)^{1/(p−1)}/(1+dy)^{2/(p−1)}.
    pub fn kappa(&self, d: f64, y: f64) -> f64 {
        self.kappa0() * (1.0 - d * d).powf(1.0 / (self.p - 1.0)) / (1.0 + d * y).powf(self.scale())
    }

    /// ∂_d κ(d,y) = −2κ(y+d)/((p−1)(1−d²)(1+dy)).
    pub fn kappa_dd(&self, d: f64, y: f64) -> f64 {
        -2.0 * self.kappa(d, y) * (y + d) / ((self.p - 1.0) * (1.0 - d * d) * (1.0 + d * y))
    }

    /// c_p^a = κ₀(p−1)^{a−1}/4^a.
    pub fn c_pa(&self) -> f64 {
        self.kappa0() * (self.p - 1.0).powf(self.a - 1.0) / 4f64.powf(self.a)
    }
}

impl Default for Params {
    fn default() -> Self {
        Params {
            p: 3.0,
            a: 2.0,
            f_enabled: true,
        }
    }
}

/// sign(u)|u|^e with |0|^e = 0.
pub fn signed_pow(u: f64, e: f64) -> f64 {
    if u == 0.0 {
        0.0
    } else {
        u.signum() * u.abs().powf(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa0_identity() {
        for &p in &[1.5, 2.0, 2.5, 3.0, 5.0, 7.3] {
            let pr = Params::new(p, 2.0, true).unwrap();
            let k = pr.kappa0();
            let lhs = k.powf(p - 1.0);
            assert!((lhs / pr.c0() - 1.0).abs() < 1e-14, "p={p}");
        }
        assert!((Params::default().kappa0() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Params::new(1.0, 2.0, true).is_err());
        assert!(Params::new(0.5, 2.0, true).is_err());
        assert!(Params::new(3.0, 1.0, true).is_err());
        assert!(Params::new(f64::NAN, 2.0, true).is_err());
    }

    #[test]
    fn c_pa_at_p3_a2() {
        let pr = Params::default();
        assert!((pr.c_pa() - 2f64.sqrt() / 8.0).abs() < 1e-15);
    }
}
