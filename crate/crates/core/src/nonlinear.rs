//! The power nonlinearity, the logarithmic perturbation f(v) = |v|^{p−1}v / log^a(2+v²),
//! its antiderivative F, and the Taylor remainders entering the q-equation.
//!
//! Everything that involves f at similarity time s is evaluated in scaled form:
//! with E = e^{2s/(p−1)} and t = log(E²u²),
//!
//! * g(u) = E^{−p} f(E u) = sign(u)|u|^p / ℓ(t)^a, ℓ(t) = log(2 + e^t),
//! * G(u) = E^{−(p+1)} F(E u) = |u|^{p+1} Γ(t), Γ(t) = F(ξ)/ξ^{p+1} at ξ² = e^t,
//!
//! so nothing overflows however large s becomes.

use std::sync::{Arc, OnceLock};

use crate::error::{numeric, Result};
use crate::params::{signed_pow, Params};
use crate::quad::{gauss_legendre_unit, quintic_hermite};

/// ℓ(t) = log(2 + e^t) together with m = 2 dℓ/dt and n = 2 dm/dt.
fn ell(t: f64) -> (f64, f64, f64) {
    if t > 0.0 {
        let e = (-t).exp();
        let den = 1.0 + 2.0 * e;
        (t + (2.0 * e).ln_1p(), 2.0 / den, 8.0 * e / (den * den))
    } else {
        let e = t.exp();
        let den = 2.0 + e;
        (
            std::f64::consts::LN_2 + (0.5 * e).ln_1p(),
            2.0 * e / den,
            8.0 * e / (den * den),
        )
    }
}

/// Unscaled f(v).
pub fn f_raw(params: &Params, v: f64) -> f64 {
    if v == 0.0 {
        return 0.0;
    }
    let (l, _, _) = ell(2.0 * v.abs().ln());
    signed_pow(v, params.p) / l.powf(params.a)
}

/// Unscaled f′(v).
pub fn f_raw_prime(params: &Params, v: f64) -> f64 {
    ScaledSource::unscaled(params).g1(v)
}

fn gauss20() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre_unit(20).expect("20-point Gauss-Legendre rule"))
}

/// Γ(t) = ∫₀¹ v^p ℓ(t + 2 log v)^{−a} dv = ∫₀^∞ e^{−(p+1)x} ℓ(t − 2x)^{−a} dx,
/// by 20-point Gauss–Legendre on unit panels in x. The integrand is analytic
/// within π/2 of the real axis, so the panels converge to round-off; the
/// truncation at x = 80/(p+1) leaves a relative tail below 1e−30·(ℓ(t)/log 2)^a.
pub fn gamma_direct(p: f64, a: f64, t: f64) -> Result<f64> {
    if !t.is_finite() {
        return numeric(format!("antiderivative at non-finite t={t}"));
    }
    let (nodes, weights) = gauss20();
    let panels = (80.0 / (p + 1.0)).ceil() as usize;
    let mut acc = 0.0;
    for k in 0..panels {
        for (x, w) in nodes.iter().zip(weights) {
            let x = k as f64 + x;
            acc += w * (-(p + 1.0) * x).exp() * ell(t - 2.0 * x).0.powf(-a);
        }
    }
    if !(acc.is_finite() && acc > 0.0) {
        return numeric(format!("antiderivative quadrature failed at t={t}"));
    }
    Ok(acc)
}

/// Γ′(t) = ½(ℓ^{−a} − (p+1)Γ) and Γ″ follow from the definition, no quadrature needed.
fn gamma_derivatives(p: f64, a: f64, t: f64, g: f64) -> [f64; 3] {
    let (l, m, _) = ell(t);
    let la = l.powf(-a);
    let g1 = 0.5 * (la - (p + 1.0) * g);
    let g2 = 0.5 * (-a * la / l * 0.5 * m - (p + 1.0) * g1);
    [g, g1, g2]
}

/// Cache of Γ on a uniform grid in t (a geometric grid in |u|), interpolated by
/// quintic Hermite using the exact derivatives. Outside the tabulated range the
/// quadrature is evaluated directly.
#[derive(Debug)]
pub struct GammaTable {
    p: f64,
    a: f64,
    t_lo: f64,
    h: f64,
    rows: Vec<[f64; 3]>,
}

impl GammaTable {
    pub const T_LO: f64 = -60.0;
    pub const T_HI: f64 = 120.0;
    pub const STEP: f64 = 1.0 / 32.0;

    pub fn build(p: f64, a: f64) -> Result<Self> {
        let count = ((Self::T_HI - Self::T_LO) / Self::STEP).round() as usize + 1;
        let mut rows = Vec::with_capacity(count);
        for i in 0..count {
            let t = Self::T_LO + i as f64 * Self::STEP;
            let g = gamma_direct(p, a, t)?;
            rows.push(gamma_derivatives(p, a, t, g));
        }
        Ok(GammaTable {
            p,
            a,
            t_lo: Self::T_LO,
            h: Self::STEP,
            rows,
        })
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        let x = (t - self.t_lo) / self.h;
        if x < 0.0 || x >= (self.rows.len() - 1) as f64 {
            return gamma_direct(self.p, self.a, t);
        }
        let i = x.floor() as usize;
        let (v, _) = quintic_hermite(self.h, x - i as f64, self.rows[i], self.rows[i + 1]);
        Ok(v)
    }
}

/// Owner of the perturbation data for one parameter pair; cheap to clone.
#[derive(Debug, Clone)]
pub struct Source {
    pub params: Params,
    table: Arc<OnceLock<std::result::Result<GammaTable, crate::error::LabError>>>,
}

impl Source {
    pub fn new(params: Params) -> Self {
        Source {
            params,
            table: Arc::new(OnceLock::new()),
        }
    }

    fn table(&self) -> Result<&GammaTable> {
        self.table
            .get_or_init(|| GammaTable::build(self.params.p, self.params.a))
            .as_ref()
            .map_err(|e| e.clone())
    }

    /// Γ(t) through the cache.
    pub fn gamma(&self, t: f64) -> Result<f64> {
        self.table()?.eval(t)
    }

    /// Scaled source at similarity time s.
    pub fn at(&self, s: f64) -> ScaledSource<'_> {
        ScaledSource {
            p: self.params.p,
            a: self.params.a,
            two_ln_e: 2.0 * self.params.scale() * s,
            enabled: self.params.f_enabled,
            source: Some(self),
        }
    }

    /// F(u) = ∫₀^u f, unscaled.
    pub fn antiderivative(&self, u: f64) -> Result<f64> {
        if !u.is_finite() {
            return numeric("antiderivative of a non-finite value");
        }
        if u == 0.0 {
            return Ok(0.0);
        }
        let t = 2.0 * u.abs().ln();
        Ok(u.abs().powf(self.params.p + 1.0) * self.gamma(t)?)
    }
}

/// f at similarity time s in the scaled form described in the module docs.
#[derive(Debug, Clone, Copy)]
pub struct ScaledSource<'a> {
    p: f64,
    a: f64,
    /// log E² = 4s/(p−1)
    two_ln_e: f64,
    enabled: bool,
    source: Option<&'a Source>,
}

impl<'a> ScaledSource<'a> {
    /// E = 1, f switched on: gives f, f′, f″ themselves.
    pub fn unscaled(params: &Params) -> ScaledSource<'static> {
        ScaledSource {
            p: params.p,
            a: params.a,
            two_ln_e: 0.0,
            enabled: true,
            source: None,
        }
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    fn t_of(&self, x: f64) -> f64 {
        self.two_ln_e + 2.0 * x.ln()
    }

    /// g(u) = e^{−2ps/(p−1)} f(e^{2s/(p−1)} u).
    pub fn g(&self, u: f64) -> f64 {
        if !self.enabled || u == 0.0 {
            return 0.0;
        }
        let x = u.abs();
        let (l, _, _) = ell(self.t_of(x));
        u.signum() * x.powf(self.p) / l.powf(self.a)
    }

    /// g′(u) = e^{−2s} f′(e^{2s/(p−1)} u).
    pub fn g1(&self, u: f64) -> f64 {
        if !self.enabled || u == 0.0 {
            return 0.0;
        }
        let x = u.abs();
        let (l, m, _) = ell(self.t_of(x));
        x.powf(self.p - 1.0) / l.powf(self.a) * (self.p - self.a * m / l)
    }

    /// g″(u).
    pub fn g2(&self, u: f64) -> f64 {
        if !self.enabled || u == 0.0 {
            return 0.0;
        }
        let (p, a) = (self.p, self.a);
        let x = u.abs();
        let (l, m, n) = ell(self.t_of(x));
        let r = m / l;
        let bracket = (p - 1.0) * (p - a * r) - a * r * (p - a * r) - a * (n / l - r * r);
        u.signum() * x.powf(p - 2.0) / l.powf(a) * bracket
    }

    /// G(u) = e^{−2(p+1)s/(p−1)} F(e^{2s/(p−1)} u).
    pub fn big_g(&self, u: f64) -> Result<f64> {
        if !self.enabled || u == 0.0 {
            return Ok(0.0);
        }
        let x = u.abs();
        let t = self.t_of(x);
        let gamma = match self.source {
            Some(src) => src.gamma(t)?,
            None => gamma_direct(self.p, self.a, t)?,
        };
        Ok(x.powf(self.p + 1.0) * gamma)
    }

    /// f̂ = g(w̄+x) − g(w̄) − g′(w̄)x.
    pub fn remainder1(&self, wb: f64, x: f64) -> f64 {
        if !self.enabled {
            return 0.0;
        }
        if use_taylor(wb, x) {
            taylor_remainder(|u| self.g2(u), wb, x, 1)
        } else {
            self.g(wb + x) - self.g(wb) - self.g1(wb) * x
        }
    }

    /// F̂ = G(w̄+x) − G(w̄) − g(w̄)x − ½g′(w̄)x².
    pub fn remainder2(&self, wb: f64, x: f64) -> Result<f64> {
        if !self.enabled {
            return Ok(0.0);
        }
        if use_taylor(wb, x) {
            Ok(taylor_remainder(|u| self.g2(u), wb, x, 2))
        } else {
            Ok(self.big_g(wb + x)? - self.big_g(wb)? - self.g(wb) * x - 0.5 * self.g1(wb) * x * x)
        }
    }
}

/// The odd power k(u) = |u|^{p−1}u and its remainders.
#[derive(Debug, Clone, Copy)]
pub struct Power {
    pub p: f64,
}

impl Power {
    pub fn k(&self, u: f64) -> f64 {
        signed_pow(u, self.p)
    }

    pub fn k1(&self, u: f64) -> f64 {
        if u == 0.0 {
            0.0
        } else {
            self.p * u.abs().powf(self.p - 1.0)
        }
    }

    pub fn k2(&self, u: f64) -> f64 {
        if u == 0.0 {
            0.0
        } else {
            self.p * (self.p - 1.0) * signed_pow(u, self.p - 2.0)
        }
    }

    /// |u|^{p+1}/(p+1).
    pub fn big_k(&self, u: f64) -> f64 {
        u.abs().powf(self.p + 1.0) / (self.p + 1.0)
    }

    /// h = k(w̄+x) − k(w̄) − k′(w̄)x.
    pub fn remainder1(&self, wb: f64, x: f64) -> f64 {
        if use_taylor(wb, x) {
            taylor_remainder(|u| self.k2(u), wb, x, 1)
        } else {
            self.k(wb + x) - self.k(wb) - self.k1(wb) * x
        }
    }

    /// H = K(w̄+x) − K(w̄) − k(w̄)x − ½k′(w̄)x².
    pub fn remainder2(&self, wb: f64, x: f64) -> f64 {
        if use_taylor(wb, x) {
            taylor_remainder(|u| self.k2(u), wb, x, 2)
        } else {
            self.big_k(wb + x) - self.big_k(wb) - self.k(wb) * x - 0.5 * self.k1(wb) * x * x
        }
    }
}

fn use_taylor(wb: f64, x: f64) -> bool {
    x.abs() <= 0.25 * wb.abs()
}

fn legendre12() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre_unit(12).expect("12-point Legendre rule"))
}

/// Integral form of the Taylor remainder of order `order` (1 or 2) using the
/// second derivative: ∫₀^x (x−τ)^{order}/order! · k″(w̄+τ) dτ.
fn taylor_remainder(k2: impl Fn(f64) -> f64, wb: f64, x: f64, order: u32) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let (nodes, weights) = legendre12();
    let mut acc = 0.0;
    for (&sig, &w) in nodes.iter().zip(weights) {
        let kern = if order == 1 {
            1.0 - sig
        } else {
            0.5 * (1.0 - sig) * (1.0 - sig)
        };
        acc += w * kern * k2(wb + sig * x);
    }
    acc * x.powi(order as i32 + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> Params {
        Params::default()
    }

    #[test]
    fn scaled_derivatives_match_finite_differences() {
        let src = Source::new(params());
        for &s in &[0.0, 3.0, 40.0, 400.0] {
            let g = src.at(s);
            for &u in &[0.3f64, 1.2, -0.8, 2.5] {
                let h = 1e-5 * u.abs();
                let d1 = (g.g(u + h) - g.g(u - h)) / (2.0 * h);
                let d2 = (g.g1(u + h) - g.g1(u - h)) / (2.0 * h);
                assert!((d1 - g.g1(u)).abs() < 1e-8 * g.g1(u).abs().max(1e-6), "s={s} u={u}");
                assert!((d2 - g.g2(u)).abs() < 1e-7 * g.g2(u).abs().max(1e-4), "s={s} u={u}");
            }
        }
    }

    #[test]
    fn scaled_source_matches_raw_for_moderate_s() {
        let pr = params();
        let src = Source::new(pr);
        let s = 2.0;
        let e = (pr.scale() * s).exp();
        let g = src.at(s);
        for &u in &[0.1, 0.9, -1.7] {
            let direct = e.powf(-pr.p) * f_raw(&pr, e * u);
            assert!((direct - g.g(u)).abs() < 1e-14 * direct.abs());
        }
    }

    #[test]
    fn antiderivative_derivative_is_f() {
        let pr = params();
        let src = Source::new(pr);
        for &u in &[0.05, 0.7, 3.0, 40.0] {
            let h = 1e-4 * u;
            let d = (src.antiderivative(u + h).unwrap() - src.antiderivative(u - h).unwrap())
                / (2.0 * h);
            assert!((d / f_raw(&pr, u) - 1.0).abs() < 1e-7, "u={u}");
        }
        assert_eq!(src.antiderivative(0.0).unwrap(), 0.0);
    }

    #[test]
    fn table_agrees_with_direct_quadrature() {
        let pr = params();
        let src = Source::new(pr);
        for &t in &[-59.97, -3.3, 0.013, 7.77, 55.5, 119.1, 300.0] {
            let a = src.gamma(t).unwrap();
            let b = gamma_direct(pr.p, pr.a, t).unwrap();
            assert!((a - b).abs() < 1e-12 * b, "t={t}");
        }
    }

    #[test]
    fn remainders_are_continuous_across_the_branch_switch() {
        let pw = Power { p: 2.5 };
        let src = Source::new(Params::new(2.5, 1.5, true).unwrap());
        let g = src.at(7.0);
        let wb = 1.3;
        let x0 = 0.25 * wb;
        for x in [x0 * (1.0 - 1e-12), x0 * (1.0 + 1e-12)] {
            let direct = pw.k(wb + x) - pw.k(wb) - pw.k1(wb) * x;
            assert!((pw.remainder1(wb, x) - direct).abs() < 1e-13);
            let direct = pw.big_k(wb + x) - pw.big_k(wb) - pw.k(wb) * x - 0.5 * pw.k1(wb) * x * x;
            assert!((pw.remainder2(wb, x) - direct).abs() < 1e-13);
            let direct = g.g(wb + x) - g.g(wb) - g.g1(wb) * x;
            assert!((g.remainder1(wb, x) - direct).abs() < 1e-13);
            let direct = g.big_g(wb + x).unwrap() - g.big_g(wb).unwrap()
                - g.g(wb) * x
                - 0.5 * g.g1(wb) * x * x;
            assert!((g.remainder2(wb, x).unwrap() - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn large_argument_limit_of_antiderivative() {
        let pr = params();
        let src = Source::new(pr);
        let u: f64 = 1e6;
        let l = (2.0 + u * u).ln();
        let ratio = src.antiderivative(u).unwrap() * (pr.p + 1.0) * l.powf(pr.a) / u.powf(pr.p + 1.0);
        assert!((ratio - 1.0).abs() < 0.05, "{ratio}");
    }
}
