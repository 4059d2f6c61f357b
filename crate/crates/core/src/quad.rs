//! Gauss rules for the symmetric Jacobi weight (1−y²)^γ and the matching
//! orthonormal polynomials, plus quintic Hermite interpolation.

use nalgebra::{DMatrix, SymmetricEigen};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, numeric, Result};

/// Three-term recurrence of the polynomials orthonormal for (1−y²)^γ on (−1,1).
#[derive(Debug, Clone)]
pub struct JacobiBasis {
    pub gamma: f64,
    /// √b_k for k = 1..: the off-diagonal of the Jacobi matrix (index 0 unused).
    sqrt_b: Vec<f64>,
    p0: f64,
}

impl JacobiBasis {
    pub fn new(gamma: f64, degree: usize) -> Result<Self> {
        if !(gamma > -1.0) {
            return invalid(format!("Jacobi exponent must exceed -1, got {gamma}"));
        }
        let mut sqrt_b = vec![0.0; degree + 2];
        for (k, sb) in sqrt_b.iter_mut().enumerate().skip(1) {
            let kf = k as f64;
            let b = if k == 1 {
                1.0 / (3.0 + 2.0 * gamma)
            } else {
                let t = 2.0 * kf + 2.0 * gamma;
                kf * (kf + 2.0 * gamma) / ((t + 1.0) * (t - 1.0))
            };
            *sb = b.sqrt();
        }
        Ok(JacobiBasis {
            gamma,
            sqrt_b,
            p0: 1.0 / moment0(gamma).sqrt(),
        })
    }

    /// Values p_0(x), …, p_{m−1}(x) written into `out` (length m ≤ degree+1).
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        let m = out.len();
        if m == 0 {
            return;
        }
        out[0] = self.p0;
        if m > 1 {
            out[1] = x * self.p0 / self.sqrt_b[1];
        }
        for k in 1..m.saturating_sub(1) {
            out[k + 1] = (x * out[k] - self.sqrt_b[k] * out[k - 1]) / self.sqrt_b[k + 1];
        }
    }

    /// p_m(x) and p_m'(x).
    fn eval_with_derivative(&self, m: usize, x: f64) -> (f64, f64) {
        let (mut pm1, mut p) = (0.0, self.p0);
        let (mut dm1, mut dp) = (0.0, 0.0);
        for k in 0..m {
            let bk = if k == 0 { 0.0 } else { self.sqrt_b[k] };
            let pn = (x * p - bk * pm1) / self.sqrt_b[k + 1];
            let dn = (p + x * dp - bk * dm1) / self.sqrt_b[k + 1];
            pm1 = p;
            p = pn;
            dm1 = dp;
            dp = dn;
        }
        (p, dp)
    }
}

/// ∫_{−1}^{1} (1−y²)^γ dy = 2^{2γ+1} Γ(γ+1)² / Γ(2γ+2).
pub fn moment0(gamma: f64) -> f64 {
    ((2.0 * gamma + 1.0) * std::f64::consts::LN_2 + 2.0 * ln_gamma(gamma + 1.0)
        - ln_gamma(2.0 * gamma + 2.0))
        .exp()
}

/// ∫ y^k (1−y²)^γ dy, zero for odd k.
pub fn moment(gamma: f64, k: usize) -> f64 {
    if k % 2 == 1 {
        return 0.0;
    }
    // Beta(k/2 + 1/2, γ + 1)
    let h = k as f64 / 2.0;
    (ln_gamma(h + 0.5) + ln_gamma(gamma + 1.0) - ln_gamma(h + gamma + 1.5)).exp()
}

#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub basis: JacobiBasis,
}

impl GaussRule {
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// n-point Gauss rule for (1−y²)^γ: Golub–Welsch, Newton polish on p_n,
/// Christoffel weights 1/Σ p_k(x)².
pub fn gauss_jacobi(n: usize, gamma: f64) -> Result<GaussRule> {
    if n == 0 {
        return invalid("Gauss rule needs at least one node");
    }
    let basis = JacobiBasis::new(gamma, n)?;
    let mut jm = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        jm[(k, k - 1)] = basis.sqrt_b[k];
        jm[(k - 1, k)] = basis.sqrt_b[k];
    }
    let eig = SymmetricEigen::new(jm);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for x in nodes.iter_mut() {
        for _ in 0..4 {
            let (p, dp) = basis.eval_with_derivative(n, *x);
            if dp == 0.0 {
                break;
            }
            let step = p / dp;
            *x -= step;
            if step.abs() < 1e-17 {
                break;
            }
        }
    }
    // enforce exact symmetry
    for i in 0..n / 2 {
        let m = 0.5 * (nodes[n - 1 - i] - nodes[i]);
        nodes[i] = -m;
        nodes[n - 1 - i] = m;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let mut vals = vec![0.0; n];
    let mut weights = Vec::with_capacity(n);
    for &x in &nodes {
        basis.eval_into(x, &mut vals);
        let s: f64 = vals.iter().map(|v| v * v).sum();
        weights.push(1.0 / s);
    }
    for i in 0..n / 2 {
        let m = 0.5 * (weights[i] + weights[n - 1 - i]);
        weights[i] = m;
        weights[n - 1 - i] = m;
    }
    if nodes.iter().any(|x| !x.is_finite() || x.abs() >= 1.0)
        || weights.iter().any(|w| !(w.is_finite() && *w > 0.0))
    {
        return numeric(format!("Gauss–Jacobi rule (n={n}, γ={gamma}) failed"));
    }
    for w in nodes.windows(2) {
        if w[1] <= w[0] {
            return numeric("Gauss–Jacobi nodes not strictly increasing");
        }
    }
    Ok(GaussRule {
        nodes,
        weights,
        basis,
    })
}

/// Gauss–Legendre nodes and weights mapped to [0, 1].
pub fn gauss_legendre_unit(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let r = gauss_jacobi(n, 0.0)?;
    Ok((
        r.nodes.iter().map(|x| 0.5 * (x + 1.0)).collect(),
        r.weights.iter().map(|w| 0.5 * w).collect(),
    ))
}

/// Adaptive integration: double-exponential quadrature with recursive bisection.
/// A piece is accepted when its own error estimate and the disagreement with the
/// sum over its two halves both fall below its share of `abs_tol`; the estimate
/// alone is occasionally optimistic.
pub fn adaptive_integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64) -> Result<f64> {
    fn de(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> (f64, f64) {
        let out = quadrature::double_exponential::integrate(f, a, b, tol);
        (out.integral, out.error_estimate)
    }
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: (f64, f64), tol: f64, depth: u32) -> Option<f64> {
        let m = 0.5 * (a + b);
        let left = de(f, a, m, 0.5 * tol);
        let right = de(f, m, b, 0.5 * tol);
        let halves = left.0 + right.0;
        // rounding in the halves' sum bounds how tight the comparison can be
        let agree = (whole.0 - halves).abs() <= tol.max(4.0 * f64::EPSILON * halves.abs());
        if whole.1 <= tol && agree && halves.is_finite() {
            return Some(halves);
        }
        if depth == 0 {
            return None;
        }
        Some(rec(f, a, m, left, 0.5 * tol, depth - 1)? + rec(f, m, b, right, 0.5 * tol, depth - 1)?)
    }
    match rec(f, a, b, de(f, a, b, abs_tol), abs_tol, 24) {
        Some(v) => Ok(v),
        None => numeric(format!("adaptive quadrature on [{a}, {b}] did not converge")),
    }
}

/// Quintic Hermite interpolation on [x0, x0+h] from values and first two derivatives.
/// Returns (value, first derivative).
pub fn quintic_hermite(h: f64, x: f64, left: [f64; 3], right: [f64; 3]) -> (f64, f64) {
    let x2 = x * x;
    let x3 = x2 * x;
    let x4 = x3 * x;
    let x5 = x4 * x;
    let h0 = 1.0 - 10.0 * x3 + 15.0 * x4 - 6.0 * x5;
    let h1 = x - 6.0 * x3 + 8.0 * x4 - 3.0 * x5;
    let h2 = 0.5 * x2 - 1.5 * x3 + 1.5 * x4 - 0.5 * x5;
    let h3 = 10.0 * x3 - 15.0 * x4 + 6.0 * x5;
    let h4 = -4.0 * x3 + 7.0 * x4 - 3.0 * x5;
    let h5 = 0.5 * x3 - x4 + 0.5 * x5;
    let d0 = -30.0 * x2 + 60.0 * x3 - 30.0 * x4;
    let d1 = 1.0 - 18.0 * x2 + 32.0 * x3 - 15.0 * x4;
    let d2 = x - 4.5 * x2 + 6.0 * x3 - 2.5 * x4;
    let d3 = -d0;
    let d4 = -12.0 * x2 + 28.0 * x3 - 15.0 * x4;
    let d5 = 1.5 * x2 - 4.0 * x3 + 2.5 * x4;
    let v = h0 * left[0]
        + h * h1 * left[1]
        + h * h * h2 * left[2]
        + h3 * right[0]
        + h * h4 * right[1]
        + h * h * h5 * right[2];
    let dv = (d0 * left[0] + d3 * right[0]) / h
        + d1 * left[1]
        + d4 * right[1]
        + h * (d2 * left[2] + d5 * right[2]);
    (v, dv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_known_values() {
        let r = gauss_jacobi(2, 0.0).unwrap();
        let x = 1.0 / 3f64.sqrt();
        assert!((r.nodes[1] - x).abs() < 1e-15);
        assert!((r.weights[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn moments_exact_to_degree_2n_minus_1() {
        for &g in &[-0.6, 0.0, 0.5, 1.0, 4.0 / 3.0, 4.0] {
            let n = 12;
            let r = gauss_jacobi(n, g).unwrap();
            for k in 0..2 * n {
                let q = r.integrate(|x| x.powi(k as i32));
                let m = moment(g, k);
                assert!((q - m).abs() <= 1e-12 * m.abs() + 1e-15, "γ={g} k={k} {q} {m}");
            }
        }
    }

    #[test]
    fn orthonormality_on_nodes() {
        let n = 20;
        let r = gauss_jacobi(n, 1.0).unwrap();
        let mut v = vec![vec![0.0; n]; n];
        for (j, &x) in r.nodes.iter().enumerate() {
            r.basis.eval_into(x, &mut v[j]);
        }
        for k in 0..n {
            for l in 0..n {
                let s: f64 = (0..n).map(|j| r.weights[j] * v[j][k] * v[j][l]).sum();
                let e = if k == l { 1.0 } else { 0.0 };
                assert!((s - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hermite_reproduces_quintic() {
        let f = |x: f64| 1.0 + x - 2.0 * x * x + 0.5 * x.powi(3) + x.powi(4) - 0.3 * x.powi(5);
        let df = |x: f64| 1.0 - 4.0 * x + 1.5 * x * x + 4.0 * x.powi(3) - 1.5 * x.powi(4);
        let ddf = |x: f64| -4.0 + 3.0 * x + 12.0 * x * x - 6.0 * x.powi(3);
        let (a, h) = (0.3, 0.7);
        for &t in &[0.0, 0.25, 0.6, 1.0] {
            let (v, dv) = quintic_hermite(
                h,
                t,
                [f(a), df(a), ddf(a)],
                [f(a + h), df(a + h), ddf(a + h)],
            );
            let x = a + t * h;
            assert!((v - f(x)).abs() < 1e-13);
            assert!((dv - df(x)).abs() < 1e-12);
        }
    }
}
