//! Weighted geometry of (−1,1): Gauss–Jacobi collocation for ρ = (1−y²)^{2/(p−1)},
//! barycentric differentiation, the norms of H₀ and H = H₀ × L²_ρ, coordinate maps
//! and the Lorentz transform.
//!
//! Besides the main rule the grid carries two auxiliary rules onto which grid
//! fields are interpolated exactly (they are polynomials of degree n−1):
//! a Gauss rule for ρ/(1−y²) used by the singular-weight integrals, and a
//! Legendre rule for unweighted norms.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::error::{invalid, numeric, LabError, Result};
use crate::params::Params;
use crate::quad::{adaptive_integrate, gauss_jacobi, GaussRule, JacobiBasis};

pub type Field = DVector<f64>;

/// Position and velocity components (q₁, q₂) on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StateField {
    pub w1: Field,
    pub w2: Field,
}

impl StateField {
    pub fn new(w1: Field, w2: Field) -> Self {
        debug_assert_eq!(w1.len(), w2.len());
        StateField { w1, w2 }
    }

    pub fn zeros(n: usize) -> Self {
        StateField::new(Field::zeros(n), Field::zeros(n))
    }

    pub fn len(&self) -> usize {
        self.w1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w1.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Self {
        StateField::new(&self.w1 * c, &self.w2 * c)
    }

    /// self + c·other
    pub fn axpy(&self, c: f64, other: &StateField) -> Self {
        StateField::new(&self.w1 + &other.w1 * c, &self.w2 + &other.w2 * c)
    }

    pub fn sub(&self, other: &StateField) -> Self {
        self.axpy(-1.0, other)
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(self.w2.iter()).all(|v| v.is_finite())
    }
}

/// An auxiliary quadrature rule together with the interpolation matrix from grid nodes.
#[derive(Debug, Clone)]
pub struct AuxRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub interp: DMatrix<f64>,
}

impl AuxRule {
    pub fn integrate_values(&self, values: &DVector<f64>) -> f64 {
        values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }
}

#[derive(Debug, Clone)]
pub struct WeightedGrid {
    pub params: Params,
    pub n: usize,
    pub nodes: Field,
    pub rho_weights: Field,
    /// First-derivative collocation matrix.
    pub diff: DMatrix<f64>,
    /// Second-derivative collocation matrix.
    pub diff2: DMatrix<f64>,
    /// £ in expanded form (1−y²)D² − 2(p+1)/(p−1) y D.
    pub op_l: DMatrix<f64>,
    /// Values of the ρ-orthonormal polynomials: `modal[(j,k)] = P_k(y_j)`.
    pub modal: DMatrix<f64>,
    /// Gauss rule for ρ/(1−y²).
    pub lowered: AuxRule,
    /// Values of the ρ-orthonormal polynomials at the lowered nodes.
    pub modal_lowered: DMatrix<f64>,
    /// Gauss–Legendre rule (weight 1).
    pub legendre: AuxRule,
    bary: Vec<f64>,
    basis: JacobiBasis,
}

/// Barycentric weights, scaled to max magnitude 1.
fn barycentric_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut logs = vec![0.0; n];
    let mut signs = vec![1.0; n];
    for j in 0..n {
        for k in 0..n {
            if k != j {
                let d = x[j] - x[k];
                logs[j] -= d.abs().ln();
                if d < 0.0 {
                    signs[j] = -signs[j];
                }
            }
        }
    }
    let mx = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    logs.iter()
        .zip(&signs)
        .map(|(l, s)| s * (l - mx).exp())
        .collect()
}

fn interp_matrix_from(x: &[f64], bary: &[f64], targets: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let mut m = DMatrix::zeros(targets.len(), n);
    for (i, &t) in targets.iter().enumerate() {
        if let Some(j) = x.iter().position(|&xj| xj == t) {
            m[(i, j)] = 1.0;
            continue;
        }
        let mut den = 0.0;
        for j in 0..n {
            let c = bary[j] / (t - x[j]);
            m[(i, j)] = c;
            den += c;
        }
        for j in 0..n {
            m[(i, j)] /= den;
        }
    }
    m
}

impl WeightedGrid {
    pub fn new(n: usize, params: Params) -> Result<Self> {
        params.validate()?;
        if n < 4 {
            return invalid(format!("grid needs n >= 4, got {n}"));
        }
        let alpha = params.alpha();
        let rule = gauss_jacobi(n, alpha)?;
        let x = rule.nodes.clone();
        let bary = barycentric_weights(&x);

        let mut d1 = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    d1[(i, j)] = bary[j] / bary[i] / (x[i] - x[j]);
                }
            }
        }
        for i in 0..n {
            let s: f64 = (0..n).filter(|&j| j != i).map(|j| d1[(i, j)]).sum();
            d1[(i, i)] = -s;
        }
        let mut d2 = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    d2[(i, j)] = 2.0 * d1[(i, j)] * (d1[(i, i)] - 1.0 / (x[i] - x[j]));
                }
            }
        }
        for i in 0..n {
            let s: f64 = (0..n).filter(|&j| j != i).map(|j| d2[(i, j)]).sum();
            d2[(i, i)] = -s;
        }
        let adv = 2.0 * (params.p + 1.0) / (params.p - 1.0);
        let mut op_l = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                op_l[(i, j)] = (1.0 - x[i] * x[i]) * d2[(i, j)] - adv * x[i] * d1[(i, j)];
            }
        }

        let mut modal = DMatrix::zeros(n, n);
        let mut row = vec![0.0; n];
        for (j, &xj) in x.iter().enumerate() {
            rule.basis.eval_into(xj, &mut row);
            for k in 0..n {
                modal[(j, k)] = row[k];
            }
        }

        let lowered_rule = gauss_jacobi(2 * n, alpha - 1.0)?;
        let mut modal_lowered = DMatrix::zeros(2 * n, n);
        for (i, &xi) in lowered_rule.nodes.iter().enumerate() {
            rule.basis.eval_into(xi, &mut row);
            for k in 0..n {
                modal_lowered[(i, k)] = row[k];
            }
        }
        let lowered = aux_rule(&x, &bary, lowered_rule);
        let legendre = aux_rule(&x, &bary, gauss_jacobi(2 * n, 0.0)?);

        Ok(WeightedGrid {
            params,
            n,
            nodes: Field::from_vec(x),
            rho_weights: Field::from_vec(rule.weights.clone()),
            diff: d1,
            diff2: d2,
            op_l,
            modal,
            lowered,
            modal_lowered,
            legendre,
            bary,
            basis: rule.basis,
        })
    }

    pub fn rho(&self, y: f64) -> f64 {
        (1.0 - y * y).powf(self.params.alpha())
    }

    /// ∫ f ρ dy.
    pub fn integrate(&self, f: &Field) -> f64 {
        f.dot(&self.rho_weights)
    }

    /// ∫ g(y) ρ dy for a closed-form g.
    pub fn integrate_fn(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(self.rho_weights.iter())
            .map(|(&y, &w)| w * g(y))
            .sum()
    }

    pub fn dot_rho(&self, a: &Field, b: &Field) -> f64 {
        a.iter()
            .zip(b.iter())
            .zip(self.rho_weights.iter())
            .map(|((x, y), w)| x * y * w)
            .sum()
    }

    pub fn deriv(&self, f: &Field) -> Field {
        &self.diff * f
    }

    /// £f in expanded form.
    pub fn apply_l(&self, f: &Field) -> Field {
        &self.op_l * f
    }

    /// £f in divergence form (1/ρ)(ρ(1−y²)f′)′, the cross-check path.
    pub fn apply_l_divergence(&self, f: &Field) -> Field {
        let df = self.deriv(f);
        let flux = Field::from_iterator(
            self.n,
            self.nodes
                .iter()
                .zip(df.iter())
                .map(|(&y, &d)| self.rho(y) * (1.0 - y * y) * d),
        );
        let dflux = self.deriv(&flux);
        Field::from_iterator(
            self.n,
            self.nodes.iter().zip(dflux.iter()).map(|(&y, &v)| v / self.rho(y)),
        )
    }

    /// Evaluate a closed form at the nodes.
    pub fn field(&self, g: impl Fn(f64) -> f64) -> Field {
        self.nodes.map(g)
    }

    /// Polynomial interpolant of `f` at an arbitrary point.
    pub fn interpolate(&self, f: &Field, t: f64) -> f64 {
        let x = self.nodes.as_slice();
        if let Some(j) = x.iter().position(|&xj| xj == t) {
            return f[j];
        }
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..self.n {
            let c = self.bary[j] / (t - x[j]);
            num += c * f[j];
            den += c;
        }
        num / den
    }

    pub fn interp_matrix(&self, targets: &[f64]) -> DMatrix<f64> {
        interp_matrix_from(self.nodes.as_slice(), &self.bary, targets)
    }

    /// Coefficients of `f` in the ρ-orthonormal basis (exact for degree < n).
    pub fn to_modal(&self, f: &Field) -> Field {
        let wf = f.component_mul(&self.rho_weights);
        self.modal.tr_mul(&wf)
    }

    pub fn from_modal(&self, c: &Field) -> Field {
        &self.modal * c
    }

    /// ∫ f ρ/(1−y²) dy for a grid field.
    pub fn integrate_lowered(&self, f: &Field) -> f64 {
        self.lowered.integrate_values(&(&self.lowered.interp * f))
    }

    /// ∫ g ρ/(1−y²) dy for a closed form g.
    pub fn integrate_lowered_fn(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.lowered
            .nodes
            .iter()
            .zip(&self.lowered.weights)
            .map(|(&y, &w)| w * g(y))
            .sum()
    }

    /// ∫ f dy (unweighted) for a grid field.
    pub fn integrate_unweighted(&self, f: &Field) -> f64 {
        self.legendre.integrate_values(&(&self.legendre.interp * f))
    }

    /// Orthonormal basis polynomials evaluated at an arbitrary point.
    pub fn basis_at(&self, y: f64, out: &mut [f64]) {
        self.basis.eval_into(y, out)
    }

    pub fn check_field(&self, f: &Field) -> Result<()> {
        if f.len() != self.n {
            return invalid(format!("field length {} != grid size {}", f.len(), self.n));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return numeric("non-finite field value");
        }
        Ok(())
    }

    pub fn norm_l2rho(&self, f: &Field) -> f64 {
        self.dot_rho(f, f).max(0.0).sqrt()
    }

    pub fn norm_lp1rho(&self, f: &Field) -> f64 {
        let e = self.params.p + 1.0;
        self.integrate(&f.map(|v| v.abs().powf(e))).powf(1.0 / e)
    }

    /// ∫ (f′² (1−y²) + f²) ρ.
    pub fn h0_sq(&self, f: &Field) -> f64 {
        let df = self.deriv(f);
        let mut acc = 0.0;
        for j in 0..self.n {
            let y = self.nodes[j];
            acc += self.rho_weights[j] * (df[j] * df[j] * (1.0 - y * y) + f[j] * f[j]);
        }
        acc
    }

    pub fn norm_h0(&self, f: &Field) -> f64 {
        self.h0_sq(f).sqrt()
    }

    pub fn norm_h(&self, q: &StateField) -> f64 {
        (self.h0_sq(&q.w1) + self.dot_rho(&q.w2, &q.w2)).sqrt()
    }

    /// Checked variants raising numeric-error on non-finite input.
    pub fn try_norm_h(&self, q: &StateField) -> Result<f64> {
        self.check_field(&q.w1)?;
        self.check_field(&q.w2)?;
        Ok(self.norm_h(q))
    }

    pub fn try_norm_h0(&self, f: &Field) -> Result<f64> {
        self.check_field(f)?;
        Ok(self.norm_h0(f))
    }

    /// ‖w‖_{H¹(−1,1)} + ‖v‖_{L²(−1,1)} with unweighted norms.
    pub fn unweighted_norm(&self, q: &StateField) -> f64 {
        let dw = self.deriv(&q.w1);
        let a = self.integrate_unweighted(&dw.map(|v| v * v))
            + self.integrate_unweighted(&q.w1.map(|v| v * v));
        let b = self.integrate_unweighted(&q.w2.map(|v| v * v));
        a.max(0.0).sqrt() + b.max(0.0).sqrt()
    }

    /// Random smooth field: combination of the first `modes` orthonormal polynomials
    /// with coefficients uniform in [−1, 1] scaled by 1/(k+1).
    pub fn random_smooth<R: Rng>(&self, rng: &mut R, modes: usize) -> Field {
        let m = modes.min(self.n);
        let mut c = Field::zeros(self.n);
        for k in 0..m {
            c[k] = rng.gen_range(-1.0..1.0) / (k as f64 + 1.0);
        }
        self.from_modal(&c)
    }

    pub fn random_state<R: Rng>(&self, rng: &mut R, modes: usize) -> StateField {
        let w1 = self.random_smooth(rng, modes);
        let w2 = self.random_smooth(rng, modes);
        StateField::new(w1, w2)
    }
}

fn aux_rule(x: &[f64], bary: &[f64], rule: GaussRule) -> AuxRule {
    let interp = interp_matrix_from(x, bary, &rule.nodes);
    AuxRule {
        nodes: rule.nodes,
        weights: rule.weights,
        interp,
    }
}

pub fn make_grid(n: usize, params: Params) -> Result<WeightedGrid> {
    WeightedGrid::new(n, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    /// α + 1 − β > 0: I(d) bounded.
    Bounded,
    /// α + 1 − β = 0: I(d) ~ |log(1−d²)|.
    Logarithmic,
    /// α + 1 − β < 0: I(d)(1−d²)^{β−α−1} bounded.
    Singular,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct IntegralEntry {
    pub value: f64,
    pub regime: Regime,
    /// value normalised by the regime's predicted growth.
    pub normalized: f64,
}

/// I(d) = ∫ (1−y²)^α (1+dy)^{−β} dy.
pub fn integral_table(alpha: f64, beta: f64, d: f64) -> Result<IntegralEntry> {
    if !(alpha > -1.0) {
        return invalid(format!("alpha must exceed -1, got {alpha}"));
    }
    if !(d.abs() < 1.0) {
        return invalid(format!("|d| must be < 1, got {d}"));
    }
    let f = |y: f64| (1.0 - y * y).powf(alpha) / (1.0 + d * y).powf(beta);
    // geometric cuts toward the endpoint where 1+dy is smallest
    let e = 1.0 - d.abs();
    let side = if d > 0.0 { -1.0 } else { 1.0 };
    let mut cuts = vec![-1.0, 1.0];
    let mut gap = 10.0 * e;
    while gap < 1.0 {
        cuts.push(side * (1.0 - gap));
        gap *= 10.0;
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rough = adaptive_integrate(&f, -1.0, 1.0, 1e-6).unwrap_or(1.0).abs().max(1e-300);
    let mut value = 0.0;
    for w in cuts.windows(2) {
        value += adaptive_integrate(&f, w[0], w[1], 1e-12 * rough)?;
    }
    let g = alpha + 1.0 - beta;
    let x = 1.0 - d * d;
    let (regime, normalized) = if g.abs() < 1e-12 {
        (Regime::Logarithmic, value / x.ln().abs().max(1.0))
    } else if g > 0.0 {
        (Regime::Bounded, value)
    } else {
        (Regime::Singular, value * x.powf(beta - alpha - 1.0))
    };
    Ok(IntegralEntry {
        value,
        regime,
        normalized,
    })
}

#[derive(Debug, Clone)]
pub struct LorentzResult {
    pub state: StateField,
    /// −log((1+dY)/√(1−d²)) at each node: the similarity-time offset of the slice.
    pub time_offsets: Field,
}

/// W = τ_d(w) at a fixed slice: W(Y) = (1−d²)^{1/(p−1)}(1+dY)^{−2/(p−1)} w((Y+d)/(1+dY)).
pub fn lorentz_transform(q: &StateField, d: f64, grid: &WeightedGrid) -> Result<LorentzResult> {
    if !(d.abs() < 1.0) {
        return invalid(format!("|d| must be < 1, got {d}"));
    }
    let p = grid.params.p;
    let mapped: Vec<f64> = grid.nodes.iter().map(|&y| (y + d) / (1.0 + d * y)).collect();
    let m = grid.interp_matrix(&mapped);
    let pref = grid.field(|y| (1.0 - d * d).powf(1.0 / (p - 1.0)) * (1.0 + d * y).powf(-2.0 / (p - 1.0)));
    let w1 = (&m * &q.w1).component_mul(&pref);
    let w2 = (&m * &q.w2).component_mul(&pref);
    let time_offsets = grid.field(|y| -((1.0 + d * y) / (1.0 - d * d).sqrt()).ln());
    Ok(LorentzResult {
        state: StateField::new(w1, w2),
        time_offsets,
    })
}

/// Largest sampled ratio ‖τ_d w‖_{H₀}/‖w‖_{H₀} over random smooth fields.
pub fn lorentz_continuity_constant<R: Rng>(
    d: f64,
    grid: &WeightedGrid,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut c: f64 = 0.0;
    for _ in 0..samples {
        let w = grid.random_smooth(rng, 8);
        let q = StateField::new(w.clone(), Field::zeros(grid.n));
        let t = lorentz_transform(&q, d, grid)?;
        let den = grid.norm_h0(&w);
        if den > 0.0 {
            c = c.max(grid.norm_h0(&t.state.w1) / den);
        }
    }
    if !c.is_finite() {
        return numeric("non-finite Lorentz continuity constant");
    }
    Ok(c)
}

/// (x, t) ↦ (y, s) = ((x−x₀)/(T₀−t), −log(T₀−t)).
pub fn to_similarity(x0: f64, t0: f64, x: f64, t: f64) -> Result<(f64, f64)> {
    if !(t < t0) {
        return invalid(format!("t = {t} must be below T0 = {t0}"));
    }
    let tau = t0 - t;
    Ok(((x - x0) / tau, -tau.ln()))
}

/// (y, s) ↦ (x, t).
pub fn from_similarity(x0: f64, t0: f64, y: f64, s: f64) -> (f64, f64) {
    let tau = (-s).exp();
    (x0 + y * tau, t0 - tau)
}

/// w = (T₀−t)^{2/(p−1)} u.
pub fn scale_u_to_w(u: f64, t0: f64, t: f64, params: &Params) -> Result<f64> {
    if !(t < t0) {
        return invalid(format!("t = {t} must be below T0 = {t0}"));
    }
    Ok((t0 - t).powf(params.scale()) * u)
}

/// Similarity transform of a solution given through (u, u_x, u_t) at (x, t):
/// returns (w, ∂_s w) at (y, s).
pub fn similarity_state(
    u: impl Fn(f64, f64) -> (f64, f64, f64),
    x0: f64,
    t0: f64,
    y: f64,
    s: f64,
    params: &Params,
) -> (f64, f64) {
    let (x, t) = from_similarity(x0, t0, y, s);
    let (uv, ux, ut) = u(x, t);
    let tau = (-s).exp();
    let k = params.scale();
    let w = tau.powf(k) * uv;
    let ws = -k * w + tau.powf(k) * tau * (ut - y * ux);
    (w, ws)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct HardySobolevReport {
    pub h0: f64,
    /// ‖f‖_{L²_{ρ/(1−y²)}}
    pub l2_singular: f64,
    /// ‖f‖_{L^{p+1}_ρ}
    pub lp1: f64,
    /// max over nodes of |f|(1−y²)^{1/(p−1)}
    pub sup_weighted: f64,
    pub ratio_l2_singular: f64,
    pub ratio_lp1: f64,
    pub ratio_sup: f64,
}

pub fn hardy_sobolev_audit(f: &Field, grid: &WeightedGrid) -> Result<HardySobolevReport> {
    let h0 = grid.try_norm_h0(f)?;
    if h0 == 0.0 {
        return Err(LabError::UndefinedRatio("‖f‖_H0 = 0".into()));
    }
    let l2_singular = grid.integrate_lowered(&f.map(|v| v * v)).max(0.0).sqrt();
    let lp1 = grid.norm_lp1rho(f);
    let e = 1.0 / (grid.params.p - 1.0);
    let sup_weighted = f
        .iter()
        .zip(grid.nodes.iter())
        .map(|(v, y)| v.abs() * (1.0 - y * y).powf(e))
        .fold(0.0, f64::max);
    Ok(HardySobolevReport {
        h0,
        l2_singular,
        lp1,
        sup_weighted,
        ratio_l2_singular: l2_singular / h0,
        ratio_lp1: lp1 / h0,
        ratio_sup: sup_weighted / h0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p3() -> Params {
        Params::default()
    }

    #[test]
    fn weights_sum_and_second_moment() {
        let g = make_grid(16, p3()).unwrap();
        assert!((g.rho_weights.sum() - 4.0 / 3.0).abs() < 1e-13);
        assert!((g.integrate_fn(|y| y * y) - 4.0 / 15.0).abs() < 1e-13);
    }

    #[test]
    fn cosine_integral_stable_in_n() {
        let pr = Params::new(2.5, 2.0, true).unwrap();
        let alpha = pr.alpha();
        let oracle = adaptive_integrate(
            &|y: f64| y.cos() * (1.0 - y * y).powf(alpha),
            -1.0,
            1.0,
            1e-14,
        )
        .unwrap();
        for n in [8, 16, 32, 64] {
            let g = make_grid(n, pr).unwrap();
            assert!((g.integrate_fn(f64::cos) - oracle).abs() < 1e-10, "n={n}");
        }
    }

    #[test]
    fn rejects_small_n_and_bad_p() {
        assert!(make_grid(3, p3()).is_err());
        assert!(make_grid(16, Params { p: 0.9, a: 2.0, f_enabled: true }).is_err());
    }

    #[test]
    fn diff_annihilates_constants() {
        let g = make_grid(64, p3()).unwrap();
        for i in 0..g.n {
            let s: f64 = g.diff.row(i).sum();
            assert!(s.abs() <= 1e-10);
        }
    }

    #[test]
    fn norm_examples() {
        let g = make_grid(32, p3()).unwrap();
        let zero = Field::zeros(g.n);
        assert_eq!(g.norm_h0(&zero), 0.0);
        let one = Field::from_element(g.n, 1.0);
        assert!((g.norm_h0(&one) - (4.0f64 / 3.0).sqrt()).abs() < 1e-13);
        let k = Field::from_element(g.n, 2f64.sqrt());
        assert!((g.h0_sq(&k) - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn divergence_form_matches_expanded_form_at_p3() {
        let g = make_grid(32, p3()).unwrap();
        let f = g.field(|y| (0.7 * y).sin() + y.powi(3));
        let a = g.apply_l(&f);
        let b = g.apply_l_divergence(&f);
        assert!((a - b).amax() < 1e-8);
    }

    #[test]
    fn jacobi_polynomials_are_eigenfunctions_of_l() {
        let g = make_grid(24, Params::new(2.5, 2.0, true).unwrap());
        let g = g.unwrap();
        let a = g.params.alpha();
        for k in 0..g.n {
            let col = g.modal.column(k).into_owned();
            let lk = g.apply_l(&col);
            let lam = -(k as f64) * (k as f64 + 2.0 * a + 1.0);
            let err = (lk - &col * lam).amax() / (1.0 + lam.abs());
            assert!(err < 1e-9, "k={k} err={err}");
        }
    }

    #[test]
    fn integral_table_examples() {
        let e = integral_table(1.0, 0.0, 0.7).unwrap();
        assert!((e.value - 4.0 / 3.0).abs() < 1e-10);
        let e = integral_table(1.0, 2.0, 0.0).unwrap();
        assert!((e.value - 4.0 / 3.0).abs() < 1e-10);
        for d in [0.9, 0.99, 0.999, -0.999] {
            let e = integral_table(0.0, 2.0, d).unwrap();
            assert_eq!(e.regime, Regime::Singular);
            assert!((e.value - 2.0 / (1.0 - d * d)).abs() < 1e-9 * e.value, "d={d}");
        }
        assert!(integral_table(-1.0, 1.0, 0.2).is_err());
        assert_eq!(integral_table(1.0, 2.0, 0.5).unwrap().regime, Regime::Logarithmic);
    }

    #[test]
    fn lorentz_examples() {
        let pr = p3();
        let g = make_grid(32, pr).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = g.random_state(&mut rng, 8);
        let t = lorentz_transform(&q, 0.0, &g).unwrap();
        assert!((&t.state.w1 - &q.w1).amax() < 1e-12);
        let k0 = StateField::new(Field::from_element(g.n, pr.kappa0()), Field::zeros(g.n));
        let t = lorentz_transform(&k0, 0.5, &g).unwrap();
        let kap = g.field(|y| pr.kappa0() * (0.75f64).sqrt() / (1.0 + 0.5 * y));
        assert!((&t.state.w1 - kap).amax() < 1e-10);
        assert!(lorentz_transform(&q, 1.0, &g).is_err());
        for d in [0.3, -0.3, 0.8, -0.8] {
            let c = lorentz_continuity_constant(d, &g, 20, &mut rng).unwrap();
            assert!(c.is_finite() && c > 0.0);
        }
    }

    #[test]
    fn similarity_examples() {
        let (y, s) = to_similarity(0.0, 1.0, 0.0, 0.0).unwrap();
        assert_eq!((y, s), (0.0, 0.0));
        assert!(to_similarity(0.0, 1.0, 0.0, 1.0).is_err());
        let pr = p3();
        for t in [0.0f64, 0.5, 0.999] {
            let u = pr.kappa0() * (1.0 - t).powf(-pr.scale());
            let w = scale_u_to_w(u, 1.0, t, &pr).unwrap();
            assert!((w - pr.kappa0()).abs() < 1e-13);
        }
        let k = pr.kappa0();
        let sc = pr.scale();
        let u = move |_x: f64, t: f64| {
            let tau = 1.0 - t;
            (k * tau.powf(-sc), 0.0, k * sc * tau.powf(-sc - 1.0))
        };
        let (w, ws) = similarity_state(u, 0.0, 1.0, 0.3, 4.0, &pr);
        assert!((w - k).abs() < 1e-12 && ws.abs() < 1e-12);
    }

    #[test]
    fn hardy_sobolev_examples() {
        let g = make_grid(32, p3()).unwrap();
        let one = Field::from_element(g.n, 1.0);
        let r = hardy_sobolev_audit(&one, &g).unwrap();
        assert!((r.l2_singular * r.l2_singular - 2.0).abs() < 1e-12);
        let y = g.nodes.clone();
        let r = hardy_sobolev_audit(&y, &g).unwrap();
        assert!(r.ratio_lp1.is_finite() && r.ratio_sup.is_finite());
        assert!(hardy_sobolev_audit(&Field::zeros(g.n), &g).is_err());
    }
}
