//! The linearized operator L_d around κ(d,·), its two non-negative modes, the
//! adjoint modes, the projections π_λ and the quadratic form φ_d.
//!
//! The adjoint first component W_{λ,1} solves (−£+1)W_{λ,1} = g_λ. Since £ is
//! diagonal in the ρ-orthonormal Jacobi basis (eigenvalue −k(k+2α+1) on P_k),
//! the Galerkin solve is a diagonal scaling of the moments ⟨g_λ, P_k⟩_ρ. The
//! 1/(1−y²) part of g_λ is absorbed into the weight of the lowered rule.
//! For the same reason π_λ(q) = c_λ∫(g_λ q₁ + W̃_{λ,2} q₂)ρ, with no truncation of W_{λ,1}.

use rand::Rng;
use serde::Serialize;

use crate::error::{invalid, numeric, LabError, Result};
use crate::grid::{Field, StateField, WeightedGrid};
use crate::params::Params;

/// κ(d,·) on the grid.
pub fn kappa_d(d: f64, grid: &WeightedGrid) -> Result<Field> {
    if !(d.abs() < 1.0) {
        return invalid(format!("|d| must be < 1, got {d}"));
    }
    let pr = grid.params;
    Ok(grid.field(|y| pr.kappa(d, y)))
}

/// ψ(d,·) = pκ^{p−1} − 2(p+1)/(p−1)², evaluated from κ.
pub fn psi_from_kappa(kappa: &Field, params: &Params) -> Field {
    kappa.map(|k| params.p * k.powf(params.p - 1.0) - params.c0())
}

/// Stationarity residual ‖£κ − 2(p+1)/(p−1)²κ + κ^p‖_{L²_ρ}.
pub fn stationarity_residual(d: f64, grid: &WeightedGrid) -> Result<f64> {
    let pr = grid.params;
    let k = kappa_d(d, grid)?;
    let r = grid.apply_l(&k) - &k * pr.c0() + k.map(|v| v.powf(pr.p));
    Ok(grid.norm_l2rho(&r))
}

/// L_d q = (q₂, £q₁ + ψq₁ − (p+3)/(p−1)q₂ − 2y∂_y q₂).
pub fn apply_ld_with_psi(q: &StateField, psi: &Field, grid: &WeightedGrid) -> StateField {
    let c = grid.params.damping();
    let dq2 = grid.deriv(&q.w2);
    let mut second = grid.apply_l(&q.w1) + psi.component_mul(&q.w1) - &q.w2 * c;
    for j in 0..grid.n {
        second[j] -= 2.0 * grid.nodes[j] * dq2[j];
    }
    StateField::new(q.w2.clone(), second)
}

pub fn apply_ld(q: &StateField, d: f64, grid: &WeightedGrid) -> Result<StateField> {
    let psi = psi_from_kappa(&kappa_d(d, grid)?, &grid.params);
    Ok(apply_ld_with_psi(q, &psi, grid))
}

/// Υ(q, r) = ∫(q₁′r₁′(1−y²) + q₁r₁ + q₂r₂)ρ.
pub fn inner_upsilon(q: &StateField, r: &StateField, grid: &WeightedGrid) -> f64 {
    let dq = grid.deriv(&q.w1);
    let dr = grid.deriv(&r.w1);
    let mut acc = 0.0;
    for j in 0..grid.n {
        let y = grid.nodes[j];
        acc += grid.rho_weights[j]
            * (dq[j] * dr[j] * (1.0 - y * y) + q.w1[j] * r.w1[j] + q.w2[j] * r.w2[j]);
    }
    acc
}

/// Υ(q, r) = ∫(q₁(−£r₁ + r₁) + q₂r₂)ρ with £ by collocation.
pub fn inner_upsilon_l_form(q: &StateField, r: &StateField, grid: &WeightedGrid) -> f64 {
    let lr = grid.apply_l(&r.w1);
    grid.dot_rho(&q.w1, &(&r.w1 - lr)) + grid.dot_rho(&q.w2, &r.w2)
}

/// Closed-form eigenfields (61).
pub fn eigen_f1(d: f64, grid: &WeightedGrid) -> StateField {
    let pr = grid.params;
    let e = pr.alpha() + 1.0;
    let c = (1.0 - d * d).powf(pr.p / (pr.p - 1.0));
    let v = grid.field(|y| c * (1.0 + d * y).powf(-e));
    StateField::new(v.clone(), v)
}

pub fn eigen_f0(d: f64, grid: &WeightedGrid) -> StateField {
    let pr = grid.params;
    let e = pr.alpha() + 1.0;
    let c = (1.0 - d * d).powf(1.0 / (pr.p - 1.0));
    let v = grid.field(|y| c * (y + d) * (1.0 + d * y).powf(-e));
    StateField::new(v, Field::zeros(grid.n))
}

/// Unnormalized W̃_{λ,2}(y), its derivative, and the Galerkin right side pieces at y.
struct AdjointData {
    lambda: f64,
    d: f64,
    e: f64,
}

impl AdjointData {
    /// (W̃₂, W̃₂′)
    fn w2(&self, y: f64) -> (f64, f64) {
        let (d, e) = (self.d, self.e);
        let b = 1.0 + d * y;
        let be = b.powf(-e);
        if self.lambda == 1.0 {
            let v = (1.0 - y * y) * be;
            let dv = -2.0 * y * be - e * d * (1.0 - y * y) * be / b;
            (v, dv)
        } else {
            let v = (y + d) * be;
            let dv = be - e * d * (y + d) * be / b;
            (v, dv)
        }
    }

    /// (1−y²)·g_λ(y), smooth on [−1, 1].
    fn g_times_1my2(&self, y: f64, params: &Params) -> f64 {
        let (r2, dr2) = self.w2(y);
        let c = params.damping();
        ((self.lambda - c) * r2 - 2.0 * y * dr2) * (1.0 - y * y) + 8.0 / (params.p - 1.0) * r2
    }
}

#[derive(Debug, Clone)]
pub struct AdjointSolution {
    /// W_λ with the normalization constant applied.
    pub w: StateField,
    pub c_lambda: f64,
    /// Condition number of the diagonal Galerkin system.
    pub condition: f64,
    /// Row vectors with π_λ(q) = a·q₁ + b·q₂ for grid fields.
    proj_a: Field,
    proj_b: Field,
}

/// W_λ for λ ∈ {0, 1}, normalized so that Υ(W_λ, F_λ) = 1.
pub fn solve_adjoint(d: f64, lambda: u8, grid: &WeightedGrid) -> Result<AdjointSolution> {
    if !(d.abs() < 1.0) {
        return invalid(format!("|d| must be < 1, got {d}"));
    }
    if lambda > 1 {
        return invalid(format!("λ must be 0 or 1, got {lambda}"));
    }
    let pr = grid.params;
    let n = grid.n;
    let alpha = pr.alpha();
    let data = AdjointData {
        lambda: lambda as f64,
        d,
        e: alpha + 1.0,
    };
    let low = &grid.lowered;
    // moments ⟨g, P_k⟩_ρ = Σ w_i^low (1−y_i²)g(y_i) P_k(y_i)
    let gw = Field::from_iterator(
        low.nodes.len(),
        low.nodes
            .iter()
            .zip(&low.weights)
            .map(|(&y, &w)| w * data.g_times_1my2(y, &pr)),
    );
    let moments = grid.modal_lowered.tr_mul(&gw);
    let diag: Vec<f64> = (0..n)
        .map(|k| 1.0 + k as f64 * (k as f64 + 2.0 * alpha + 1.0))
        .collect();
    let coeffs = Field::from_iterator(n, (0..n).map(|k| moments[k] / diag[k]));
    let w1 = grid.from_modal(&coeffs);
    let w2 = grid.field(|y| data.w2(y).0);
    // q₁ ↦ ∫ g q₁ ρ through the lowered rule and the interpolation matrix
    let a = low.interp.tr_mul(&gw);
    let b = w2.component_mul(&grid.rho_weights);

    let f = if lambda == 1 {
        eigen_f1(d, grid)
    } else {
        eigen_f0(d, grid)
    };
    let raw = a.dot(&f.w1) + b.dot(&f.w2);
    if !(raw.is_finite() && raw.abs() > 1e-300) {
        return numeric(format!("adjoint normalization Υ(W̃, F) = {raw:e} at d = {d}"));
    }
    let c = 1.0 / raw;
    Ok(AdjointSolution {
        w: StateField::new(w1 * c, w2 * c),
        c_lambda: c,
        condition: diag[n - 1] / diag[0],
        proj_a: a * c,
        proj_b: b * c,
    })
}

#[derive(Debug, Clone)]
pub struct SpectralPack {
    pub d: f64,
    pub params: Params,
    pub kappa: Field,
    pub psi: Field,
    pub f1: StateField,
    pub f0: StateField,
    pub w1: StateField,
    pub w0: StateField,
    pub c1: f64,
    pub c0: f64,
    adj1: AdjointSolution,
    adj0: AdjointSolution,
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub alpha1: f64,
    pub alpha0: f64,
    pub q_minus: StateField,
    pub alpha_minus: f64,
    /// φ_d(q₋, q₋) before clamping.
    pub phi_minus: f64,
}

impl SpectralPack {
    pub fn new(d: f64, grid: &WeightedGrid) -> Result<Self> {
        let kappa = kappa_d(d, grid)?;
        let psi = psi_from_kappa(&kappa, &grid.params);
        let adj1 = solve_adjoint(d, 1, grid)?;
        let adj0 = solve_adjoint(d, 0, grid)?;
        Ok(SpectralPack {
            d,
            params: grid.params,
            kappa,
            psi,
            f1: eigen_f1(d, grid),
            f0: eigen_f0(d, grid),
            w1: adj1.w.clone(),
            w0: adj0.w.clone(),
            c1: adj1.c_lambda,
            c0: adj0.c_lambda,
            adj1,
            adj0,
        })
    }

    pub fn pi1(&self, q: &StateField) -> f64 {
        self.adj1.proj_a.dot(&q.w1) + self.adj1.proj_b.dot(&q.w2)
    }

    pub fn pi0(&self, q: &StateField) -> f64 {
        self.adj0.proj_a.dot(&q.w1) + self.adj0.proj_b.dot(&q.w2)
    }

    /// [[Υ(W₀,F₀), Υ(W₀,F₁)], [Υ(W₁,F₀), Υ(W₁,F₁)]]
    pub fn biorthogonality(&self) -> [[f64; 2]; 2] {
        [
            [self.pi0(&self.f0), self.pi0(&self.f1)],
            [self.pi1(&self.f0), self.pi1(&self.f1)],
        ]
    }

    pub fn apply_ld(&self, q: &StateField, grid: &WeightedGrid) -> StateField {
        apply_ld_with_psi(q, &self.psi, grid)
    }

    /// (‖L_dF₁ − F₁‖_H, ‖L_dF₀‖_H)
    pub fn eigen_residuals(&self, grid: &WeightedGrid) -> (f64, f64) {
        let r1 = self.apply_ld(&self.f1, grid).sub(&self.f1);
        let r0 = self.apply_ld(&self.f0, grid);
        (grid.norm_h(&r1), grid.norm_h(&r0))
    }

    /// φ_d in the derivative form ∫(−ψq₁r₁ + q₁′r₁′(1−y²) + q₂r₂)ρ.
    pub fn bilinear_phi(&self, q: &StateField, r: &StateField, grid: &WeightedGrid) -> f64 {
        let dq = grid.deriv(&q.w1);
        let dr = grid.deriv(&r.w1);
        let mut acc = 0.0;
        for j in 0..grid.n {
            let y = grid.nodes[j];
            acc += grid.rho_weights[j]
                * (-self.psi[j] * q.w1[j] * r.w1[j]
                    + dq[j] * dr[j] * (1.0 - y * y)
                    + q.w2[j] * r.w2[j]);
        }
        acc
    }

    /// φ_d in the operator form ∫(−q₁(£r₁ + ψr₁) + q₂r₂)ρ.
    pub fn bilinear_phi_l_form(&self, q: &StateField, r: &StateField, grid: &WeightedGrid) -> f64 {
        let inner = grid.apply_l(&r.w1) + self.psi.component_mul(&r.w1);
        -grid.dot_rho(&q.w1, &inner) + grid.dot_rho(&q.w2, &r.w2)
    }

    /// Both sides of φ_d(q, L_d q) = −(4/(p−1))∫q₂²ρ/(1−y²).
    pub fn dissipation_identity(&self, q: &StateField, grid: &WeightedGrid) -> (f64, f64) {
        let lhs = self.bilinear_phi(q, &self.apply_ld(q, grid), grid);
        let rhs = -4.0 / (self.params.p - 1.0) * grid.integrate_lowered(&q.w2.map(|v| v * v));
        (lhs, rhs)
    }

    pub fn project(&self, q: &StateField, grid: &WeightedGrid) -> Result<Decomposition> {
        let alpha1 = self.pi1(q);
        let alpha0 = self.pi0(q);
        let q_minus = q.axpy(-alpha1, &self.f1).axpy(-alpha0, &self.f0);
        let phi_minus = self.bilinear_phi(&q_minus, &q_minus, grid);
        let nrm2 = grid.norm_h(&q_minus).powi(2);
        let slack = 1e-8 * nrm2;
        if phi_minus < -slack {
            return Err(LabError::Coercivity {
                value: phi_minus,
                slack,
            });
        }
        Ok(Decomposition {
            alpha1,
            alpha0,
            q_minus,
            alpha_minus: phi_minus.max(0.0).sqrt(),
            phi_minus,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NormEquivalenceReport {
    pub samples: usize,
    pub skipped: usize,
    /// extremes of ‖q₋‖_H / α₋
    pub minus_low: f64,
    pub minus_high: f64,
    /// extremes of ‖q‖_H / (|α₁| + α₋)
    pub full_low: f64,
    pub full_high: f64,
}

impl NormEquivalenceReport {
    pub fn all_finite_positive(&self) -> bool {
        [self.minus_low, self.minus_high, self.full_low, self.full_high]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
    }
}

/// Ratio extremes over random states; `extra` samples are included as given.
pub fn norm_equivalence_audit<R: Rng>(
    pack: &SpectralPack,
    grid: &WeightedGrid,
    n_samples: usize,
    extra: &[StateField],
    rng: &mut R,
) -> Result<NormEquivalenceReport> {
    if n_samples < 10 {
        return invalid("norm equivalence audit needs at least 10 samples");
    }
    let mut rep = NormEquivalenceReport {
        samples: 0,
        skipped: 0,
        minus_low: f64::INFINITY,
        minus_high: 0.0,
        full_low: f64::INFINITY,
        full_high: 0.0,
    };
    let mut states: Vec<StateField> = extra.to_vec();
    for _ in 0..n_samples {
        states.push(grid.random_state(rng, 12));
    }
    for q in &states {
        let nq = grid.norm_h(q);
        if nq == 0.0 {
            rep.skipped += 1;
            continue;
        }
        let dec = pack.project(q, grid)?;
        let nm = grid.norm_h(&dec.q_minus);
        if dec.alpha_minus > 0.0 && nm > 1e-12 * nq {
            let r = nm / dec.alpha_minus;
            rep.minus_low = rep.minus_low.min(r);
            rep.minus_high = rep.minus_high.max(r);
        }
        let r = nq / (dec.alpha1.abs() + dec.alpha_minus);
        rep.full_low = rep.full_low.min(r);
        rep.full_high = rep.full_high.max(r);
        rep.samples += 1;
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const DS: [f64; 5] = [0.0, 0.5, -0.5, 0.9, -0.9];

    fn grid(n: usize) -> WeightedGrid {
        make_grid(n, Params::default()).unwrap()
    }

    #[test]
    fn kappa_examples() {
        let g = grid(64);
        let k = kappa_d(0.0, &g).unwrap();
        assert!(k.iter().all(|&v| (v - 2f64.sqrt()).abs() < 1e-15));
        let k = kappa_d(0.7, &g).unwrap();
        let want = 2f64.sqrt() * (1.0 - 0.49f64).sqrt();
        for (j, &y) in g.nodes.iter().enumerate() {
            assert!((k[j] * (1.0 + 0.7 * y) - want).abs() < 1e-14);
        }
        for d in DS {
            assert!(stationarity_residual(d, &g).unwrap() < 1e-6, "d={d}");
        }
        assert!(kappa_d(1.0, &g).is_err());
    }

    #[test]
    fn eigen_residuals_and_biorthogonality() {
        let g = grid(64);
        for d in DS {
            let pack = SpectralPack::new(d, &g).unwrap();
            let (r1, r0) = pack.eigen_residuals(&g);
            assert!(r1 < 1e-6 && r0 < 1e-6, "d={d}: {r1:e} {r0:e}");
            let m = pack.biorthogonality();
            assert!((m[0][0] - 1.0).abs() < 1e-8 && (m[1][1] - 1.0).abs() < 1e-8);
            assert!(m[0][1].abs() < 1e-8 && m[1][0].abs() < 1e-8, "d={d}: {m:?}");
            let zero = StateField::zeros(g.n);
            assert_eq!(grid(64).norm_h(&pack.apply_ld(&zero, &g)), 0.0);
        }
    }

    #[test]
    fn projection_through_adjoint_matches_upsilon_with_w() {
        let g = grid(48);
        let pack = SpectralPack::new(0.4, &g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let q = g.random_state(&mut rng, 16);
            let a = inner_upsilon(&pack.w1, &q, &g);
            assert!((a - pack.pi1(&q)).abs() < 1e-10 * (1.0 + a.abs()));
            let a = inner_upsilon(&pack.w0, &q, &g);
            assert!((a - pack.pi0(&q)).abs() < 1e-10 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn f0_is_the_kappa_direction() {
        let g = grid(32);
        let pr = g.params;
        for d in [0.0, 0.3, -0.8] {
            let f0 = eigen_f0(d, &g);
            for (j, &y) in g.nodes.iter().enumerate() {
                let v = -(pr.p - 1.0) * (1.0 - d * d) * pr.kappa_dd(d, y) / (2.0 * pr.kappa0());
                assert!((f0.w1[j] - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn upsilon_examples() {
        let g = grid(32);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = g.random_state(&mut rng, 10);
        let r = g.random_state(&mut rng, 10);
        assert!((inner_upsilon(&q, &q, &g) - g.norm_h(&q).powi(2)).abs() < 1e-12);
        assert_eq!(inner_upsilon(&q, &r, &g), inner_upsilon(&r, &q, &g));
        let a = inner_upsilon_l_form(&q, &r, &g);
        let b = inner_upsilon_l_form(&r, &q, &g);
        assert!((a - b).abs() < 1e-8);
        assert_eq!(inner_upsilon(&StateField::zeros(g.n), &r, &g), 0.0);
    }

    #[test]
    fn projection_examples() {
        let g = grid(64);
        let pack = SpectralPack::new(0.5, &g).unwrap();
        let dec = pack.project(&pack.f1, &g).unwrap();
        assert!((dec.alpha1 - 1.0).abs() < 1e-8 && dec.alpha0.abs() < 1e-8);
        assert!(g.norm_h(&dec.q_minus) < 1e-7);
        let dec = pack.project(&StateField::zeros(g.n), &g).unwrap();
        assert_eq!((dec.alpha1, dec.alpha0, dec.alpha_minus), (0.0, 0.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let q = g.random_state(&mut rng, 10);
            let dec = pack.project(&q, &g).unwrap();
            let back = pack.f1.scaled(dec.alpha1).axpy(dec.alpha0, &pack.f0).axpy(1.0, &dec.q_minus);
            assert!(g.norm_h(&back.sub(&q)) < 1e-10);
            assert!(pack.pi1(&dec.q_minus).abs() < 1e-9 && pack.pi0(&dec.q_minus).abs() < 1e-9);
        }
    }

    #[test]
    fn bilinear_form_checks() {
        let g = grid(64);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for d in DS {
            let pack = SpectralPack::new(d, &g).unwrap();
            let mut cmax: f64 = 0.0;
            for _ in 0..20 {
                let q = g.random_state(&mut rng, 10);
                let r = g.random_state(&mut rng, 10);
                let a = pack.bilinear_phi(&q, &r, &g);
                let b = pack.bilinear_phi_l_form(&q, &r, &g);
                assert!((a - b).abs() < 1e-8 * (1.0 + a.abs()));
                cmax = cmax.max(a.abs() / (g.norm_h(&q) * g.norm_h(&r)));
                let qm = pack.project(&q, &g).unwrap().q_minus;
                let (lhs, rhs) = pack.dissipation_identity(&qm, &g);
                assert!((lhs - rhs).abs() < 1e-6 * (1.0 + rhs.abs()), "d={d}: {lhs} {rhs}");
            }
            assert!(cmax.is_finite() && cmax < 100.0);
        }
    }

    #[test]
    fn adjoint_norms_bounded_across_d() {
        let g = grid(64);
        let norms: Vec<f64> = DS
            .iter()
            .map(|&d| {
                let p = SpectralPack::new(d, &g).unwrap();
                g.norm_h(&p.w1).max(g.norm_h(&p.w0))
            })
            .collect();
        assert!(norms.iter().all(|v| v.is_finite() && *v < 1e3), "{norms:?}");
    }

    #[test]
    fn norm_equivalence() {
        let g = grid(48);
        let pack = SpectralPack::new(0.0, &g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let extra = [StateField::zeros(g.n), pack.f1.clone()];
        let rep = norm_equivalence_audit(&pack, &g, 100, &extra, &mut rng).unwrap();
        assert_eq!(rep.skipped, 1);
        assert!(rep.all_finite_positive(), "{rep:?}");
        assert!(norm_equivalence_audit(&pack, &g, 5, &[], &mut rng).is_err());
    }
}
