//! Tracking of the modulation parameter d(s) through π₀^{d}(q) = 0, the
//! decomposition of q, and the quantities A, B, f₀ built from it.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{invalid, LabError, Result};
use crate::evolve::{eval_perturbation_terms, Trajectory};
use crate::grid::{StateField, WeightedGrid};
use crate::profile::{PhiProfile, TiltedProfile};
use crate::spectral::SpectralPack;

/// |d| beyond this is treated as saturation.
pub const D_SATURATION: f64 = 0.9999;
pub const DEFAULT_ETA1: f64 = 0.05;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ModulationOptions {
    /// Root tolerance on |Φ|.
    pub tol: f64,
    /// Largest admissible ‖v − w̄(d_init)‖_H.
    pub gate: f64,
    pub max_newton: usize,
    /// Sign of the profile: +1 or −1.
    pub omega: f64,
}

impl Default for ModulationOptions {
    fn default() -> Self {
        ModulationOptions {
            tol: 1e-12,
            gate: 0.2,
            max_newton: 30,
            omega: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModulationSolve {
    pub d: f64,
    pub iterations: usize,
    pub used_bisection: bool,
    /// ∂_θΦ sampled along the solve.
    pub dphi_dtheta: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ModulationPoint {
    pub s: f64,
    pub d: f64,
    pub theta: f64,
    pub alpha1: f64,
    pub alpha0: f64,
    pub alpha_minus: f64,
    pub a: f64,
    pub b: f64,
    pub r_minus: f64,
    pub f0: f64,
    /// ∫q₁q₂ρ
    pub q12: f64,
    pub q_norm_h: f64,
    pub newton_iters: usize,
}

pub struct Modulator<'a> {
    pub grid: &'a WeightedGrid,
    pub profile: Arc<PhiProfile>,
    pub options: ModulationOptions,
}

impl<'a> Modulator<'a> {
    pub fn new(grid: &'a WeightedGrid, profile: Arc<PhiProfile>, options: ModulationOptions) -> Result<Self> {
        if options.omega.abs() != 1.0 {
            return invalid(format!("ω must be ±1, got {}", options.omega));
        }
        if !(options.tol > 0.0) {
            return invalid("root tolerance must be positive");
        }
        Ok(Modulator {
            grid,
            profile,
            options,
        })
    }

    fn oriented(&self, v: &StateField) -> StateField {
        if self.options.omega < 0.0 {
            v.scaled(-1.0)
        } else {
            v.clone()
        }
    }

    fn q_of(&self, v: &StateField, d: f64, s: f64) -> Result<StateField> {
        let tp = TiltedProfile::new(self.profile.clone(), d)?;
        Ok(v.sub(&tp.state(self.grid, s)?))
    }

    fn phi_oriented(&self, v: &StateField, d: f64, s: f64) -> Result<f64> {
        let pack = SpectralPack::new(d, self.grid)?;
        Ok(pack.pi0(&self.q_of(v, d, s)?))
    }

    /// Φ(v, d, s) = π₀^d(ωv − w̄(d,·,s)).
    pub fn phi(&self, v: &StateField, d: f64, s: f64) -> Result<f64> {
        self.phi_oriented(&self.oriented(v), d, s)
    }

    /// Safeguarded Newton in θ = artanh d with a finite-difference slope,
    /// falling back to bracket expansion and bisection.
    pub fn solve(&self, v: &StateField, s: f64, d_init: f64) -> Result<ModulationSolve> {
        if !(d_init.abs() < 1.0) {
            return invalid(format!("|d_init| must be < 1, got {d_init}"));
        }
        let v = self.oriented(v);
        let dist = self.grid.try_norm_h(&self.q_of(&v, d_init, s)?)?;
        if dist > self.options.gate {
            return Err(LabError::Modulation {
                s,
                reason: format!("‖v − w̄(d_init)‖_H = {dist:e} exceeds the gate {}", self.options.gate),
            });
        }
        let theta_max = D_SATURATION.atanh();
        let psi = |t: f64| self.phi_oriented(&v, t.tanh(), s);
        let mut out = ModulationSolve {
            d: d_init,
            iterations: 0,
            used_bisection: false,
            dphi_dtheta: Vec::new(),
        };
        let mut theta = d_init.atanh();
        let mut val = psi(theta)?;
        let h = 1e-6;
        for it in 0..self.options.max_newton {
            if val.abs() < self.options.tol {
                out.d = theta.tanh();
                out.iterations = it;
                return Ok(out);
            }
            let slope = (psi(theta + h)? - psi(theta - h)?) / (2.0 * h);
            out.dphi_dtheta.push(slope);
            if !(slope.is_finite() && slope != 0.0) {
                break;
            }
            let step = (-val / slope).clamp(-0.5, 0.5);
            let next = theta + step;
            if next.abs() > theta_max {
                break;
            }
            let nv = psi(next)?;
            if nv.abs() >= val.abs() && it > 2 {
                break;
            }
            theta = next;
            val = nv;
        }
        if val.abs() < self.options.tol {
            out.d = theta.tanh();
            out.iterations = self.options.max_newton;
            return Ok(out);
        }
        // bracket expansion around the warm start
        out.used_bisection = true;
        let t0 = d_init.atanh();
        let f0 = psi(t0)?;
        let mut width = 1e-3;
        let (mut lo, mut hi, mut flo) = (t0, t0, f0);
        let mut found = false;
        while width < 2.0 * theta_max {
            let (a, b) = ((t0 - width).max(-theta_max), (t0 + width).min(theta_max));
            let (fa, fb) = (psi(a)?, psi(b)?);
            if fa.signum() != f0.signum() {
                (lo, hi, flo) = (a, t0, fa);
                found = true;
                break;
            }
            if fb.signum() != f0.signum() {
                (lo, hi, flo) = (t0, b, f0);
                found = true;
                break;
            }
            if a <= -theta_max && b >= theta_max {
                break;
            }
            width *= 2.0;
        }
        if !found {
            let edge = (t0 + width.min(2.0 * theta_max)).min(theta_max).tanh();
            if width >= theta_max {
                return Err(LabError::Saturation(edge));
            }
            return Err(LabError::Modulation {
                s,
                reason: "no sign change of Φ in the expanded bracket".into(),
            });
        }
        for it in 0..200 {
            let mid = 0.5 * (lo + hi);
            let fm = psi(mid)?;
            if fm.abs() < self.options.tol || (hi - lo) < 1e-15 {
                out.d = mid.tanh();
                out.iterations = self.options.max_newton + it;
                if out.d.abs() > D_SATURATION {
                    return Err(LabError::Saturation(out.d));
                }
                return Ok(out);
            }
            if fm.signum() == flo.signum() {
                lo = mid;
                flo = fm;
            } else {
                hi = mid;
            }
        }
        Err(LabError::Modulation {
            s,
            reason: "bisection did not reach the root tolerance".into(),
        })
    }

    /// Decomposition of v at parameter d (normally the output of `solve`).
    pub fn decompose(&self, v: &StateField, s: f64, d: f64, eta1: f64) -> Result<ModulationPoint> {
        let v = self.oriented(v);
        let g = self.grid;
        let tp = TiltedProfile::new(self.profile.clone(), d)?;
        let q = v.sub(&tp.state(g, s)?);
        let pack = SpectralPack::new(d, g)?;
        let dec = pack.project(&q, g)?;
        let terms = eval_perturbation_terms(&q.w1, &tp, s, g)?;
        let r_minus = -g.integrate(&(&terms.big_h + &terms.big_f_hat));
        let a = dec.alpha1 * dec.alpha1;
        let b = dec.alpha_minus * dec.alpha_minus + 2.0 * r_minus;
        let q12 = g.dot_rho(&q.w1, &q.w2);
        Ok(ModulationPoint {
            s,
            d,
            theta: d.atanh(),
            alpha1: dec.alpha1,
            alpha0: dec.alpha0,
            alpha_minus: dec.alpha_minus,
            a,
            b,
            r_minus,
            f0: b + eta1 * q12,
            q12,
            q_norm_h: g.norm_h(&q),
            newton_iters: 0,
        })
    }

    /// d(s) along a trajectory, warm-started from sample to sample.
    pub fn track(&self, traj: &Trajectory, d_init: f64, eta1: f64) -> Result<Vec<ModulationPoint>> {
        let mut d = d_init;
        let mut out = Vec::with_capacity(traj.s.len());
        for (s, v) in traj.s.iter().zip(&traj.states) {
            let sol = self.solve(v, *s, d)?;
            d = sol.d;
            let mut pt = self.decompose(v, *s, d, eta1)?;
            pt.newton_iters = sol.iterations;
            out.push(pt);
        }
        Ok(out)
    }
}

pub fn write_trace_csv<W: Write>(trace: &[ModulationPoint], out: W) -> Result<()> {
    let io = |e: csv::Error| LabError::Io(e.to_string());
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["s", "d", "theta", "alpha1", "alpha_minus", "A", "B", "f0", "q_norm_H"])
        .map_err(io)?;
    for p in trace {
        wtr.serialize((p.s, p.d, p.theta, p.alpha1, p.alpha_minus, p.a, p.b, p.f0, p.q_norm_h))
            .map_err(io)?;
    }
    wtr.flush().map_err(|e| LabError::Io(e.to_string()))
}

#[derive(Debug, Clone, Serialize)]
pub struct InequalityCheck {
    pub name: String,
    /// Fitted constant (None for the literal checks).
    pub constant: Option<f64>,
    /// Largest lhs/rhs on the validated part; holds when ≤ 1.
    pub worst_ratio: f64,
    pub points: usize,
    pub holds: bool,
}

fn ratio(lhs: f64, rhs: f64) -> f64 {
    if lhs <= 0.0 {
        0.0
    } else if rhs <= 0.0 {
        f64::INFINITY
    } else {
        lhs / rhs
    }
}

/// Fit C = max lhs/shape on the first half and check lhs ≤ 2C·shape on the second.
fn fit_and_validate(name: &str, lhs: &[f64], shape: &[f64]) -> InequalityCheck {
    let m = lhs.len();
    let half = m / 2;
    let c = (0..half).map(|k| ratio(lhs[k], shape[k])).fold(0.0, f64::max);
    let worst = (half..m)
        .map(|k| ratio(lhs[k], 2.0 * c * shape[k]))
        .fold(0.0, f64::max);
    InequalityCheck {
        name: name.into(),
        constant: Some(c),
        worst_ratio: worst,
        points: m - half,
        holds: c.is_finite() && worst <= 1.0,
    }
}

fn literal(name: &str, pairs: impl Iterator<Item = (f64, f64)>) -> InequalityCheck {
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for (l, r) in pairs {
        n += 1;
        let excess = if l <= r { ratio(l.max(0.0), r.max(0.0)).min(1.0) } else { ratio(l, r).max(1.0 + 1e-16) };
        worst = worst.max(excess);
    }
    InequalityCheck {
        name: name.into(),
        constant: None,
        worst_ratio: worst,
        points: n,
        holds: worst <= 1.0,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InequalityAudit {
    pub checks: Vec<InequalityCheck>,
    pub s_tail: f64,
}

impl InequalityAudit {
    pub fn get(&self, name: &str) -> Option<&InequalityCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Centred differences at interior samples.
fn centred(s: &[f64], v: &[f64]) -> Vec<f64> {
    (1..s.len() - 1)
        .map(|k| (v[k + 1] - v[k - 1]) / (s[k + 1] - s[k - 1]))
        .collect()
}

pub fn audit_inequalities(trace: &[ModulationPoint], a_exp: f64, s_tail: f64) -> Result<InequalityAudit> {
    if trace.len() < 20 {
        return invalid(format!("inequality audit needs at least 20 points, got {}", trace.len()));
    }
    let s: Vec<f64> = trace.iter().map(|p| p.s).collect();
    let th: Vec<f64> = trace.iter().map(|p| p.theta).collect();
    let a1: Vec<f64> = trace.iter().map(|p| p.alpha1).collect();
    let dth = centred(&s, &th);
    let da1 = centred(&s, &a1);
    let inner = &trace[1..trace.len() - 1];
    let size: Vec<f64> = inner.iter().map(|p| p.a + p.alpha_minus * p.alpha_minus).collect();
    let shape: Vec<f64> = inner
        .iter()
        .zip(&size)
        .map(|(p, m)| m + p.s.powf(-a_exp) * m.sqrt())
        .collect();
    let mut checks = Vec::new();
    // θ′ = d′/(1−d²)
    let lhs: Vec<f64> = dth.iter().map(|v| v.abs()).collect();
    checks.push(fit_and_validate("modulation_speed", &lhs, &shape));
    let lhs: Vec<f64> = da1.iter().zip(inner).map(|(d, p)| (d - p.alpha1).abs()).collect();
    checks.push(fit_and_validate("alpha1_equation", &lhs, &shape));
    let lhs: Vec<f64> = trace.iter().map(|p| p.a).collect();
    let shape2: Vec<f64> = trace
        .iter()
        .map(|p| p.alpha_minus * p.alpha_minus + p.s.powf(-(a_exp + 1.0) / 2.0))
        .collect();
    checks.push(fit_and_validate("energy_barrier", &lhs, &shape2));
    // K₀ from both sides of the size equivalence
    let lhs: Vec<f64> = trace
        .iter()
        .map(|p| {
            let (x, y) = (p.q_norm_h * p.q_norm_h, p.a + p.b);
            ratio(x, y).max(ratio(y, x))
        })
        .collect();
    let ones = vec![1.0; trace.len()];
    checks.push(fit_and_validate("size_equivalence", &lhs, &ones));
    let tail: Vec<&ModulationPoint> = trace.iter().filter(|p| p.s >= s_tail).collect();
    if tail.is_empty() {
        return invalid(format!("no samples beyond s_tail = {s_tail}"));
    }
    checks.push(literal("a_le_quarter_b", tail.iter().map(|p| (p.a, 0.25 * p.b))));
    let lower = literal("half_f0_le_b", tail.iter().map(|p| (0.5 * p.f0, p.b)));
    let upper = literal("b_le_two_f0", tail.iter().map(|p| (p.b, 2.0 * p.f0)));
    checks.push(lower);
    checks.push(upper);
    Ok(InequalityAudit { checks, s_tail })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RateKind {
    Exponential,
    Polynomial,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateFit {
    pub kind: RateKind,
    /// μ̂ for the exponential fit, the fixed exponent for the polynomial bound.
    pub exponent: f64,
    pub prefactor: f64,
    pub window: (f64, f64),
    /// Exponential: rms of ‖q‖/fit − 1. Polynomial: largest relative rise of
    /// block maxima of s^{e}‖q‖ (≤ 0 when the envelope does not increase).
    pub residual: f64,
}

/// Decay fit of `norms` over samples with s ∈ [s_lo, s_hi].
pub fn fit_decay(
    s: &[f64],
    norms: &[f64],
    kind: RateKind,
    window: (f64, f64),
    poly_exponent: f64,
) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = s
        .iter()
        .zip(norms)
        .filter(|(t, _)| **t >= window.0 && **t <= window.1)
        .map(|(t, v)| (*t, *v))
        .collect();
    if pts.len() < 4 {
        return invalid("decay fit needs at least four samples in the window");
    }
    if pts.iter().any(|(_, v)| !(*v > 0.0 && v.is_finite())) {
        return Err(LabError::FitRejected("norms must be positive and finite".into()));
    }
    match kind {
        RateKind::Exponential => {
            let n = pts.len() as f64;
            let (mx, my) = pts
                .iter()
                .fold((0.0, 0.0), |(a, b), (t, v)| (a + t / n, b + v.ln() / n));
            let (mut sxy, mut sxx) = (0.0, 0.0);
            for (t, v) in &pts {
                sxy += (t - mx) * (v.ln() - my);
                sxx += (t - mx) * (t - mx);
            }
            let slope = sxy / sxx;
            let icpt = my - slope * mx;
            let resid = (pts
                .iter()
                .map(|(t, v)| (v / (icpt + slope * t).exp() - 1.0).powi(2))
                .sum::<f64>()
                / n)
                .sqrt();
            if !(slope < 0.0) {
                return Err(LabError::FitRejected(format!(
                    "log-norm slope {slope:e} on [{}, {}] is not decaying",
                    window.0, window.1
                )));
            }
            Ok(RateFit {
                kind,
                exponent: -slope,
                prefactor: icpt.exp(),
                window,
                residual: resid,
            })
        }
        RateKind::Polynomial => {
            let scaled: Vec<f64> = pts.iter().map(|(t, v)| t.powf(poly_exponent) * v).collect();
            let blocks = 8.min(scaled.len() / 2).max(2);
            let len = scaled.len() / blocks;
            let maxima: Vec<f64> = (0..blocks)
                .map(|b| {
                    let end = if b + 1 == blocks { scaled.len() } else { (b + 1) * len };
                    scaled[b * len..end].iter().cloned().fold(0.0, f64::max)
                })
                .collect();
            let rise = maxima
                .windows(2)
                .map(|w| w[1] / w[0] - 1.0)
                .fold(f64::NEG_INFINITY, f64::max);
            let sup = scaled.iter().cloned().fold(0.0, f64::max);
            if rise > 1e-9 {
                return Err(LabError::FitRejected(format!(
                    "envelope of s^{poly_exponent}‖q‖ rises by {rise:e} between blocks"
                )));
            }
            Ok(RateFit {
                kind,
                exponent: poly_exponent,
                prefactor: sup,
                window,
                residual: rise,
            })
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ThetaConvergence {
    pub theta_inf: f64,
    pub d_inf: f64,
    /// sup |θ(s) − θ_∞|·weight(s) over the tail.
    pub tail_bound: f64,
    pub weight: String,
}

/// θ_∞ by Aitken extrapolation of three equally spaced tail samples; the tail
/// bound uses e^{μ̂s/2} when `mu_hat` is given, s^{(a+1)/2} otherwise.
pub fn theta_convergence(
    trace: &[ModulationPoint],
    s_tail: f64,
    mu_hat: Option<f64>,
    a_exp: f64,
) -> Result<ThetaConvergence> {
    let tail: Vec<&ModulationPoint> = trace.iter().filter(|p| p.s >= s_tail).collect();
    if tail.len() < 3 {
        return invalid("θ extrapolation needs at least three tail samples");
    }
    let m = tail.len() - 1;
    let k = (m / 2).max(1);
    let (t0, t1, t2) = (tail[m - 2 * k].theta, tail[m - k].theta, tail[m].theta);
    let (d1, d2) = (t1 - t0, t2 - t1);
    let scale = 1e-13 * (1.0 + t2.abs());
    let theta_inf = if (d2 - d1).abs() <= scale || d2.abs() <= scale {
        t2
    } else {
        if d1 * d2 < 0.0 && d2.abs() > 0.5 * d1.abs() {
            return Err(LabError::FitRejected(format!(
                "θ oscillates on the tail (increments {d1:e}, {d2:e})"
            )));
        }
        t2 - d2 * d2 / (d2 - d1)
    };
    let (weight, wfn): (String, Box<dyn Fn(f64) -> f64>) = match mu_hat {
        Some(mu) => (format!("exp({mu}*s/2)"), Box::new(move |s| (0.5 * mu * s).exp())),
        None => {
            let e = (a_exp + 1.0) / 2.0;
            (format!("s^{e}"), Box::new(move |s| s.powf(e)))
        }
    };
    let tail_bound = tail
        .iter()
        .map(|p| (p.theta - theta_inf).abs() * wfn(p.s))
        .fold(0.0, f64::max);
    Ok(ThetaConvergence {
        theta_inf,
        d_inf: theta_inf.tanh(),
        tail_bound,
        weight,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::params::Params;
    use std::sync::OnceLock;

    fn profile() -> Arc<PhiProfile> {
        static P: OnceLock<Arc<PhiProfile>> = OnceLock::new();
        P.get_or_init(|| Arc::new(PhiProfile::for_params(&Params::default()).unwrap()))
            .clone()
    }

    #[test]
    fn exact_profile_is_recovered() {
        let g = make_grid(48, Params::default()).unwrap();
        let m = Modulator::new(&g, profile(), ModulationOptions::default()).unwrap();
        let s = 20.0;
        for d in [0.3, -0.6] {
            let v = TiltedProfile::new(profile(), d).unwrap().state(&g, s).unwrap();
            let sol = m.solve(&v, s, d + 0.02).unwrap();
            assert!((sol.d - d).abs() < 1e-10, "{} {d}", sol.d);
            let pt = m.decompose(&v, s, d, DEFAULT_ETA1).unwrap();
            assert!(pt.q_norm_h < 1e-8 && pt.a < 1e-16 && pt.b.abs() < 1e-14);
        }
        // ω = −1 handles the mirrored profile
        let neg = Modulator::new(
            &g,
            profile(),
            ModulationOptions {
                omega: -1.0,
                ..Default::default()
            },
        )
        .unwrap();
        let v = TiltedProfile::new(profile(), 0.2).unwrap().state(&g, s).unwrap().scaled(-1.0);
        assert!((neg.solve(&v, s, 0.25).unwrap().d - 0.2).abs() < 1e-10);
    }

    #[test]
    fn perturbed_root_matches_scan() {
        let g = make_grid(48, Params::default()).unwrap();
        let m = Modulator::new(&g, profile(), ModulationOptions::default()).unwrap();
        let s = 20.0;
        let pack = SpectralPack::new(0.3, &g).unwrap();
        let v = TiltedProfile::new(profile(), 0.3)
            .unwrap()
            .state(&g, s)
            .unwrap()
            .axpy(1e-3, &pack.f0);
        let sol = m.solve(&v, s, 0.3).unwrap();
        assert!(sol.d != 0.3);
        assert!(sol.dphi_dtheta.iter().all(|v| *v > 0.0 && v.is_finite()));
        // dense scan in θ followed by bisection
        let t0 = 0.3f64.atanh();
        let ts: Vec<f64> = (0..=200).map(|k| t0 - 0.05 + 0.1 * k as f64 / 200.0).collect();
        let vals: Vec<f64> = ts.iter().map(|t| m.phi(&v, t.tanh(), s).unwrap()).collect();
        let k = (0..200).find(|&k| vals[k].signum() != vals[k + 1].signum()).unwrap();
        let (mut lo, mut hi) = (ts[k], ts[k + 1]);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if m.phi(&v, mid.tanh(), s).unwrap().signum() == vals[k].signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((lo.tanh() - sol.d).abs() < 1e-8);
        let pt = m.decompose(&v, s, sol.d, DEFAULT_ETA1).unwrap();
        assert!(pt.alpha0.abs() < 1e-10);
    }

    #[test]
    fn gate_and_argument_errors() {
        let g = make_grid(32, Params::default()).unwrap();
        let m = Modulator::new(&g, profile(), ModulationOptions::default()).unwrap();
        let v = StateField::zeros(g.n);
        assert!(matches!(m.solve(&v, 20.0, 0.0), Err(LabError::Modulation { .. })));
        assert!(m.solve(&v, 20.0, 1.0).is_err());
        assert!(Modulator::new(
            &g,
            profile(),
            ModulationOptions {
                omega: 0.5,
                ..Default::default()
            }
        )
        .is_err());
    }

    fn synthetic_point(s: f64, q: f64) -> ModulationPoint {
        ModulationPoint {
            s,
            d: 0.3,
            theta: 0.3f64.atanh(),
            alpha1: 0.0,
            alpha0: 0.0,
            alpha_minus: q,
            a: 0.0,
            b: q * q,
            r_minus: 0.0,
            f0: q * q,
            q12: 0.0,
            q_norm_h: q,
            newton_iters: 0,
        }
    }

    #[test]
    fn audits_on_trivial_traces() {
        let trace: Vec<ModulationPoint> = (0..30).map(|k| synthetic_point(10.0 + k as f64, 0.0)).collect();
        let audit = audit_inequalities(&trace, 2.0, 20.0).unwrap();
        assert!(audit.checks.iter().all(|c| c.holds), "{:?}", audit.checks);
        assert!(audit_inequalities(&trace[..10], 2.0, 20.0).is_err());
        let th = theta_convergence(&trace, 20.0, None, 2.0).unwrap();
        assert_eq!(th.theta_inf, 0.3f64.atanh());
        assert_eq!(th.tail_bound, 0.0);
    }

    #[test]
    fn decay_fits() {
        let s: Vec<f64> = (0..200).map(|k| 10.0 + 0.1 * k as f64).collect();
        let q: Vec<f64> = s.iter().map(|t| (-0.1 * t).exp()).collect();
        let fit = fit_decay(&s, &q, RateKind::Exponential, (10.0, 30.0), 0.75).unwrap();
        assert!((fit.exponent - 0.1).abs() < 1e-3 && fit.residual < 1e-10);
        let fit = fit_decay(&s, &q, RateKind::Polynomial, (10.0, 30.0), 0.75).unwrap();
        assert!(fit.residual <= 0.0);
        let grow: Vec<f64> = s.iter().map(|t| (0.1 * t).exp()).collect();
        assert!(matches!(
            fit_decay(&s, &grow, RateKind::Exponential, (10.0, 30.0), 0.75),
            Err(LabError::FitRejected(_))
        ));
        let flat: Vec<f64> = s.iter().map(|_| 1.0).collect();
        assert!(fit_decay(&s, &flat, RateKind::Polynomial, (10.0, 30.0), 0.75).is_err());
    }

    #[test]
    fn aitken_on_geometric_sequence() {
        let trace: Vec<ModulationPoint> = (0..40)
            .map(|k| {
                let mut p = synthetic_point(k as f64, 0.0);
                p.theta = 0.5 + 0.1 * (-0.3 * k as f64).exp();
                p
            })
            .collect();
        let th = theta_convergence(&trace, 10.0, Some(0.3), 2.0).unwrap();
        assert!((th.theta_inf - 0.5).abs() < 1e-12);
        assert!(th.tail_bound < 0.1 * (-0.15 * 10.0f64).exp() * 1.01);
    }

    #[test]
    fn csv_header() {
        let mut buf = Vec::new();
        write_trace_csv(&[synthetic_point(1.0, 0.1)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("s,d,theta,alpha1,alpha_minus,A,B,f0,q_norm_H\n"));
    }
}
