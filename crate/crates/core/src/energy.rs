//! Energy functionals: E₀, the perturbed energy E = E₀ + I + J, the Lyapunov
//! candidate H, and audits along trajectories.

use std::io::Write;

use serde::Serialize;

use crate::error::{invalid, LabError, Result};
use crate::evolve::Trajectory;
use crate::grid::{StateField, WeightedGrid};
use crate::nonlinear::Source;
use crate::params::Params;

/// Candidate values scanned for θ in H.
pub const THETA_SCAN: [f64; 4] = [1.0, 10.0, 1e2, 1e3];

/// F(u) = ∫₀^u f. Evaluated as |u|^{p+1}Γ(log u²) with Γ cached on a uniform grid
/// in log u² (so a geometric grid in |u|) and interpolated by quintic Hermite.
pub fn antiderivative_f(u: f64, source: &Source) -> Result<f64> {
    source.antiderivative(u)
}

/// ∫(½v² + ½w′²(1−y²) + (p+1)/(p−1)² w² − |w|^{p+1}/(p+1))ρ.
pub fn e0(q: &StateField, grid: &WeightedGrid) -> f64 {
    let p = grid.params.p;
    let c = (p + 1.0) / ((p - 1.0) * (p - 1.0));
    let dw = grid.deriv(&q.w1);
    let mut acc = 0.0;
    for j in 0..grid.n {
        let (y, w, v) = (grid.nodes[j], q.w1[j], q.w2[j]);
        let dens = 0.5 * v * v + 0.5 * dw[j] * dw[j] * (1.0 - y * y) + c * w * w
            - w.abs().powf(p + 1.0) / (p + 1.0);
        acc += grid.rho_weights[j] * dens;
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyParts {
    pub e0: f64,
    pub i: f64,
    pub j: f64,
    pub e: f64,
}

/// E₀, I = −e^{−2(p+1)s/(p−1)}∫F(e^{2s/(p−1)}w)ρ, J = −s^{−(a+1)/2}∫w∂_s w ρ and their sum.
pub fn e_full(q: &StateField, s: f64, grid: &WeightedGrid, source: &Source) -> Result<EnergyParts> {
    if !(s > 0.0) {
        return invalid(format!("the perturbed energy needs s > 0, got {s}"));
    }
    let pr = grid.params;
    let sc = source.at(s);
    let mut gi = 0.0;
    for j in 0..grid.n {
        gi += grid.rho_weights[j] * sc.big_g(q.w1[j])?;
    }
    let e0 = e0(q, grid);
    let i = -gi;
    let j = -s.powf(-(pr.a + 1.0) / 2.0) * grid.dot_rho(&q.w1, &q.w2);
    Ok(EnergyParts {
        e0,
        i,
        j,
        e: e0 + i + j,
    })
}

fn check_lyapunov_params(pr: &Params, theta: f64) -> Result<()> {
    if !(pr.a > 1.0) {
        return invalid(format!("H is only defined for a > 1, got a = {}", pr.a));
    }
    if !(theta >= 0.0 && theta.is_finite()) {
        return invalid(format!("θ must be non-negative, got {theta}"));
    }
    Ok(())
}

/// H from a precomputed E.
pub fn lyapunov_from_e(e: f64, s: f64, theta: f64, params: &Params) -> f64 {
    let (p, a) = (params.p, params.a);
    ((p + 3.0) / ((a - 1.0) * s.powf((a - 1.0) / 2.0))).exp() * e
        + theta * (-(p + 1.0) * s / (p - 1.0)).exp()
}

/// H = exp((p+3)/((a−1)s^{(a−1)/2}))E + θe^{−(p+1)s/(p−1)}.
pub fn lyapunov_h(
    q: &StateField,
    s: f64,
    theta: f64,
    grid: &WeightedGrid,
    source: &Source,
) -> Result<f64> {
    check_lyapunov_params(&grid.params, theta)?;
    let e = e_full(q, s, grid, source)?.e;
    Ok(lyapunov_from_e(e, s, theta, &grid.params))
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyTrace {
    pub s: Vec<f64>,
    pub e0: Vec<f64>,
    pub i: Vec<f64>,
    pub j: Vec<f64>,
    pub e: Vec<f64>,
    pub h: Vec<f64>,
    pub theta: f64,
    /// Extremes of the unweighted ‖w‖_{H¹} + ‖∂_s w‖_{L²} over the samples.
    pub window: BoundWindow,
}

pub fn energy_trace(
    traj: &Trajectory,
    theta: f64,
    grid: &WeightedGrid,
    source: &Source,
) -> Result<EnergyTrace> {
    check_lyapunov_params(&grid.params, theta)?;
    let mut tr = EnergyTrace {
        s: Vec::new(),
        e0: Vec::new(),
        i: Vec::new(),
        j: Vec::new(),
        e: Vec::new(),
        h: Vec::new(),
        theta,
        window: bound_window(traj, grid)?,
    };
    for (s, q) in traj.s.iter().zip(&traj.states) {
        let parts = e_full(q, *s, grid, source)?;
        tr.s.push(*s);
        tr.e0.push(parts.e0);
        tr.i.push(parts.i);
        tr.j.push(parts.j);
        tr.e.push(parts.e);
        tr.h.push(lyapunov_from_e(parts.e, *s, theta, &grid.params));
    }
    Ok(tr)
}

impl EnergyTrace {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| LabError::Io(e.to_string());
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["s", "E0", "I", "J", "E", "H"]).map_err(io)?;
        for k in 0..self.s.len() {
            wtr.serialize((self.s[k], self.e0[k], self.i[k], self.j[k], self.e[k], self.h[k]))
                .map_err(io)?;
        }
        wtr.flush().map_err(|e| LabError::Io(e.to_string()))
    }
}

/// Fraction of steps k → k+1 with v_{k+1} − v_k ≤ tol(v_k), and the worst increase.
fn step_monotonicity(values: &[f64], tol: impl Fn(f64) -> f64) -> (f64, f64) {
    if values.len() < 2 {
        return (1.0, 0.0);
    }
    let mut good = 0usize;
    let mut worst = f64::NEG_INFINITY;
    for w in values.windows(2) {
        let inc = w[1] - w[0];
        worst = worst.max(inc);
        if inc <= tol(w[0]) {
            good += 1;
        }
    }
    (good as f64 / (values.len() - 1) as f64, worst)
}

#[derive(Debug, Clone, Serialize)]
pub struct E0Monotonicity {
    pub fraction_non_increasing: f64,
    pub worst_increase: f64,
    pub monotone: bool,
}

/// E₀ is non-increasing step to step within 1e−8·(1+|E₀|).
pub fn e0_monotonicity(traj: &Trajectory, grid: &WeightedGrid) -> E0Monotonicity {
    let vals: Vec<f64> = traj.states.iter().map(|q| e0(q, grid)).collect();
    let (frac, worst) = step_monotonicity(&vals, |v| 1e-8 * (1.0 + v.abs()));
    E0Monotonicity {
        fraction_non_increasing: frac,
        worst_increase: worst,
        monotone: frac == 1.0,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityRow {
    pub theta: f64,
    pub fraction_non_increasing: f64,
    pub worst_increase: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityReport {
    pub rows: Vec<MonotonicityRow>,
    /// Smallest scanned θ with every step non-increasing.
    pub theta_all_steps: Option<f64>,
    /// Smallest scanned θ with at least 99% non-increasing steps.
    pub theta_99: Option<f64>,
}

/// Per-step tolerance on H increases.
pub const H_STEP_TOL: f64 = 1e-9;

pub fn monotonicity_audit(
    traj: &Trajectory,
    thetas: &[f64],
    grid: &WeightedGrid,
    source: &Source,
) -> Result<MonotonicityReport> {
    if traj.s.len() < 2 {
        return invalid("monotonicity audit needs at least two samples");
    }
    for &t in thetas {
        check_lyapunov_params(&grid.params, t)?;
    }
    let es: Vec<f64> = traj
        .s
        .iter()
        .zip(&traj.states)
        .map(|(s, q)| Ok(e_full(q, *s, grid, source)?.e))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for &theta in thetas {
        let hs: Vec<f64> = es
            .iter()
            .zip(&traj.s)
            .map(|(e, s)| lyapunov_from_e(*e, *s, theta, &grid.params))
            .collect();
        let (frac, worst) = step_monotonicity(&hs, |_| H_STEP_TOL);
        rows.push(MonotonicityRow {
            theta,
            fraction_non_increasing: frac,
            worst_increase: worst,
        });
    }
    let pick = |min_frac: f64| {
        rows.iter()
            .filter(|r| r.fraction_non_increasing >= min_frac)
            .map(|r| r.theta)
            .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.min(t))))
    };
    Ok(MonotonicityReport {
        theta_all_steps: pick(1.0),
        theta_99: pick(0.99),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundWindow {
    pub min: f64,
    pub max: f64,
}

impl BoundWindow {
    pub fn bounded_below(&self) -> bool {
        self.min > 0.0
    }
}

/// min and max over the samples of ‖w‖_{H¹(−1,1)} + ‖∂_s w‖_{L²(−1,1)}.
pub fn bound_window(traj: &Trajectory, grid: &WeightedGrid) -> Result<BoundWindow> {
    if traj.states.is_empty() {
        return invalid("bound window of an empty trajectory");
    }
    let mut w = BoundWindow {
        min: f64::INFINITY,
        max: 0.0,
    };
    for q in &traj.states {
        let v = grid.unweighted_norm(q);
        w.min = w.min.min(v);
        w.max = w.max.max(v);
    }
    Ok(w)
}
