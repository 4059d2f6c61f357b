//! Time integration of the similarity-variable equation as a first-order system
//! in (w, ∂_s w), and the terms of the equation satisfied by q = w − w̄.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, numeric, LabError, Result};
use crate::grid::{Field, StateField, WeightedGrid};
use crate::nonlinear::{Power, Source};
pub use crate::ode::Control;
use crate::profile::TiltedProfile;
use crate::spectral::{apply_ld_with_psi, kappa_d, psi_from_kappa};

/// Stop when ‖w‖_H exceeds this.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// RK4 with ds = c/n² was stable up to c ≈ 40 (n = 32) and c ≈ 48 (n = 64..128)
/// in a sweep over linearized runs; the default keeps a factor 2 margin.
pub const STABILITY_C: f64 = 24.0;

pub fn stable_ds(n: usize) -> f64 {
    STABILITY_C / (n * n) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolveConfig {
    pub n: usize,
    pub ds: f64,
    pub s0: f64,
    pub s_end: f64,
    /// Record every `stride`-th step (the initial and final states are always kept).
    pub stride: usize,
    /// Order of an optional exponential modal filter applied after each step.
    pub filter_order: Option<u32>,
}

impl EvolveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 16 {
            return invalid(format!("evolution needs n >= 16, got {}", self.n));
        }
        if !(self.ds > 0.0 && self.ds.is_finite()) {
            return invalid(format!("ds must be positive, got {}", self.ds));
        }
        if !(self.s_end > self.s0) {
            return invalid(format!("need s_end > s0, got [{}, {}]", self.s0, self.s_end));
        }
        if self.stride == 0 {
            return invalid("stride must be at least 1");
        }
        Ok(())
    }

    /// Number of RK4 steps; ds is shrunk slightly so that they tile [s0, s_end].
    pub fn steps(&self) -> (usize, f64) {
        let m = ((self.s_end - self.s0) / self.ds - 1e-9).ceil().max(1.0) as usize;
        (m, (self.s_end - self.s0) / m as f64)
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub s: Vec<f64>,
    pub states: Vec<StateField>,
    pub steps: usize,
    pub ds: f64,
    pub max_norm: f64,
}

/// Right side of the system.
pub struct Evolver<'a> {
    pub grid: &'a WeightedGrid,
    pub source: Source,
    power: Power,
}

impl<'a> Evolver<'a> {
    pub fn new(grid: &'a WeightedGrid) -> Self {
        Evolver {
            grid,
            source: Source::new(grid.params),
            power: Power { p: grid.params.p },
        }
    }

    /// (v, £w − 2(p+1)/(p−1)²w + |w|^{p−1}w − (p+3)/(p−1)v − 2y∂_y v + e^{−2ps/(p−1)}f(e^{2s/(p−1)}w)).
    pub fn rhs(&self, q: &StateField, s: f64) -> StateField {
        let g = self.grid;
        let pr = g.params;
        let src = self.source.at(s);
        let lw = g.apply_l(&q.w1);
        let dv = g.deriv(&q.w2);
        let mut out = Field::zeros(g.n);
        for j in 0..g.n {
            let w = q.w1[j];
            out[j] = lw[j] - pr.c0() * w + self.power.k(w) - pr.damping() * q.w2[j]
                - 2.0 * g.nodes[j] * dv[j]
                + src.g(w);
        }
        StateField::new(q.w2.clone(), out)
    }

    pub fn rk4_step(&self, q: &StateField, s: f64, h: f64) -> StateField {
        let k1 = self.rhs(q, s);
        let k2 = self.rhs(&q.axpy(0.5 * h, &k1), s + 0.5 * h);
        let k3 = self.rhs(&q.axpy(0.5 * h, &k2), s + 0.5 * h);
        let k4 = self.rhs(&q.axpy(h, &k3), s + h);
        let incr = k1.axpy(2.0, &k2).axpy(2.0, &k3).axpy(1.0, &k4);
        q.axpy(h / 6.0, &incr)
    }

    fn filter(&self, q: &StateField, order: u32) -> StateField {
        let n = self.grid.n;
        let sigma: Vec<f64> = (0..n)
            .map(|k| (-36.0 * (k as f64 / (n - 1) as f64).powi(2 * order as i32)).exp())
            .collect();
        let apply = |f: &Field| {
            let mut c = self.grid.to_modal(f);
            for k in 0..n {
                c[k] *= sigma[k];
            }
            self.grid.from_modal(&c)
        };
        StateField::new(apply(&q.w1), apply(&q.w2))
    }

    /// RK4 from `initial` over [s0, s_end]; `on_sample` sees every recorded state
    /// and may end the run early. Returns (steps taken, ds, max ‖w‖_H).
    pub fn run_with(
        &self,
        initial: &StateField,
        config: &EvolveConfig,
        on_sample: &mut dyn FnMut(f64, &StateField) -> Result<Control>,
    ) -> Result<(usize, f64, f64)> {
        config.validate()?;
        if config.n != self.grid.n || initial.len() != self.grid.n {
            return invalid("configuration, grid and initial state disagree on n");
        }
        let n0 = self.grid.try_norm_h(initial)?;
        let (m, h) = config.steps();
        let mut q = initial.clone();
        let mut max_norm = n0;
        if on_sample(config.s0, &q)? == Control::Stop {
            return Ok((0, h, max_norm));
        }
        for i in 0..m {
            let s = config.s0 + i as f64 * h;
            let mut next = self.rk4_step(&q, s, h);
            if let Some(order) = config.filter_order {
                next = self.filter(&next, order);
            }
            let s_next = config.s0 + (i + 1) as f64 * h;
            if !next.is_finite() {
                return numeric(format!("non-finite state at s = {s_next}"));
            }
            let nrm = self.grid.norm_h(&next);
            if nrm > DIVERGENCE_THRESHOLD {
                return Err(LabError::Divergence { s: s_next, norm: nrm });
            }
            max_norm = max_norm.max(nrm);
            q = next;
            if ((i + 1) % config.stride == 0 || i + 1 == m) && on_sample(s_next, &q)? == Control::Stop {
                return Ok((i + 1, h, max_norm));
            }
        }
        Ok((m, h, max_norm))
    }

    pub fn run(&self, initial: &StateField, config: &EvolveConfig) -> Result<Trajectory> {
        let mut s = Vec::new();
        let mut states = Vec::new();
        let (steps, ds, max_norm) = self.run_with(initial, config, &mut |t, q| {
            s.push(t);
            states.push(q.clone());
            Ok(Control::Continue)
        })?;
        Ok(Trajectory {
            s,
            states,
            steps,
            ds,
            max_norm,
        })
    }
}

pub fn evolve(initial: &StateField, config: &EvolveConfig, grid: &WeightedGrid) -> Result<Trajectory> {
    Evolver::new(grid).run(initial, config)
}

/// sup_k ‖w(s_k) − exact(s_k)‖_H over the recorded samples.
pub fn tracking_error(
    traj: &Trajectory,
    grid: &WeightedGrid,
    exact: &dyn Fn(f64) -> Result<StateField>,
) -> Result<f64> {
    let mut err: f64 = 0.0;
    for (s, q) in traj.s.iter().zip(&traj.states) {
        err = err.max(grid.norm_h(&q.sub(&exact(*s)?)));
    }
    Ok(err)
}

#[derive(Debug, Clone, Serialize)]
pub struct SelfConvergence {
    /// ds, ds/2, ds/4
    pub ds: [f64; 3],
    pub tracking: [f64; 3],
    /// ‖w_{ds} − w_{ds/2}‖_H and ‖w_{ds/2} − w_{ds/4}‖_H at s_end
    pub diffs: [f64; 2],
    pub order: f64,
    /// Rough size of accumulated rounding error in the final state.
    pub roundoff_floor: f64,
}

impl SelfConvergence {
    /// Both differences sit well above rounding, so `order` means something.
    pub fn resolved(&self) -> bool {
        self.diffs[1] > 100.0 * self.roundoff_floor
    }
}

/// Runs at ds, ds/2, ds/4 and reports the observed temporal order.
pub fn self_convergence(
    initial: &StateField,
    config: &EvolveConfig,
    grid: &WeightedGrid,
    exact: &dyn Fn(f64) -> Result<StateField>,
) -> Result<SelfConvergence> {
    let ev = Evolver::new(grid);
    let mut finals = Vec::with_capacity(3);
    let mut tracking = [0.0; 3];
    let mut ds = [0.0; 3];
    let mut steps = 0;
    for k in 0..3 {
        let cfg = EvolveConfig {
            ds: config.ds / (1 << k) as f64,
            ..*config
        };
        let tr = ev.run(initial, &cfg)?;
        tracking[k] = tracking_error(&tr, grid, exact)?;
        ds[k] = tr.ds;
        steps = tr.steps;
        finals.push(tr.states.last().cloned().unwrap_or_else(|| initial.clone()));
    }
    let diffs = [
        grid.norm_h(&finals[0].sub(&finals[1])),
        grid.norm_h(&finals[1].sub(&finals[2])),
    ];
    // per-step rounding of an O(‖w‖) state, amplified by the stiffest part of the rhs
    let lam = (grid.n * grid.n) as f64;
    let roundoff_floor =
        f64::EPSILON * grid.norm_h(&finals[2]) * lam * ds[2] * (steps as f64).sqrt();
    Ok(SelfConvergence {
        ds,
        tracking,
        diffs,
        order: (diffs[0] / diffs[1]).log2(),
        roundoff_floor,
    })
}

/// The nodal fields entering the q-equation at parameter d and time s.
#[derive(Debug, Clone)]
pub struct PerturbationTerms {
    pub h: Field,
    pub big_h: Field,
    pub f_hat: Field,
    pub big_f_hat: Field,
    pub psi_bar: Field,
    pub v_bar: Field,
}

pub fn eval_perturbation_terms(
    q1: &Field,
    tp: &TiltedProfile,
    s: f64,
    grid: &WeightedGrid,
) -> Result<PerturbationTerms> {
    grid.check_field(q1)?;
    let pr = grid.params;
    let power = Power { p: pr.p };
    let src = tp.profile.source().at(s);
    let wbar = tp.state(grid, s)?.w1;
    let kappa = kappa_d(tp.d, grid)?;
    let psi = psi_from_kappa(&kappa, &pr);
    let n = grid.n;
    let mut t = PerturbationTerms {
        h: Field::zeros(n),
        big_h: Field::zeros(n),
        f_hat: Field::zeros(n),
        big_f_hat: Field::zeros(n),
        psi_bar: Field::zeros(n),
        v_bar: Field::zeros(n),
    };
    for j in 0..n {
        let (w, x) = (wbar[j], q1[j]);
        t.h[j] = power.remainder1(w, x);
        t.big_h[j] = power.remainder2(w, x);
        t.f_hat[j] = src.remainder1(w, x);
        t.big_f_hat[j] = src.remainder2(w, x)?;
        t.psi_bar[j] = power.k1(w) - pr.c0();
        t.v_bar[j] = t.psi_bar[j] - psi[j] + src.g1(w);
    }
    Ok(t)
}

/// ∂_s q − [L̄_d q − d′∂_d w̄ + (0, h + f̂)] at the interior samples of a run.
/// `d_trace[k]` is the modulation parameter at `traj.s[k]`. With `include_v_bar`
/// false the V̄q₁ part of L̄_d is dropped, which is used to show it is needed.
pub fn q_equation_residual(
    traj: &Trajectory,
    d_trace: &[f64],
    profile: &std::sync::Arc<crate::profile::PhiProfile>,
    grid: &WeightedGrid,
    include_v_bar: bool,
) -> Result<Vec<(f64, f64)>> {
    let m = traj.s.len();
    if d_trace.len() != m {
        return invalid("d trace length differs from trajectory length");
    }
    if m < 3 {
        return invalid("need at least three samples for centred differences");
    }
    let qs: Vec<StateField> = (0..m)
        .map(|k| {
            let tp = TiltedProfile::new(profile.clone(), d_trace[k])?;
            Ok(traj.states[k].sub(&tp.state(grid, traj.s[k])?))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(m - 2);
    for k in 1..m - 1 {
        let (s, dt) = (traj.s[k], traj.s[k + 1] - traj.s[k - 1]);
        let dq = qs[k + 1].sub(&qs[k - 1]).scaled(1.0 / dt);
        let dd = (d_trace[k + 1] - d_trace[k - 1]) / dt;
        let tp = TiltedProfile::new(profile.clone(), d_trace[k])?;
        let q = &qs[k];
        let terms = eval_perturbation_terms(&q.w1, &tp, s, grid)?;
        let psi = psi_from_kappa(&kappa_d(tp.d, grid)?, &grid.params);
        let mut rhs = apply_ld_with_psi(q, &psi, grid);
        let forcing = if include_v_bar {
            terms.v_bar.component_mul(&q.w1) + &terms.h + &terms.f_hat
        } else {
            &terms.h + &terms.f_hat
        };
        rhs.w2 += forcing;
        rhs = rhs.axpy(-dd, &tp.dd_state(grid, s)?);
        out.push((s, grid.norm_h(&dq.sub(&rhs))));
    }
    Ok(out)
}

/// Snapshot records in long format: `s,node,y,w1,w2`, one row per node.
pub fn write_snapshots<W: Write>(
    traj: &Trajectory,
    grid: &WeightedGrid,
    stride: usize,
    out: W,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let io = |e: csv::Error| LabError::Io(e.to_string());
    wtr.write_record(["s", "node", "y", "w1", "w2"]).map_err(io)?;
    for (k, (s, q)) in traj.s.iter().zip(&traj.states).enumerate() {
        if k % stride.max(1) != 0 && k + 1 != traj.s.len() {
            continue;
        }
        for j in 0..grid.n {
            wtr.serialize((s, j, grid.nodes[j], q.w1[j], q.w2[j]))
                .map_err(io)?;
        }
    }
    wtr.flush().map_err(|e| LabError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::params::Params;
    use crate::profile::PhiProfile;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::{Arc, OnceLock};

    fn profile() -> Arc<PhiProfile> {
        static P: OnceLock<Arc<PhiProfile>> = OnceLock::new();
        P.get_or_init(|| Arc::new(PhiProfile::for_params(&Params::default()).unwrap()))
            .clone()
    }

    fn config(n: usize, ds: f64, s0: f64, span: f64) -> EvolveConfig {
        EvolveConfig {
            n,
            ds,
            s0,
            s_end: s0 + span,
            stride: 10,
            filter_order: None,
        }
    }

    #[test]
    fn stationary_states_are_fixed_points() {
        let g = make_grid(64, Params::default().with_f(false)).unwrap();
        let ev = Evolver::new(&g);
        for d in [0.0, 0.5, -0.5] {
            let k = StateField::new(kappa_d(d, &g).unwrap(), Field::zeros(g.n));
            assert!(g.norm_h(&ev.rhs(&k, 3.0)) < 1e-6, "d={d}");
        }
        let z = StateField::zeros(g.n);
        assert_eq!(g.norm_h(&Evolver::new(&make_grid(64, Params::default()).unwrap()).rhs(&z, 3.0)), 0.0);
        let k0 = StateField::new(Field::from_element(g.n, g.params.kappa0()), Field::zeros(g.n));
        let tr = ev.run(&k0, &config(64, 0.01, 0.0, 5.0)).unwrap();
        assert!(g.norm_h(&tr.states.last().unwrap().sub(&k0)) < 1e-8);
    }

    #[test]
    fn rhs_matches_time_derivative_of_exact_solution() {
        let g = make_grid(64, Params::default()).unwrap();
        let tp = TiltedProfile::new(profile(), 0.4).unwrap();
        let ev = Evolver::new(&g);
        let s = 30.0;
        let h = 1e-3;
        let fd = tp.state(&g, s + h).unwrap().sub(&tp.state(&g, s - h).unwrap()).scaled(0.5 / h);
        let r = ev.rhs(&tp.state(&g, s).unwrap(), s);
        assert!(g.norm_h(&fd.sub(&r)) < 1e-6, "{}", g.norm_h(&fd.sub(&r)));
    }

    #[test]
    fn perturbation_terms_examples() {
        let g = make_grid(32, Params::default()).unwrap();
        let tp = TiltedProfile::new(profile(), 0.3).unwrap();
        let t = eval_perturbation_terms(&Field::zeros(g.n), &tp, 20.0, &g).unwrap();
        assert!(t.h.amax() == 0.0 && t.big_h.amax() == 0.0);
        assert!(t.f_hat.amax() == 0.0 && t.big_f_hat.amax() == 0.0);

        let off = Arc::new(PhiProfile::for_params(&Params::default().with_f(false)).unwrap());
        let g0 = make_grid(32, off.params).unwrap();
        let tp0 = TiltedProfile::new(off, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q1 = g0.random_smooth(&mut rng, 6) * 0.01;
        let t = eval_perturbation_terms(&q1, &tp0, 20.0, &g0).unwrap();
        assert_eq!(t.f_hat.amax(), 0.0);
        assert!(t.v_bar.amax() < 1e-6);
    }

    #[test]
    fn remainder_consistency_and_mean_value_bounds() {
        let g = make_grid(32, Params::default()).unwrap();
        let tp = TiltedProfile::new(profile(), 0.3).unwrap();
        let s = 25.0;
        let kap = kappa_d(0.3, &g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut consts = Vec::new();
        for scale in [1e-1, 1e-2, 1e-3] {
            let q1 = g.random_smooth(&mut rng, 6) * scale;
            let t = eval_perturbation_terms(&q1, &tp, s, &g).unwrap();
            let mut c: f64 = 0.0;
            for j in 0..g.n {
                let x = q1[j].abs();
                let bound = kap[j] * x * x + x.powi(3);
                c = c.max(t.h[j].abs() / bound).max(t.f_hat[j].abs() / bound);
            }
            consts.push(c);
            // centred differences of H, F̂ in q₁ reproduce h, f̂
            let eps = 1e-5;
            let tp_ = eval_perturbation_terms(&q1.map(|v| v + eps), &tp, s, &g).unwrap();
            let tm_ = eval_perturbation_terms(&q1.map(|v| v - eps), &tp, s, &g).unwrap();
            for j in (0..g.n).step_by(3) {
                let dh = (tp_.big_h[j] - tm_.big_h[j]) / (2.0 * eps);
                let df = (tp_.big_f_hat[j] - tm_.big_f_hat[j]) / (2.0 * eps);
                assert!((dh - t.h[j]).abs() < 1e-8 * (1.0 + t.h[j].abs()));
                assert!((df - t.f_hat[j]).abs() < 1e-8 * (1.0 + t.f_hat[j].abs()));
            }
        }
        let (mx, mn) = (consts.iter().cloned().fold(0.0, f64::max), consts.iter().cloned().fold(f64::INFINITY, f64::min));
        assert!(mx / mn < 2.0, "{consts:?}");
    }

    #[test]
    fn rejects_bad_config() {
        let g = make_grid(16, Params::default()).unwrap();
        let q = StateField::zeros(16);
        assert!(evolve(&q, &config(16, 0.0, 0.0, 1.0), &g).is_err());
        assert!(evolve(&q, &config(16, 0.1, 1.0, -1.0), &g).is_err());
        assert!(evolve(&q, &config(8, 0.1, 0.0, 1.0), &g).is_err());
    }

    #[test]
    fn snapshot_layout() {
        let g = make_grid(16, Params::default()).unwrap();
        let q = StateField::new(Field::from_element(16, g.params.kappa0()), Field::zeros(16));
        let tr = evolve(&q, &config(16, 0.05, 10.0, 0.5), &g).unwrap();
        let mut buf = Vec::new();
        write_snapshots(&tr, &g, 1, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("s,node,y,w1,w2\n"));
        assert_eq!(text.lines().count(), 1 + 16 * tr.s.len());
    }
}
