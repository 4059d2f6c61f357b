//! Trapping runs: evolve from ω*(w̄(d*) + perturbation) and follow the modulation.

use std::sync::Arc;

use blowup_core::evolve::{Control, EvolveConfig, Evolver, Trajectory};
use blowup_core::modulation::{ModulationOptions, ModulationPoint, Modulator};
use blowup_core::{LabError, PhiProfile, Result, SpectralPack, StateField, TiltedProfile, WeightedGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Modes per component in the random perturbation.
pub const PERTURBATION_MODES: usize = 10;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TrapSetup {
    pub d_star: f64,
    pub s_star: f64,
    pub span: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub kill_f0: bool,
    pub shoot: bool,
    pub omega: f64,
    pub ds: f64,
    pub stride: usize,
    pub filter_order: Option<u32>,
    pub eta1: f64,
    pub root_tol: f64,
}

/// Seeded combination of the first ten ρ-orthonormal polynomials in each
/// component with coefficients uniform in [−1, 1], normalized to ‖·‖_H = ε.
/// The F₁ component is removed when `drop_f1` is set, the F₀ component when
/// `kill_f0` is set (both through the projections at d*).
pub fn perturbation(
    grid: &WeightedGrid,
    pack: &SpectralPack,
    epsilon: f64,
    seed: u64,
    kill_f0: bool,
    drop_f1: bool,
) -> Result<StateField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut modal = |_: ()| {
        let mut c = blowup_core::Field::zeros(grid.n);
        for k in 0..PERTURBATION_MODES.min(grid.n) {
            c[k] = rng.gen_range(-1.0..1.0);
        }
        grid.from_modal(&c)
    };
    let w1 = modal(());
    let w2 = modal(());
    let mut q = StateField::new(w1, w2);
    if drop_f1 {
        q = q.axpy(-pack.pi1(&q), &pack.f1);
    }
    if kill_f0 {
        q = q.axpy(-pack.pi0(&q), &pack.f0);
    }
    let nrm = grid.norm_h(&q);
    if !(nrm > 0.0) {
        return Err(LabError::Numeric("degenerate perturbation".into()));
    }
    Ok(q.scaled(epsilon / nrm))
}

#[derive(Debug, Clone)]
pub struct TrapRun {
    pub setup: TrapSetup,
    pub trajectory: Trajectory,
    pub trace: Vec<ModulationPoint>,
    pub shooting_beta: f64,
    pub shooting_runs: usize,
    /// ‖w(s*) − ω*w̄(d*, s*)‖_H
    pub initial_distance: f64,
}

impl TrapRun {
    pub fn norms(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.trace.iter().map(|p| p.s).collect(),
            self.trace.iter().map(|p| p.q_norm_h).collect(),
        )
    }
}

/// Sign of α₁ once it leaves [−3ε, 3ε], or its final value if it never does.
fn classify(
    ev: &Evolver,
    init: &StateField,
    cfg: &EvolveConfig,
    tp: &TiltedProfile,
    pack: &SpectralPack,
    omega: f64,
    limit: f64,
) -> Result<f64> {
    let grid = ev.grid;
    let mut last = 0.0;
    let res = ev.run_with(init, cfg, &mut |s, w| {
        let q = w.scaled(omega).sub(&tp.state(grid, s)?);
        last = pack.pi1(&q);
        Ok(if last.abs() > limit {
            Control::Stop
        } else {
            Control::Continue
        })
    });
    match res {
        Ok(_) => Ok(last),
        // a run that escapes far enough to diverge is classified by the last α₁ seen
        Err(LabError::Divergence { .. }) | Err(LabError::Numeric(_)) if last != 0.0 => Ok(last),
        Err(e) => Err(e),
    }
}

pub fn run_trap(profile: Arc<PhiProfile>, grid: &WeightedGrid, setup: TrapSetup) -> Result<TrapRun> {
    let tp = TiltedProfile::new(profile.clone(), setup.d_star)?;
    let pack = SpectralPack::new(setup.d_star, grid)?;
    let pert = perturbation(grid, &pack, setup.epsilon, setup.seed, setup.kill_f0, setup.shoot)?;
    let base = tp.state(grid, setup.s_star)?.axpy(1.0, &pert);
    let ev = Evolver::new(grid);
    let cfg = EvolveConfig {
        n: grid.n,
        ds: setup.ds,
        s0: setup.s_star,
        s_end: setup.s_star + setup.span,
        stride: setup.stride,
        filter_order: setup.filter_order,
    };
    let omega = setup.omega;
    let modulator = Modulator::new(
        grid,
        profile.clone(),
        ModulationOptions {
            tol: setup.root_tol,
            omega,
            ..Default::default()
        },
    )?;
    let mut runs = 0;
    let mut beta = 0.0;
    if setup.shoot {
        // The F₀ part of the perturbation is absorbed into d at once, so the
        // unstable direction is measured at the modulated parameter, not at d*.
        let d_ref = modulator.solve(&base.scaled(omega), setup.s_star, setup.d_star)?.d;
        let tp_ref = TiltedProfile::new(profile.clone(), d_ref)?;
        let pack_ref = SpectralPack::new(d_ref, grid)?;
        let limit = 3.0 * setup.epsilon;
        let mut side = |b: f64| -> Result<f64> {
            runs += 1;
            let init = base.axpy(b, &pack_ref.f1).scaled(omega);
            classify(&ev, &init, &cfg, &tp_ref, &pack_ref, omega, limit)
        };
        let (mut lo, mut hi) = (-setup.epsilon, setup.epsilon);
        let mut slo = side(lo)?;
        let mut shi = side(hi)?;
        let mut widen = 0;
        while slo.signum() == shi.signum() {
            widen += 1;
            if widen > 6 {
                return Err(LabError::Modulation {
                    s: setup.s_star,
                    reason: "shooting bracket on the F₁ coefficient has no sign change".into(),
                });
            }
            lo *= 4.0;
            hi *= 4.0;
            slo = side(lo)?;
            shi = side(hi)?;
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            let sm = side(mid)?;
            if sm.signum() == slo.signum() {
                lo = mid;
                slo = sm;
            } else {
                hi = mid;
            }
        }
        beta = 0.5 * (lo + hi);
        let pert = pert.axpy(beta, &pack_ref.f1);
        return finish(&ev, &modulator, &cfg, base.axpy(beta, &pack_ref.f1), pert, setup, beta, runs);
    }
    finish(&ev, &modulator, &cfg, base, pert, setup, beta, runs)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    ev: &Evolver,
    modulator: &Modulator,
    cfg: &EvolveConfig,
    init: StateField,
    pert: StateField,
    setup: TrapSetup,
    beta: f64,
    runs: usize,
) -> Result<TrapRun> {
    let trajectory = ev.run(&init.scaled(setup.omega), cfg)?;
    let trace = modulator.track(&trajectory, setup.d_star, setup.eta1)?;
    Ok(TrapRun {
        setup,
        trajectory,
        trace,
        shooting_beta: beta,
        shooting_runs: runs,
        initial_distance: ev.grid.norm_h(&pert),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use blowup_core::{make_grid, Params};

    #[test]
    fn perturbation_is_normalized_seeded_and_projected() {
        let g = make_grid(32, Params::default()).unwrap();
        let pack = SpectralPack::new(0.3, &g).unwrap();
        let q = perturbation(&g, &pack, 1e-2, 9, true, true).unwrap();
        assert!((g.norm_h(&q) - 1e-2).abs() < 1e-15);
        assert!(pack.pi0(&q).abs() < 1e-14);
        assert!(pack.pi1(&q).abs() < 1e-14);
        let again = perturbation(&g, &pack, 1e-2, 9, true, true).unwrap();
        assert_eq!(q, again);
        let other = perturbation(&g, &pack, 1e-2, 10, true, true).unwrap();
        assert_ne!(q, other);
    }
}
