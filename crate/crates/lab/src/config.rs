//! Run configuration. Optional knobs are filled per experiment kind by
//! [`RunConfig::materialize`], so a report always echoes the values actually used.

use std::path::PathBuf;

use blowup_core::evolve::stable_ds;
use blowup_core::{LabError, Params, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Profile,
    Spectral,
    Evolve,
    Trap,
    Energy,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Profile => "profile",
            Kind::Spectral => "spectral",
            Kind::Evolve => "evolve",
            Kind::Trap => "trap",
            Kind::Energy => "energy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub kind: Kind,
    pub p: f64,
    pub a: f64,
    pub f_enabled: bool,
    /// Collocation nodes.
    pub n: usize,
    /// RK4 step; defaults to the calibrated 24/n².
    pub ds: Option<f64>,
    /// Relative tolerance of the blow-up ODE solve.
    pub ode_tol: f64,
    /// Root tolerance of the modulation solve.
    pub root_tol: f64,
    pub s0: Option<f64>,
    pub span: Option<f64>,
    /// Record every `stride`-th RK4 step.
    pub stride: Option<usize>,
    pub d_star: Option<f64>,
    pub epsilon_star: f64,
    /// Also run a companion trap at `companion_ratio·ε*` to compare |d_∞ − d*|.
    pub companion: bool,
    pub companion_ratio: f64,
    pub eta1: f64,
    pub theta_h: f64,
    pub omega_star: f64,
    pub seed: u64,
    /// Remove the F₀ component from the trap perturbation.
    pub kill_f0: bool,
    /// Pin the unstable F₁ coefficient by bisection.
    pub shoot: bool,
    pub d_grid: Vec<f64>,
    pub filter_order: Option<u32>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            kind: Kind::Profile,
            p: 3.0,
            a: 2.0,
            f_enabled: true,
            n: 64,
            ds: None,
            ode_tol: 1e-10,
            root_tol: 1e-12,
            s0: None,
            span: None,
            stride: None,
            d_star: None,
            epsilon_star: 1e-2,
            companion: true,
            companion_ratio: 0.1,
            eta1: 0.05,
            theta_h: 10.0,
            omega_star: 1.0,
            seed: 1,
            kill_f0: false,
            shoot: true,
            d_grid: vec![0.0, 0.5, -0.5, 0.9, -0.9],
            filter_order: None,
            out: None,
        }
    }
}

fn bad<T>(msg: String) -> Result<T> {
    Err(LabError::InvalidArgument(msg))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| LabError::InvalidArgument(format!("config: {e}")))
    }

    pub fn params(&self) -> Params {
        Params {
            p: self.p,
            a: self.a,
            f_enabled: self.f_enabled,
        }
    }

    /// Fill kind-dependent defaults.
    pub fn materialize(&mut self) {
        // trap traces are differenced, so they are sampled densely
        let (s0, span, d, stride) = match self.kind {
            Kind::Evolve => (30.0, 5.0, 0.4, 20),
            Kind::Trap => (20.0, 12.0, 0.3, 2),
            Kind::Energy => (50.0, 3.0, 0.0, 20),
            Kind::Profile | Kind::Spectral => (20.0, 5.0, 0.0, 20),
        };
        self.s0.get_or_insert(s0);
        self.span.get_or_insert(span);
        self.d_star.get_or_insert(d);
        self.ds.get_or_insert(stable_ds(self.n.max(1)));
        self.stride.get_or_insert(stride);
    }

    pub fn validate(&self) -> Result<()> {
        Params::new(self.p, self.a, self.f_enabled)?;
        if !(16..=256).contains(&self.n) {
            return bad(format!("n must be in [16, 256], got {}", self.n));
        }
        if let Some(ds) = self.ds {
            if !(ds > 0.0 && ds <= 0.1) {
                return bad(format!("ds must be in (0, 0.1], got {ds}"));
            }
        }
        if !(self.ode_tol > 0.0 && self.ode_tol < 1e-3) {
            return bad(format!("ode_tol must be in (0, 1e-3), got {}", self.ode_tol));
        }
        if !(self.root_tol > 0.0 && self.root_tol < 1e-4) {
            return bad(format!("root_tol must be in (0, 1e-4), got {}", self.root_tol));
        }
        if let Some(s0) = self.s0 {
            if !(s0 > 0.0 && s0 <= 700.0) {
                return bad(format!("s0 must be in (0, 700], got {s0}"));
            }
        }
        if let Some(span) = self.span {
            if !(span > 0.0 && span <= 100.0) {
                return bad(format!("span must be in (0, 100], got {span}"));
            }
        }
        if self.stride == Some(0) {
            return bad("stride must be at least 1".into());
        }
        if let Some(d) = self.d_star {
            if !(d.abs() < 0.99) {
                return bad(format!("|d_star| must be < 0.99, got {d}"));
            }
        }
        if !(self.epsilon_star > 0.0 && self.epsilon_star <= 0.1) {
            return bad(format!("epsilon_star must be in (0, 0.1], got {}", self.epsilon_star));
        }
        if !(self.companion_ratio > 0.0 && self.companion_ratio < 1.0) {
            return bad(format!("companion_ratio must be in (0, 1), got {}", self.companion_ratio));
        }
        if !(self.eta1 > 0.0 && self.eta1 < 1.0) {
            return bad(format!("eta1 must be in (0, 1), got {}", self.eta1));
        }
        if !(self.theta_h >= 0.0 && self.theta_h.is_finite()) {
            return bad(format!("theta_h must be non-negative, got {}", self.theta_h));
        }
        if self.omega_star.abs() != 1.0 {
            return bad(format!("omega_star must be +1 or -1, got {}", self.omega_star));
        }
        if self.d_grid.is_empty() || self.d_grid.iter().any(|d| !(d.abs() < 1.0)) {
            return bad("d_grid must be non-empty with |d| < 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_materialize() {
        let mut c = RunConfig::from_json(r#"{"kind": "trap", "seed": 5}"#).unwrap();
        c.validate().unwrap();
        c.materialize();
        assert_eq!((c.s0, c.span, c.d_star), (Some(20.0), Some(12.0), Some(0.3)));
        assert_eq!(c.seed, 5);
        assert!(c.ds.unwrap() > 0.0);
    }

    #[test]
    fn rejects_bad_values() {
        let c = RunConfig::from_json(r#"{"kind": "profile", "p": 0.5}"#).unwrap();
        assert!(c.validate().is_err());
        assert!(RunConfig::from_json(r#"{"kind": "profile", "bogus": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"kind": "nothing"}"#).is_err());
        let c = RunConfig {
            omega_star: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
