//! Numerics in similarity variables for u_tt = u_xx + |u|^{p−1}u + |u|^{p−1}u log^{−a}(2+u²).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod energy;
pub mod error;
pub mod evolve;
pub mod grid;
pub mod modulation;
pub mod nonlinear;
pub mod ode;
pub mod params;
pub mod profile;
pub mod quad;
pub mod spectral;

pub use error::{LabError, Result};
pub use grid::{make_grid, Field, StateField, WeightedGrid};
pub use params::Params;
pub use profile::{PhiProfile, TiltedProfile};
pub use spectral::SpectralPack;
