//! Smooth cause-specific hazards for competing risks over two time scales:
//! age at diagnosis `u` and time since diagnosis `s`.
//!
//! Records are binned on a Lexis grid ([`lexis`]), each cause's log-hazard
//! is a tensor-product P-spline fitted by penalized Poisson IWLS with array
//! arithmetic ([`glam`], [`smooth2d`]), a coarse final age interval can be
//! ungrouped first ([`pclm`]), and survival, cumulative incidence and their
//! standard errors follow from the fitted surfaces ([`incidence`],
//! [`uncertainty`]).

pub mod basis;
pub mod cli;
pub mod config;
pub mod error;
pub mod glam;
pub mod incidence;
pub mod lexis;
pub mod linalg;
pub mod model;
pub mod pclm;
pub mod pipeline;
pub mod simulate;
pub mod smooth2d;
pub mod uncertainty;

pub use error::{Error, Result};

/// All numeric output uses 17 significant digits, which round-trips `f64`.
pub fn fmt17(x: f64) -> String {
    format!("{:.16e}", x)
}
