//! Numerical calculus on H-type Carnot groups in prototype (exponential)
//! coordinates.
//!
//! The crate is organised bottom-up:
//!
//! - [`group`]: group law, dilations, brackets, the `J_z` maps and the
//!   Jacobian frame of left-invariant horizontal fields.
//! - [`gauge`]: the Kaplan gauge `d = (|v|^4 + 16|z|^2)^{1/4}`, its closed-form
//!   horizontal derivatives, the mean-value kernel and Monte Carlo constants.
//! - [`operator`]: non-divergence operators `L_A = sum a_ij X_i X_j`, ellipticity
//!   and Cordes-Landis checks.
//! - [`barrier`]: the singular-integral barrier `h`, its smoothing `h_eps` and the
//!   constant chain leading to a critical-density fraction.
//! - [`harnack`]: finite-difference Dirichlet solves and empirical Harnack /
//!   critical-density measurements.

pub mod barrier;
pub mod error;
pub mod gauge;
pub mod group;
pub mod harnack;
pub mod operator;
pub mod sampling;

pub use error::{Error, Result};
pub use gauge::{BallSpec, GaugeConstants};
pub use group::{GroupPoint, HTypeGroup, HTypeGroupSpec, ValidationReport};
pub use operator::{CoefficientField, EllipticityBounds, FieldSpec, LandisReport};
pub use sampling::Estimate;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
