//! Simulation and verification toolkit for the topology of stationary
//! Gaussian random fields.
//!
//! The crate has three layers:
//!
//! * closed-form predictors: Hermite polynomials, Lipschitz-Killing
//!   curvatures of flat domains, the expected Euler characteristic of
//!   excursion sets, component-count asymptotics and the Nazarov-Sodin
//!   density ([`theory`]), plus Monte-Carlo Kac-Rice critical-point
//!   densities ([`kacrice`]) and the spherical p-spin model ([`spinglass`]);
//! * an empirical side: exact spectral synthesis of fields on flat tori
//!   ([`field`]), cubical topology of excursion/sojourn/nodal sets
//!   ([`topology`]) and Newton-refined critical points of the trigonometric
//!   interpolant ([`critical`]);
//! * an [`harness`] that runs replicate ensembles and joins both sides into
//!   machine-readable comparison reports.
//!
//! All Monte-Carlo and per-replicate loops run data-parallel on rayon when
//! the `parallel` feature (default) is enabled, and fall back to sequential
//! iteration otherwise. Results are bit-identical either way.

pub mod covariance;
pub mod critical;
pub mod error;
pub mod exec;
pub mod field;
pub mod harness;
pub mod kacrice;
pub mod special;
pub mod spinglass;
pub mod theory;
pub mod topology;

pub use covariance::{GaussianHessianLaw, ModelKind, SpectralModel};
pub use error::{Error, Result};
pub use field::GridField;
pub use theory::{Domain, DomainShape, LkCurvatures};
pub use topology::Side;
