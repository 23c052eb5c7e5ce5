//! Kontsevich graph weights for the wheel (`Gamma`), boundary-edge
//! (`Upsilon`) and two-boundary (`Lambda`) graph families, computed three
//! independent ways, plus the exact hbar-series operators built on top of
//! them (star product, deformed Grothendieck connection, Weyl curvature,
//! cotangent simplification).
//!
//! Module map:
//! - [`exact`]: closed-form rational weights, wheel/boundary Stokes
//!   moments, hypergeometric helpers and the appendix binomial sums.
//! - [`propagator`]: the harmonic angle function on the upper half-plane,
//!   its gradient, sign factors and gauge-fixed configuration spaces.
//! - [`integrate`]: Gauss-Legendre quadrature in reduced mode and seeded
//!   parallel Monte Carlo in full mode, cross-checked against [`exact`].
//! - [`jet`]: truncated multivariate jet polynomials over big rationals.
//! - [`series`]: formal exponential maps, the connection form `R`, and the
//!   weight-driven operators `P`, `A`, `F`.
//! - [`jetfile`]: the on-disk jet fixture format.

pub mod exact;
pub mod integrate;
pub mod jet;
pub mod jetfile;
pub mod propagator;
pub mod series;

pub use exact::{BigRational, Family, PiMonomial, WeightQuery, WeightResult};
pub use jet::{Caps, JetPolynomial};
pub use propagator::{GaugeFixedConfig, HPoint};
