//! Discrete-time nonholonomic mechanics on trivial principal bundles.
//!
//! The library models a discrete mechanical system as a quadruple
//! `(Q, L_d, D, D_d)`: a configuration bundle `Q = R x G`, a two-point
//! lagrangian, a variational distribution (allowed variations) and a
//! two-point constraint submanifold (allowed transitions). Trajectories
//! are solved implicitly from the discrete Lagrange-D'Alembert equations.
//! When a Lie group `G` acts on the fiber, trajectories can be projected
//! to a reduced system in trivialized coordinates `(r_k, theta_k)`,
//! stepped there, and lifted back to `Q` by reconstruction.
//!
//! Modules follow the pipeline:
//!
//! * [`group`] / [`bundle`]: the symmetry group `G = R^a x (S^1)^b` and the
//!   trivial bundle `Q = R x G` with its left action.
//! * [`system`]: discrete mechanical systems and their derivative engine.
//! * [`solver`]: implicit Newton stepping of the Lagrange-D'Alembert
//!   equations, trajectory drivers and residual diagnostics.
//! * [`connection`]: continuous and affine discrete connections, horizontal
//!   lifts and the mixed curvature.
//! * [`reduction`]: trivialized reduced systems, the Chaplygin and
//!   horizontal-symmetry specializations, and the discrete momentum map.
//! * [`reconstruction`]: lifting reduced trajectories back to `Q`.
//! * [`examples`]: the three worked systems with closed-form references.
//! * [`verify`]: the invariant suite behind the `verify` CLI command.

pub mod bundle;
pub mod connection;
mod error;
pub mod examples;
pub mod group;
pub(crate) mod linalg;
pub mod par;
pub mod reconstruction;
pub mod reduction;
pub mod solver;
pub mod system;
pub mod verify;

pub use error::Error;

/// Library-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
