//! Hamiltonian symmetry reduction for small mechanical systems.
//!
//! The crate treats every system as a Poisson system `ẇ = K(w)∇H(w)` and
//! ships four concrete instances together with numerical verifiers for
//! their structural identities:
//!
//! * [`rigid_body`]: the free rigid body on `so(3)*`, its full attitude
//!   dynamics on `SO(3) × R³`, and the intermediate-axis (hammer) flip.
//! * [`central_force`]: the reduction of `O(3)`-invariant one-body
//!   dynamics to the cone in `sp(2)*`, and reconstruction of the full orbit
//!   from a one-dimensional phase integral.
//! * [`sp2k`]: `k` bodies in `R^n` reduced to `sp(2k)*` through the Gram
//!   matrix momentum map, with the `(O(3), Sp(2))` dual-pair checks.
//! * [`portrait`]: charts of the symplectic leaves and contour extraction of
//!   the Hamiltonian on them.
//!
//! [`verify`] runs the full audit suite used by the `symred verify`
//! command.

pub mod central_force;
pub mod error;
pub mod linalg;
pub mod poisson;
pub mod portrait;
pub mod rigid_body;
pub mod sp2k;
pub mod verify;

pub use error::{Error, Result};
