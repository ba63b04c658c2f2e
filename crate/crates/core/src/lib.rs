//! Minimum-time state transfer of a driven, dissipative qubit.
//!
//! The qubit obeys Bloch equations with Rabi frequency ω, control coupling κ
//! and decay rate γ. The crate provides the dynamics in Bloch and cylindrical
//! coordinates, closed-form bounds on transfer times, a constructive control
//! protocol, Pontryagin extremals with a shooting solver, and a grid-based
//! minimum-time oracle.

pub mod bloch;
pub mod bounds;
pub mod dynamics;
pub mod error;
pub mod extremal;
pub mod ode;
pub mod oracle;
pub mod par;
pub mod protocol;
pub mod schedule;
pub mod spline;

pub use bloch::{BlochState, CylState, DensityMatrix, PhasePoint, PhysParams};
pub use error::{Error, Result};
pub use par::Execution;
pub use schedule::{ControlSchedule, Impulse, Signal, SmoothPiece};
