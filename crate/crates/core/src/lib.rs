//! Constrained low-thrust orbit transfers driven by a Lyapunov tracking
//! controller on the Gauss variational equations, supervised by an
//! incremental reference governor.
//!
//! The crate is organised bottom-up:
//!
//! * [`elements`] – orbital element types, the input matrix of the Gauss
//!   variational equations and Cartesian conversions.
//! * [`controller`] – the quadratic Lyapunov function and the tracking law.
//! * [`constraints`] – periapsis, thrust and eccentricity constraints.
//! * [`admissibility`] – constraint minimisation over Lyapunov sublevel sets.
//! * [`governor`] – the multi-step, multi-mode reference governor and its
//!   prediction-based admissibility backend.
//! * [`integrator`] / [`sim`] – adaptive Runge–Kutta integration of the
//!   closed loop and trajectory recording.

pub mod admissibility;
pub mod constraints;
pub mod controller;
pub mod elements;
mod error;
pub mod governor;
pub mod integrator;
pub mod sim;

pub use error::{Error, Result};

pub use admissibility::{is_admissible, SolveReport, SublevelSet};
pub use constraints::ConstraintLimits;
pub use controller::WeightMatrix;
pub use elements::{Constants, FullState, SlowElements, ThrustAccel};
pub use governor::{Backend, GovernorConfig, GovernorState, ModeSet};
pub use sim::{run_closed_loop, SimConfig, TrajectoryRecord};

/// No code path in this crate draws random numbers; trajectories depend only
/// on their inputs.
pub const RNG_FREE: bool = true;
