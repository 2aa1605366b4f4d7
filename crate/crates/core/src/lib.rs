//! Trajectory planning and tracking for teams of car-like robots.
//!
//! The planner optimizes piecewise-quintic flat-output trajectories with
//! forward/reverse gear segments under speed, acceleration, curvature and
//! clearance penalties, minimized with L-BFGS. A linearized-bicycle MPC,
//! solved as an ADMM quadratic program, tracks the result in closed loop.

pub mod error;
pub mod flatmap;
pub mod frontend;
pub mod geometry;
pub mod harness;
pub mod mpc;
pub mod penalty;
pub mod planner;
pub mod qp;
pub mod timewarp;
pub mod trajmodel;

pub use error::{Error, Result};
