//! GPS-aided visual-wheel odometry.
//!
//! A multi-state constraint Kalman filter fusing differential-drive wheel
//! encoders, monocular feature tracks and GPS positions, with online
//! estimation of the rotation between the odometry frame {V} and the local
//! ENU frame {E}. The crate also carries the simulation harness used to
//! exercise the estimator and a small observability laboratory.
//!
//! Frames: {E} local ENU, {V} odometry reference, {O} odometer body,
//! {C} camera. See [`geometry`] for the quaternion convention and
//! [`state`] for the error-state layout.

pub mod align;
pub mod ekf;
pub mod error;
pub mod geometry;
pub mod gps;
pub mod io;
pub mod observability;
pub mod sim;
pub mod state;
pub mod vision;
pub mod wheel;

pub use error::{Error, Result};
