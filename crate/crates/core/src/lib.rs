//! Radar-inertial dead reckoning: Doppler ego-velocity estimation, gyro
//! mechanization and a stochastic-cloning error-state Kalman filter with
//! scan-matching and tilt updates.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod egovel;
pub mod eval;
pub mod filter;
pub mod geom;
pub mod io;
pub mod mech;
pub mod model;
pub mod scanmatch;
pub mod sim;
