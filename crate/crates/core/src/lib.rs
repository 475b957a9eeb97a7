//! Continuous-time Kalman filtering and smoothing through the covariance
//! kernels `K(s, t | T)` and `Λ(s, t | T)` of a linear time-varying SDE.

pub mod error;
pub mod estimation;
pub mod io;
pub mod kernels;
pub mod mcsim;
pub mod model;
pub mod numcore;
pub mod riccati;
pub mod rkhs;
pub mod verify;

pub use error::{Error, Result};
pub use model::{load_model, LtvModel, MatrixSchedule};
pub use numcore::{Matrix, TimeGrid, Vector};
