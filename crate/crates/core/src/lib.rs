//! SUTSE state-space forecasting.
//!
//! The exact route runs one multivariate Kalman filter and conditions the
//! one-step forecast error on the components already observed at n+1. The
//! fast route filters each series on its own and replaces F_{n+1} by an
//! estimate of the forecast-error covariance (sample or graphical lasso).

pub mod error;
pub mod estimation;
pub mod filter;
pub mod forecast;
pub mod glasso;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod model;
pub mod simulate;
pub mod sutse;
pub mod theory;

pub use error::{Result, SutseError};
pub use filter::{kalman_filter, kalman_step, log_likelihood, FilterOptions, FilterOutput, Storage};
pub use model::{KalmanState, ObservationSeries, StateSpaceModel};
pub use sutse::{compose, SeriesBlock, SutseSpec};
