//! Temporal frequency distributions from radiocarbon dates.
//!
//! Dates are calibrated onto a uniform [`TimeGrid`] and then aggregated by
//! summing posteriors ([`aggregation::spd`]), kernel density estimation over
//! point estimates ([`kde`]), Monte Carlo composite KDEs ([`montecarlo::ckde`]),
//! a kernel-smoothed sum ([`weighted_kde`]) or occupation windows scaled by
//! site area ([`hoi`]).
//!
//! ```
//! use tfd_core::{calibrate, spd, DateRecord, SpdScale, TimeGrid};
//! use tfd_core::synthetic::identity_curve;
//!
//! let curve = identity_curve(0.0, 3000.0, 10.0);
//! let grid = TimeGrid::new(500.0, 1.0, 2000).unwrap();
//! let dates = [DateRecord::new("a", 1200.0, 30.0).unwrap(), DateRecord::new("b", 1300.0, 25.0).unwrap()];
//! let posteriors: Vec<_> = dates
//!     .iter()
//!     .map(|d| calibrate(d, &curve, &grid).unwrap().posterior)
//!     .collect();
//! let sum = spd(&posteriors, SpdScale::Raw).unwrap();
//! assert!((sum.series.mass() - 2.0).abs() < 1e-9);
//! ```

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregation;
pub mod calibration;
pub mod error;
pub mod grid;
pub mod hoi;
pub mod io;
pub mod kde;
pub mod montecarlo;
pub mod synthetic;
pub mod weighted_kde;

pub use aggregation::{spd, SpdResult, SpdScale};
pub use calibration::{
    calibrate, calibrate_all, CalibratedDate, CalibrationCurve, CurveKnot, DateRecord,
};
pub use error::{Result, TfdError};
pub use grid::{DensitySeries, GuessVector, PointEstimateKind, PointEstimates, TimeGrid};
pub use hoi::{choid, hoid, SiteRecord};
pub use kde::{kde, BandwidthSelector, KernelShape, KernelSpec};
pub use montecarlo::{ckde, plugin_estimator, McConfig};
pub use weighted_kde::{weighted_kde, WkdeConfig};
