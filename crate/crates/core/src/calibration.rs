//! Radiocarbon calibration against a tabulated curve.
//!
//! The posterior for a measurement `r ± s` at calendar age `t` is taken under
//! a uniform prior over the grid and the Gaussian measurement model
//!
//! ```text
//! p(t | r, s) ∝ exp(-(r - μ(t))² / (2 (s² + σ(t)²))) / sqrt(s² + σ(t)²)
//! ```
//!
//! where `μ(t) ± σ(t)` is the linearly interpolated curve. Dates are treated
//! as independent, so the joint posterior of several dates is the product of
//! their marginals.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TfdError};
use crate::grid::{normalize, DensitySeries, TimeGrid};

/// Identifier of the likelihood model, recorded in result metadata.
pub const LIKELIHOOD_MODEL: &str = "gaussian(r; mu(t), sqrt(s^2 + sigma(t)^2))";
/// Identifier of the prior, recorded in result metadata.
pub const PRIOR_MODEL: &str = "uniform over grid span";
/// Modeling assumption recorded in result metadata.
pub const INDEPENDENCE_ASSUMPTION: &str =
    "dates are statistically independent; joint posterior = product of marginals";

/// Fraction of posterior mass near a grid edge above which a date is flagged.
pub const EDGE_MASS_WARNING: f64 = 1e-3;
/// Width of the edge zone, in combined standard deviations.
pub const EDGE_ZONE_SIGMAS: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveKnot {
    pub cal_bp: f64,
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationCurve {
    name: String,
    knots: Vec<CurveKnot>,
}

impl CalibrationCurve {
    /// Validates knots: at least two, strictly increasing cal BP, positive
    /// finite sigma.
    pub fn new(name: impl Into<String>, knots: Vec<CurveKnot>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(TfdError::Domain(format!(
                "calibration curve needs at least 2 knots, got {}",
                knots.len()
            )));
        }
        for w in knots.windows(2) {
            if w[1].cal_bp == w[0].cal_bp {
                return Err(TfdError::DuplicateKnot {
                    cal_bp: w[0].cal_bp,
                });
            }
            if !(w[1].cal_bp > w[0].cal_bp) {
                return Err(TfdError::Domain(format!(
                    "curve knots must increase in cal BP ({} then {})",
                    w[0].cal_bp, w[1].cal_bp
                )));
            }
        }
        if let Some(k) = knots.iter().find(|k| {
            !(k.sigma > 0.0 && k.sigma.is_finite() && k.mu.is_finite() && k.cal_bp.is_finite())
        }) {
            return Err(TfdError::Domain(format!(
                "invalid curve knot at {} cal BP (mu {}, sigma {})",
                k.cal_bp, k.mu, k.sigma
            )));
        }
        Ok(CalibrationCurve {
            name: name.into(),
            knots,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn knots(&self) -> &[CurveKnot] {
        &self.knots
    }

    pub fn span(&self) -> (f64, f64) {
        (
            self.knots[0].cal_bp,
            self.knots[self.knots.len() - 1].cal_bp,
        )
    }

    /// Linearly interpolated `(μ, σ)` at `t` cal BP.
    pub fn interpolate(&self, t: f64) -> Result<(f64, f64)> {
        let (lo, hi) = self.span();
        if !(t >= lo && t <= hi) {
            return Err(TfdError::OutOfCurveRange { t, lo, hi });
        }
        let upper = self.knots.partition_point(|k| k.cal_bp < t);
        let b = self.knots[upper];
        if b.cal_bp == t {
            return Ok((b.mu, b.sigma));
        }
        let a = self.knots[upper - 1];
        let w = (t - a.cal_bp) / (b.cal_bp - a.cal_bp);
        Ok((a.mu + w * (b.mu - a.mu), a.sigma + w * (b.sigma - a.sigma)))
    }
}

/// Free-function form of [`CalibrationCurve::interpolate`].
pub fn interpolate_curve(curve: &CalibrationCurve, t: f64) -> Result<(f64, f64)> {
    curve.interpolate(t)
}

/// One radiocarbon measurement `r ± s` in 14C years BP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DateRecord {
    pub id: String,
    pub r: f64,
    pub s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve_id: Option<String>,
}

impl DateRecord {
    pub fn new(id: impl Into<String>, r: f64, s: f64) -> Result<Self> {
        let record = DateRecord {
            id: id.into(),
            r,
            s,
            curve_id: None,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.r.is_finite() {
            return Err(TfdError::InvalidRecord {
                id: self.id.clone(),
                message: format!("14C age {} is not finite", self.r),
            });
        }
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(TfdError::InvalidRecord {
                id: self.id.clone(),
                message: format!("14C error must be > 0, got {}", self.s),
            });
        }
        Ok(())
    }
}

/// A calibrated posterior with its edge diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibratedDate {
    pub id: String,
    pub posterior: DensitySeries,
    /// Posterior mass within the edge zone at either end of the grid.
    pub edge_mass: f64,
}

impl CalibratedDate {
    pub fn truncation_warning(&self) -> Option<String> {
        (self.edge_mass > EDGE_MASS_WARNING).then(|| {
            format!(
                "{}: {:.3}% of posterior mass lies within {EDGE_ZONE_SIGMAS} combined sd of a grid edge; the posterior may be truncated",
                self.id,
                100.0 * self.edge_mass
            )
        })
    }
}

/// Calibrates `date` against `curve` on `grid`; the posterior is normalized
/// after truncation to the grid.
pub fn calibrate(
    date: &DateRecord,
    curve: &CalibrationCurve,
    grid: &TimeGrid,
) -> Result<CalibratedDate> {
    date.validate()?;
    let (lo, hi) = curve.span();
    for t in [grid.first(), grid.last()] {
        if !(t >= lo && t <= hi) {
            return Err(TfdError::OutOfCurveRange { t, lo, hi });
        }
    }
    let s2 = date.s * date.s;
    let mut values = Vec::with_capacity(grid.len());
    for t in grid.values() {
        let (mu, sigma) = curve.interpolate(t)?;
        let var = s2 + sigma * sigma;
        let z = date.r - mu;
        values.push((-0.5 * z * z / var).exp() / var.sqrt());
    }
    let raw = DensitySeries::new(*grid, values)?;
    let posterior = normalize(&raw).map_err(|e| match e {
        TfdError::ZeroMass => TfdError::InvalidRecord {
            id: date.id.clone(),
            message: format!(
                "{} ± {} BP has no likelihood mass on [{}, {}] cal BP",
                date.r,
                date.s,
                grid.first(),
                grid.last()
            ),
        },
        other => other,
    })?;
    let edge_mass = edge_mass(&posterior, date, curve)?;
    Ok(CalibratedDate {
        id: date.id.clone(),
        posterior,
        edge_mass,
    })
}

fn edge_mass(
    posterior: &DensitySeries,
    date: &DateRecord,
    curve: &CalibrationCurve,
) -> Result<f64> {
    let grid = posterior.grid();
    let zone = |t: f64| -> Result<f64> {
        let (_, sigma) = curve.interpolate(t)?;
        Ok(EDGE_ZONE_SIGMAS * (date.s * date.s + sigma * sigma).sqrt())
    };
    let recent_zone = zone(grid.first())?;
    let old_zone = zone(grid.last())?;
    let step = grid.step();
    Ok(posterior
        .values()
        .iter()
        .enumerate()
        .filter(|(k, _)| {
            let t = grid.value(*k);
            t - grid.first() <= recent_zone || grid.last() - t <= old_zone
        })
        .map(|(_, v)| v * step)
        .sum())
}

/// Calibrates every date, in input order.
pub fn calibrate_all(
    dates: &[DateRecord],
    curve: &CalibrationCurve,
    grid: &TimeGrid,
) -> Vec<Result<CalibratedDate>> {
    use rayon::prelude::*;
    dates
        .par_iter()
        .map(|d| calibrate(d, curve, grid))
        .collect()
}

/// Joint posterior density of independent dates at one timestamp vector.
pub fn joint_density(posteriors: &[DensitySeries], timestamps: &[f64]) -> Result<f64> {
    if posteriors.len() != timestamps.len() {
        return Err(TfdError::Alignment {
            expected: posteriors.len(),
            found: timestamps.len(),
        });
    }
    posteriors
        .iter()
        .zip(timestamps)
        .map(|(p, &t)| {
            p.at(t)
                .ok_or_else(|| TfdError::Domain(format!("timestamp {t} is not on the grid")))
        })
        .product()
}
