//! Synthetic calibration curves and samples for demos, tests and benchmarks.

use std::f64::consts::TAU;

use crate::calibration::{CalibrationCurve, CurveKnot, DateRecord};

/// `μ(t) = t` with constant `sigma`, knots every 10 years over `[lo, hi]`.
pub fn identity_curve(lo: f64, hi: f64, sigma: f64) -> CalibrationCurve {
    let knots = knot_positions(lo, hi, 10.0)
        .map(|t| CurveKnot {
            cal_bp: t,
            mu: t,
            sigma,
        })
        .collect();
    CalibrationCurve::new("identity", knots).expect("identity curve is valid")
}

/// A curve with two superposed wiggles on a unit trend, giving plateaus and
/// short reversals similar to the real atmospheric record. Knots every 5
/// years over `[lo, hi]`.
pub fn wiggly_curve(lo: f64, hi: f64) -> CalibrationCurve {
    let knots = knot_positions(lo, hi, 5.0)
        .map(|t| CurveKnot {
            cal_bp: t,
            mu: t + 25.0 * (TAU * t / 230.0).sin() + 10.0 * (TAU * t / 85.0).sin(),
            sigma: 12.0 + 4.0 * (TAU * t / 400.0).cos(),
        })
        .collect();
    CalibrationCurve::new("synthetic-wiggly", knots).expect("wiggly curve is valid")
}

fn knot_positions(lo: f64, hi: f64, spacing: f64) -> impl Iterator<Item = f64> {
    let count = ((hi - lo) / spacing).floor() as usize;
    (0..=count).map(move |i| lo + i as f64 * spacing)
}

/// Twenty dates from one occupation phase, `r ∈ [1590, 1628]` BP with errors
/// of 12 to 20 years.
pub fn twenty_date_sample() -> Vec<DateRecord> {
    (0..20)
        .map(|i| {
            let r = 1590.0 + 2.0 * i as f64;
            let s = 12.0 + 4.0 * (i % 3) as f64;
            DateRecord::new(format!("S{:02}", i + 1), r, s).expect("valid synthetic date")
        })
        .collect()
}
