//! Smoothed SPDs: a kernel-weighted moving average across an SPD.

use serde::{Deserialize, Serialize};

use crate::aggregation::SpdResult;
use crate::error::{Result, TfdError};
use crate::grid::{mass, quantile, DensitySeries, TimeGrid};
use crate::kde::KernelShape;

/// `−1 / ln 0.05`, the constant of the IQR bandwidth rule.
pub fn iqr_rule_constant() -> f64 {
    -1.0 / 0.05f64.ln()
}

/// `h = (−1/ln 0.05) × IQR × n^(−1/6)`.
pub fn iqr_rule(iqr: f64, n: usize) -> Result<f64> {
    if !(iqr > 0.0 && iqr.is_finite()) {
        return Err(TfdError::DegenerateSample(format!(
            "interquartile range must be > 0, got {iqr}"
        )));
    }
    if n == 0 {
        return Err(TfdError::EmptyInput("sample size must be >= 1"));
    }
    Ok(iqr_rule_constant() * iqr * (n as f64).powf(-1.0 / 6.0))
}

/// Interquartile range of an SPD series, in years.
pub fn spd_iqr(spd: &SpdResult) -> Result<f64> {
    Ok((quantile(&spd.series, 0.25)? - quantile(&spd.series, 0.75)?).abs())
}

/// The IQR rule applied to an SPD and its sample size.
pub fn iqr_bandwidth(spd: &SpdResult) -> Result<f64> {
    iqr_rule(spd_iqr(spd)?, spd.n)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "method", content = "h")]
pub enum WkdeBandwidth {
    /// Derived from the SPD's interquartile range and sample size.
    IqrRule,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WkdeConfig {
    pub shape: KernelShape,
    pub bandwidth: WkdeBandwidth,
}

impl Default for WkdeConfig {
    fn default() -> Self {
        WkdeConfig {
            shape: KernelShape::Laplace,
            bandwidth: WkdeBandwidth::IqrRule,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WkdeResult {
    pub series: DensitySeries,
    pub bandwidth: f64,
    /// Mass smoothed past the grid ends.
    pub lost_mass: f64,
}

impl WkdeResult {
    pub fn truncation_warning(&self) -> Option<String> {
        (self.lost_mass > 1e-6).then(|| {
            format!(
                "{:.3e} of the smoothed mass falls outside the grid",
                self.lost_mass
            )
        })
    }
}

/// `f̂(t) = Σᵤ ω(u) K(t|u, h) step / mass(ω)` with kernels drawn as cell
/// averages and cut off at their support radius.
pub fn weighted_kde(spd: &SpdResult, cfg: &WkdeConfig, grid: &TimeGrid) -> Result<WkdeResult> {
    if spd.series.grid() != grid {
        return Err(TfdError::GridMismatch);
    }
    let h = match cfg.bandwidth {
        WkdeBandwidth::IqrRule => iqr_bandwidth(spd)?,
        WkdeBandwidth::Fixed(h) if h > 0.0 && h.is_finite() => h,
        WkdeBandwidth::Fixed(h) => {
            return Err(TfdError::InvalidParameter(format!(
                "bandwidth must be > 0, got {h}"
            )))
        }
    };
    let total = mass(&spd.series);
    if !(total > 0.0) {
        return Err(TfdError::ZeroMass);
    }
    let series = smooth(&spd.series, cfg.shape, h, total);
    let lost_mass = (1.0 - mass(&series)).max(0.0);
    Ok(WkdeResult {
        series,
        bandwidth: h,
        lost_mass,
    })
}

fn smooth(spd: &DensitySeries, shape: KernelShape, h: f64, total: f64) -> DensitySeries {
    use rayon::prelude::*;

    let grid = *spd.grid();
    let step = grid.step();
    let reach = ((shape.support_radius(h) / step).ceil() as usize + 1).min(grid.len() - 1);
    let weights: Vec<f64> = (0..=reach)
        .map(|j| shape.cell_density(j as f64 * step, h, step))
        .collect();
    let omega = spd.values();
    let scale = step / total;
    let values = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let lo = k.saturating_sub(reach);
            let hi = (k + reach).min(grid.len() - 1);
            let mut sum = 0.0;
            for (u, w) in omega.iter().enumerate().take(hi + 1).skip(lo) {
                sum += w * weights[k.abs_diff(u)];
            }
            sum * scale
        })
        .collect();
    DensitySeries::from_parts(grid, values)
}
