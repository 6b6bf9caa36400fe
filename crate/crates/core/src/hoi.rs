//! Human occupation index.
//!
//! Each dated site contributes a rectangular occupation window of height
//! `a / 100` (site area in m² over 100) spanning `h` years either side of its
//! sampled timestamp. A grid cell lies in the window when its grid point
//! satisfies `τ − h < t ≤ τ + h`: the older edge is inclusive and the more
//! recent edge exclusive. With `h` a multiple of the step a window covers
//! exactly `2h / step` cells and so carries mass `(a/100) × 2h`; otherwise the
//! covered span can differ from `2h` by at most one step.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate, CalibrationCurve, DateRecord};
use crate::error::{Result, TfdError};
use crate::grid::{compensated_sum, DensitySeries, GuessVector, TimeGrid};
use crate::montecarlo::{sample_guess, samplers, McConfig};

/// Window half-width used when none is given.
pub const DEFAULT_HALF_WIDTH: f64 = 50.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteRecord {
    pub date: DateRecord,
    pub site_id: String,
    /// Site area in m².
    pub area: f64,
}

impl SiteRecord {
    pub fn new(date: DateRecord, site_id: impl Into<String>, area: f64) -> Result<Self> {
        let site = SiteRecord {
            date,
            site_id: site_id.into(),
            area,
        };
        site.validate()?;
        Ok(site)
    }

    pub fn validate(&self) -> Result<()> {
        self.date.validate()?;
        if !(self.area > 0.0 && self.area.is_finite()) {
            return Err(TfdError::InvalidRecord {
                id: self.date.id.clone(),
                message: format!("site area must be > 0, got {}", self.area),
            });
        }
        Ok(())
    }
}

/// Window height for a site of `area` m².
pub fn conversion_factor(area: f64) -> f64 {
    area / 100.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupationWindow {
    pub center: f64,
    pub half_width: f64,
    pub area: f64,
}

impl OccupationWindow {
    pub fn new(center: f64, half_width: f64, area: f64) -> Result<Self> {
        check_half_width(half_width)?;
        if !(area > 0.0 && area.is_finite()) {
            return Err(TfdError::InvalidParameter(format!(
                "site area must be > 0, got {area}"
            )));
        }
        Ok(OccupationWindow {
            center,
            half_width,
            area,
        })
    }

    /// Older (inclusive) bound in cal BP.
    pub fn opens(&self) -> f64 {
        self.center + self.half_width
    }

    /// More recent (exclusive) bound in cal BP.
    pub fn closes(&self) -> f64 {
        self.center - self.half_width
    }

    pub fn duration(&self) -> f64 {
        2.0 * self.half_width
    }

    pub fn height(&self) -> f64 {
        conversion_factor(self.area)
    }

    /// Analytic mass `(a/100) × 2h`.
    pub fn mass(&self) -> f64 {
        self.height() * self.duration()
    }

    pub fn contains(&self, t: f64) -> bool {
        t > self.closes() && t <= self.opens()
    }
}

fn check_half_width(h: f64) -> Result<f64> {
    if h > 0.0 && h.is_finite() {
        Ok(h)
    } else {
        Err(TfdError::InvalidParameter(format!(
            "window half-width must be > 0, got {h}"
        )))
    }
}

/// Grid index range `[lo, hi)` of cells inside a window centered on grid
/// index `center`, and whether the window was clipped by the grid.
fn covered_cells(grid: &TimeGrid, center: f64, half_width: f64) -> (usize, usize, bool) {
    let step = grid.step();
    // τ − h < start + k·step ≤ τ + h
    let lo_real = (center - half_width - grid.start()) / step;
    let hi_real = (center + half_width - grid.start()) / step;
    let eps = 1e-9;
    let lo = (lo_real + eps).floor() + 1.0;
    let hi = (hi_real + eps).floor();
    let clipped = lo < 0.0 || hi > (grid.len() - 1) as f64;
    let lo = lo.max(0.0) as usize;
    let hi = (hi.min((grid.len() - 1) as f64) + 1.0).max(0.0) as usize;
    (lo.min(grid.len()), hi.max(lo.min(grid.len())), clipped)
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowSeries {
    pub series: DensitySeries,
    /// The window reaches past the grid and lost part of its mass.
    pub truncated: bool,
}

/// The window drawn on `grid`.
pub fn occupation_window(w: &OccupationWindow, grid: &TimeGrid) -> Result<WindowSeries> {
    check_half_width(w.half_width)?;
    let (lo, hi, truncated) = covered_cells(grid, w.center, w.half_width);
    let mut values = vec![0.0; grid.len()];
    values[lo..hi].fill(w.height());
    Ok(WindowSeries {
        series: DensitySeries::new(*grid, values)?,
        truncated,
    })
}

/// Per-site coverage counts: how many of the guesses put each cell inside
/// that site's window.
fn coverage(
    guesses: &[GuessVector],
    site: usize,
    grid: &TimeGrid,
    half_width: f64,
) -> (Vec<u64>, bool) {
    let mut diff = vec![0i64; grid.len() + 1];
    let mut clipped = false;
    for guess in guesses {
        let (lo, hi, c) = covered_cells(grid, guess.timestamps()[site], half_width);
        clipped |= c;
        diff[lo] += 1;
        diff[hi] -= 1;
    }
    let mut running = 0i64;
    let counts = diff[..grid.len()]
        .iter()
        .map(|d| {
            running += d;
            running as u64
        })
        .collect();
    (counts, clipped)
}

/// `Σᵢ Φ(aᵢ) × (coverᵢ(t) / G)`, summed over sites in input order.
fn averaged_index(
    heights: &[f64],
    coverage: &[Vec<u64>],
    guesses: usize,
    grid: &TimeGrid,
) -> DensitySeries {
    let g = guesses as f64;
    let values = (0..grid.len())
        .map(|k| {
            let mut sum = 0.0;
            for (height, cover) in heights.iter().zip(coverage) {
                sum += height * (cover[k] as f64 / g);
            }
            sum
        })
        .collect();
    DensitySeries::from_parts(*grid, values)
}

/// Unscaled sum of every site's window for one guess.
pub fn hoid(
    guess: &GuessVector,
    sites: &[SiteRecord],
    half_width: f64,
    grid: &TimeGrid,
) -> Result<DensitySeries> {
    check_half_width(half_width)?;
    if guess.len() != sites.len() {
        return Err(TfdError::Alignment {
            expected: sites.len(),
            found: guess.len(),
        });
    }
    for &t in guess.timestamps() {
        if grid.index_of(t).is_none() {
            return Err(TfdError::Domain(format!(
                "timestamp {t} is not on the grid"
            )));
        }
    }
    let guesses = std::slice::from_ref(guess);
    let cover: Vec<_> = (0..sites.len())
        .map(|i| coverage(guesses, i, grid, half_width).0)
        .collect();
    let heights: Vec<f64> = sites.iter().map(|s| conversion_factor(s.area)).collect();
    Ok(averaged_index(&heights, &cover, 1, grid))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChoidResult {
    pub series: DensitySeries,
    pub guesses: usize,
    pub half_width: f64,
    /// `(site id, window mass)` per included record.
    pub site_masses: Vec<(String, f64)>,
    /// Records dropped because they failed to calibrate.
    pub skipped: Vec<(String, String)>,
    /// Ids of records whose windows were clipped by the grid in some guess.
    pub clipped: Vec<String>,
}

impl ChoidResult {
    /// `Σ (aᵢ/100) × 2h` over included sites.
    pub fn expected_mass(&self) -> f64 {
        compensated_sum(self.site_masses.iter().map(|(_, m)| *m))
    }
}

/// Calibrates each site date, samples `G` guesses and averages their HOIDs.
///
/// With `skip_failed` a record that fails to calibrate is reported in
/// [`ChoidResult::skipped`]; otherwise the first failure aborts the run.
pub fn choid(
    sites: &[SiteRecord],
    curve: &CalibrationCurve,
    grid: &TimeGrid,
    cfg: &McConfig,
    half_width: f64,
    skip_failed: bool,
) -> Result<ChoidResult> {
    cfg.validate()?;
    check_half_width(half_width)?;
    for site in sites {
        site.validate()?;
    }
    let calibrated: Vec<_> = sites
        .par_iter()
        .map(|s| calibrate(&s.date, curve, grid))
        .collect();
    let mut kept = Vec::new();
    let mut posteriors = Vec::new();
    let mut skipped = Vec::new();
    for (site, result) in sites.iter().zip(calibrated) {
        match result {
            Ok(c) => {
                kept.push(site);
                posteriors.push(c.posterior);
            }
            Err(e) if skip_failed => skipped.push((site.date.id.clone(), e.to_string())),
            Err(e) => return Err(e),
        }
    }
    if kept.is_empty() {
        return Err(TfdError::EmptyInput("no site calibrated successfully"));
    }
    choid_from_posteriors(&kept, &posteriors, grid, cfg, half_width).map(|mut r| {
        r.skipped = skipped;
        r
    })
}

/// CHOID from already calibrated posteriors, aligned with `sites`.
pub fn choid_from_posteriors(
    sites: &[&SiteRecord],
    posteriors: &[DensitySeries],
    grid: &TimeGrid,
    cfg: &McConfig,
    half_width: f64,
) -> Result<ChoidResult> {
    cfg.validate()?;
    check_half_width(half_width)?;
    if sites.len() != posteriors.len() {
        return Err(TfdError::Alignment {
            expected: sites.len(),
            found: posteriors.len(),
        });
    }
    if posteriors.iter().any(|p| p.grid() != grid) {
        return Err(TfdError::GridMismatch);
    }
    let samplers = samplers(posteriors)?;
    let guesses: Vec<GuessVector> = (0..cfg.guesses as u64)
        .into_par_iter()
        .map(|g| sample_guess(&samplers, grid, g, &mut cfg.stream(g)))
        .collect();
    let per_site: Vec<(Vec<u64>, bool)> = (0..sites.len())
        .into_par_iter()
        .map(|i| coverage(&guesses, i, grid, half_width))
        .collect();
    let heights: Vec<f64> = sites.iter().map(|s| conversion_factor(s.area)).collect();
    let clipped = sites
        .iter()
        .zip(&per_site)
        .filter(|(_, (_, c))| *c)
        .map(|(s, _)| s.date.id.clone())
        .collect();
    let cover: Vec<Vec<u64>> = per_site.into_iter().map(|(c, _)| c).collect();
    let series = averaged_index(&heights, &cover, cfg.guesses, grid);
    let site_masses = sites
        .iter()
        .map(|s| {
            (
                s.site_id.clone(),
                conversion_factor(s.area) * 2.0 * half_width,
            )
        })
        .collect();
    Ok(ChoidResult {
        series,
        guesses: cfg.guesses,
        half_width,
        site_masses,
        skipped: Vec::new(),
        clipped,
    })
}
