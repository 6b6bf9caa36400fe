//! Discretized cal BP timeline and density series over it.
//!
//! Grid values are stored ascending in cal BP, so index 0 is the most recent
//! point and the last index is the oldest. Since cal BP decreases as time
//! elapses, anything that walks "forward in time" (cumulative mass, quantiles)
//! walks from the last index towards index 0.
//!
//! Each stored value is the density of the cell centered on its grid point,
//! and integrals are midpoint Riemann sums (`values × step`).

use serde::{Deserialize, Serialize};

use crate::error::{Result, TfdError};

/// Default admissible span of a grid, in cal BP.
pub const DEFAULT_SPAN: (f64, f64) = (0.0, 50_000.0);

/// Tolerance for a series to count as normalized.
pub const NORMALIZED_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct TimeGrid {
    start: f64,
    step: f64,
    count: usize,
}

#[derive(Deserialize)]
struct RawGrid {
    start: f64,
    step: f64,
    count: usize,
}

impl TryFrom<RawGrid> for TimeGrid {
    type Error = TfdError;

    fn try_from(raw: RawGrid) -> Result<Self> {
        TimeGrid::new_unbounded(raw.start, raw.step, raw.count)
    }
}

impl TimeGrid {
    /// A grid of `count` points starting at `start` cal BP, restricted to the
    /// default span [0, 50000] cal BP.
    pub fn new(start: f64, step: f64, count: usize) -> Result<Self> {
        let grid = Self::new_unbounded(start, step, count)?;
        let (lo, hi) = DEFAULT_SPAN;
        if grid.first() < lo || grid.last() > hi {
            return Err(TfdError::Domain(format!(
                "grid [{}, {}] cal BP leaves the admissible span [{lo}, {hi}]",
                grid.first(),
                grid.last()
            )));
        }
        Ok(grid)
    }

    /// Like [`TimeGrid::new`] but without the span restriction; for synthetic
    /// timelines that are not cal BP.
    pub fn new_unbounded(start: f64, step: f64, count: usize) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(TfdError::Domain(format!(
                "grid step must be > 0, got {step}"
            )));
        }
        if !start.is_finite() {
            return Err(TfdError::Domain("grid start must be finite".into()));
        }
        if count < 2 {
            return Err(TfdError::Domain(format!(
                "grid needs at least 2 points, got {count}"
            )));
        }
        Ok(TimeGrid { start, step, count })
    }

    /// Grid covering `[start, end]` cal BP inclusive. `end - start` must be a
    /// whole number of steps (within 1e-9 of a step).
    pub fn from_range(start: f64, end: f64, step: f64) -> Result<Self> {
        if !(end > start) {
            return Err(TfdError::Domain(format!(
                "grid end {end} must exceed start {start}"
            )));
        }
        let cells = (end - start) / step;
        let rounded = cells.round();
        if (cells - rounded).abs() > 1e-9 {
            return Err(TfdError::Domain(format!(
                "span {start}..{end} is not a multiple of step {step}"
            )));
        }
        Self::new(start, step, rounded as usize + 1)
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Most recent point (smallest cal BP).
    pub fn first(&self) -> f64 {
        self.start
    }

    /// Oldest point (largest cal BP).
    pub fn last(&self) -> f64 {
        self.value(self.count - 1)
    }

    #[inline]
    pub fn value(&self, index: usize) -> f64 {
        self.start + index as f64 * self.step
    }

    pub fn values(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.count).map(move |k| self.value(k))
    }

    /// Index of the grid point equal to `t`, if `t` lies on the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let pos = (t - self.start) / self.step;
        let k = pos.round();
        if k < 0.0 || k >= self.count as f64 || (pos - k).abs() > 1e-9 {
            return None;
        }
        Some(k as usize)
    }

    /// Index of the cell containing `t`, if any.
    pub fn nearest_index(&self, t: f64) -> Option<usize> {
        let k = ((t - self.start) / self.step).round();
        (k >= 0.0 && k < self.count as f64).then_some(k as usize)
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.first() && t <= self.last()
    }

    /// The same grid translated by `delta` years.
    pub fn shifted(&self, delta: f64) -> Result<Self> {
        Self::new_unbounded(self.start + delta, self.step, self.count)
    }
}

/// Non-negative densities (per year) on a [`TimeGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct DensitySeries {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl DensitySeries {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(TfdError::Alignment {
                expected: grid.len(),
                found: values.len(),
            });
        }
        if let Some((k, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(TfdError::Domain(format!(
                "density at {} cal BP is {v}; densities must be finite and >= 0",
                grid.value(k)
            )));
        }
        Ok(DensitySeries { grid, values })
    }

    /// Construction for values known to be valid by construction.
    pub(crate) fn from_parts(grid: TimeGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(grid.len(), values.len());
        debug_assert!(values.iter().all(|v| v.is_finite() && *v >= 0.0));
        DensitySeries { grid, values }
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        DensitySeries {
            values: vec![0.0; grid.len()],
            grid,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Density at a grid point, or `None` off-grid.
    pub fn at(&self, t: f64) -> Option<f64> {
        self.grid.index_of(t).map(|k| self.values[k])
    }

    pub fn mass(&self) -> f64 {
        mass(self)
    }

    pub fn is_normalized(&self) -> bool {
        (self.mass() - 1.0).abs() <= NORMALIZED_TOLERANCE
    }
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    #[inline]
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub(crate) fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = CompensatedSum::default();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Total mass, `Σ values × step`.
pub fn mass(d: &DensitySeries) -> f64 {
    compensated_sum(d.values.iter().copied()) * d.grid.step
}

/// Rescales `d` to unit mass.
pub fn normalize(d: &DensitySeries) -> Result<DensitySeries> {
    let m = mass(d);
    if !(m > 0.0) {
        return Err(TfdError::ZeroMass);
    }
    let values = d.values.iter().map(|v| v / m).collect();
    Ok(DensitySeries::from_parts(d.grid, values))
}

/// Pointwise `scale × Σ parts`.
///
/// At each grid point the contributions are summed in ascending order of value
/// with compensation, so the result depends only on the multiset of parts and
/// never on their order or on how work is split across threads.
pub fn sum_series(parts: &[DensitySeries], scale: f64) -> Result<DensitySeries> {
    let first = parts
        .first()
        .ok_or(TfdError::EmptyInput("no series to sum"))?;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(TfdError::Domain(format!("scale must be > 0, got {scale}")));
    }
    let grid = first.grid;
    if parts.iter().any(|p| p.grid != grid) {
        return Err(TfdError::GridMismatch);
    }
    let mut column = Vec::with_capacity(parts.len());
    let values = (0..grid.len())
        .map(|k| {
            column.clear();
            column.extend(parts.iter().map(|p| p.values[k]));
            column.sort_unstable_by(f64::total_cmp);
            scale * compensated_sum(column.iter().copied())
        })
        .collect();
    Ok(DensitySeries::from_parts(grid, values))
}

fn check_positive_mass(d: &DensitySeries) -> Result<f64> {
    let m = mass(d);
    if m > 0.0 {
        Ok(m)
    } else {
        Err(TfdError::ZeroMass)
    }
}

/// Timeline value where the mass accumulated in elapsing-time order (from the
/// oldest end) first reaches `q × mass`, interpolated linearly inside the
/// crossing cell and clamped to the outermost non-empty grid points.
///
/// The result is non-increasing in cal BP as `q` grows.
pub fn quantile(d: &DensitySeries, q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(TfdError::Domain(format!(
            "quantile level {q} outside [0, 1]"
        )));
    }
    let total = check_positive_mass(d)? / d.grid.step;
    let target = q * total;
    let step = d.grid.step;

    let oldest_nonzero = (0..d.values.len()).rev().find(|&k| d.values[k] > 0.0);
    let recent_nonzero = (0..d.values.len()).find(|&k| d.values[k] > 0.0);
    let (Some(oldest), Some(recent)) = (oldest_nonzero, recent_nonzero) else {
        return Err(TfdError::ZeroMass);
    };

    let mut acc = CompensatedSum::default();
    let mut crossing = d.grid.value(recent) - 0.5 * step;
    for k in (recent..=oldest).rev() {
        let v = d.values[k];
        let before = acc.value();
        acc.add(v);
        if v > 0.0 && acc.value() >= target {
            let fraction = ((target - before) / v).clamp(0.0, 1.0);
            crossing = d.grid.value(k) + 0.5 * step - fraction * step;
            break;
        }
    }
    Ok(crossing.clamp(d.grid.value(recent), d.grid.value(oldest)))
}

/// Grid value with the largest density; ties go to the oldest candidate.
pub fn argmax_map(d: &DensitySeries) -> Result<f64> {
    check_positive_mass(d)?;
    let mut best = d.values.len() - 1;
    for k in (0..d.values.len()).rev() {
        if d.values[k] > d.values[best] {
            best = k;
        }
    }
    Ok(d.grid.value(best))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointEstimates {
    pub mean: f64,
    pub median: f64,
    pub map: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointEstimateKind {
    Mean,
    Median,
    Map,
}

impl PointEstimates {
    pub fn get(&self, which: PointEstimateKind) -> f64 {
        match which {
            PointEstimateKind::Mean => self.mean,
            PointEstimateKind::Median => self.median,
            PointEstimateKind::Map => self.map,
        }
    }
}

impl std::str::FromStr for PointEstimateKind {
    type Err = TfdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "median" => Ok(Self::Median),
            "map" => Ok(Self::Map),
            other => Err(TfdError::InvalidParameter(format!(
                "unknown point estimate '{other}' (expected mean, median or map)"
            ))),
        }
    }
}

impl std::fmt::Display for PointEstimateKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Mean => "mean",
            Self::Median => "median",
            Self::Map => "map",
        })
    }
}

/// Posterior mean, median and mode of a (normalized) series.
pub fn point_estimates(d: &DensitySeries) -> Result<PointEstimates> {
    let m = check_positive_mass(d)?;
    let step = d.grid.step;
    let mean = compensated_sum(
        d.values
            .iter()
            .enumerate()
            .map(|(k, v)| d.grid.value(k) * v * step),
    ) / m;
    Ok(PointEstimates {
        mean,
        median: quantile(d, 0.5)?,
        map: argmax_map(d)?,
    })
}

/// Variance of the timeline under the series, as a distribution.
pub fn variance(d: &DensitySeries) -> Result<f64> {
    let m = check_positive_mass(d)?;
    let step = d.grid.step;
    let mean = compensated_sum(
        d.values
            .iter()
            .enumerate()
            .map(|(k, v)| d.grid.value(k) * v * step),
    ) / m;
    Ok(compensated_sum(d.values.iter().enumerate().map(|(k, v)| {
        let dt = d.grid.value(k) - mean;
        dt * dt * v * step
    })) / m)
}

/// `Σ |values[k+1] − values[k]|`.
pub fn total_variation(d: &DensitySeries) -> f64 {
    compensated_sum(d.values.windows(2).map(|w| (w[1] - w[0]).abs()))
}

/// L1 distance `Σ |a − b| × step` between two series on one grid.
pub fn l1_distance(a: &DensitySeries, b: &DensitySeries) -> Result<f64> {
    if a.grid != b.grid {
        return Err(TfdError::GridMismatch);
    }
    Ok(compensated_sum(a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs())) * a.grid.step)
}

/// Timestamps of one Monte-Carlo guess, one per constituent, all on-grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GuessVector {
    pub guess_index: u64,
    indices: Vec<usize>,
    timestamps: Vec<f64>,
}

impl GuessVector {
    pub fn new(grid: &TimeGrid, guess_index: u64, timestamps: Vec<f64>) -> Result<Self> {
        let indices = timestamps
            .iter()
            .map(|&t| {
                grid.index_of(t)
                    .ok_or_else(|| TfdError::Domain(format!("timestamp {t} is not on the grid")))
            })
            .collect::<Result<_>>()?;
        Ok(GuessVector {
            guess_index,
            indices,
            timestamps,
        })
    }

    pub(crate) fn from_indices(grid: &TimeGrid, guess_index: u64, indices: Vec<usize>) -> Self {
        let timestamps = indices.iter().map(|&k| grid.value(k)).collect();
        GuessVector {
            guess_index,
            indices,
            timestamps,
        }
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}
