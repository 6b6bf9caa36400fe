//! Kernel functions, bandwidth selection and kernel density estimates.
//!
//! On a [`TimeGrid`] a kernel is drawn as its exact average over each grid
//! cell, so every kernel carries unit mass on the grid regardless of how the
//! bandwidth compares to the step.

use std::f64::consts::{PI, SQRT_2};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TfdError};
use crate::grid::{point_estimates, DensitySeries, PointEstimateKind, TimeGrid};

/// Infinite-support kernels are cut off this many bandwidths from center.
pub const TAIL_CUTOFF_BANDWIDTHS: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelShape {
    /// Normal density, `h` = standard deviation.
    Gaussian,
    /// `0.75 (1 − u²) / h` on `|u| ≤ 1`.
    Epanechnikov,
    /// `0.5 / h` on `|u| ≤ 1`.
    Rectangular,
    /// `(1 − |u|) / h` on `|u| ≤ 1`.
    Triangular,
    /// Double exponential `0.5 / h × exp(−|u|)`.
    Laplace,
}

impl KernelShape {
    pub const ALL: [KernelShape; 5] = [
        KernelShape::Gaussian,
        KernelShape::Epanechnikov,
        KernelShape::Rectangular,
        KernelShape::Triangular,
        KernelShape::Laplace,
    ];

    pub fn is_compact(self) -> bool {
        matches!(
            self,
            KernelShape::Epanechnikov | KernelShape::Rectangular | KernelShape::Triangular
        )
    }

    /// Distance beyond which the kernel is treated as zero.
    pub fn support_radius(self, h: f64) -> f64 {
        if self.is_compact() {
            h
        } else {
            TAIL_CUTOFF_BANDWIDTHS * h
        }
    }

    /// Kernel density at distance `d` from its center.
    #[inline]
    pub fn density(self, d: f64, h: f64) -> f64 {
        let u = d.abs() / h;
        let unit = match self {
            KernelShape::Gaussian => (-0.5 * u * u).exp() / (2.0 * PI).sqrt(),
            KernelShape::Laplace => 0.5 * (-u).exp(),
            KernelShape::Rectangular if u <= 1.0 => 0.5,
            KernelShape::Epanechnikov if u <= 1.0 => 0.75 * (1.0 - u * u),
            KernelShape::Triangular if u <= 1.0 => 1.0 - u,
            _ => 0.0,
        };
        unit / h
    }

    /// Kernel mass beyond distance `x ≥ 0` on one side.
    #[inline]
    fn survival(self, x: f64, h: f64) -> f64 {
        let u = x / h;
        match self {
            KernelShape::Gaussian => 0.5 * libm::erfc(u / SQRT_2),
            KernelShape::Laplace => 0.5 * (-u).exp(),
            _ if u >= 1.0 => 0.0,
            KernelShape::Rectangular => 0.5 * (1.0 - u),
            KernelShape::Triangular => 0.5 * (1.0 - u) * (1.0 - u),
            KernelShape::Epanechnikov => 0.25 * (1.0 - u) * (1.0 - u) * (2.0 + u),
        }
    }

    /// Average density over the cell of width `step` centered at distance `d`.
    #[inline]
    pub fn cell_density(self, d: f64, h: f64, step: f64) -> f64 {
        let near = d.abs() - 0.5 * step;
        let far = d.abs() + 0.5 * step;
        let inside = if near >= 0.0 {
            self.survival(near, h) - self.survival(far, h)
        } else {
            1.0 - self.survival(-near, h) - self.survival(far, h)
        };
        inside.max(0.0) / step
    }

    /// `∫ K(x) K(d − x) dx` for bandwidth `h`.
    fn self_convolution(self, d: f64, h: f64) -> f64 {
        let u = d.abs() / h;
        match self {
            KernelShape::Gaussian => (-0.25 * u * u).exp() / (2.0 * PI.sqrt() * h),
            _ => convolution_table(self).eval(u) / h,
        }
    }
}

impl std::str::FromStr for KernelShape {
    type Err = TfdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(KernelShape::Gaussian),
            "epanechnikov" => Ok(KernelShape::Epanechnikov),
            "rectangular" => Ok(KernelShape::Rectangular),
            "triangular" => Ok(KernelShape::Triangular),
            "laplace" => Ok(KernelShape::Laplace),
            other => Err(TfdError::InvalidParameter(format!(
                "unknown kernel '{other}'"
            ))),
        }
    }
}

impl std::fmt::Display for KernelShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            KernelShape::Gaussian => "gaussian",
            KernelShape::Epanechnikov => "epanechnikov",
            KernelShape::Rectangular => "rectangular",
            KernelShape::Triangular => "triangular",
            KernelShape::Laplace => "laplace",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub shape: KernelShape,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn new(shape: KernelShape, bandwidth: f64) -> Result<Self> {
        check_bandwidth(bandwidth)?;
        Ok(KernelSpec { shape, bandwidth })
    }
}

fn check_bandwidth(h: f64) -> Result<f64> {
    if h > 0.0 && h.is_finite() {
        Ok(h)
    } else {
        Err(TfdError::InvalidParameter(format!(
            "bandwidth must be > 0, got {h}"
        )))
    }
}

/// `K(t | center, h)`.
pub fn kernel_eval(spec: &KernelSpec, center: f64, t: f64) -> f64 {
    spec.shape.density(t - center, spec.bandwidth)
}

// Gauss-Legendre, 8 nodes on [-1, 1].
const GL_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    GL_NODES
        .iter()
        .zip(GL_WEIGHTS)
        .map(|(x, w)| w * (f(mid - half * x) + f(mid + half * x)))
        .sum::<f64>()
        * half
}

/// `h × (K∗K)(u h)` tabulated in `u` for one shape (scale-free).
struct ConvolutionTable {
    spacing: f64,
    values: Vec<f64>,
}

impl ConvolutionTable {
    const SPACING: f64 = 1e-3;
    const PANEL: f64 = 0.25;

    fn build(shape: KernelShape) -> Self {
        let radius = shape.support_radius(1.0);
        let count = (2.0 * radius / Self::SPACING).round() as usize + 1;
        let values = (0..count)
            .map(|i| Self::integrate(shape, i as f64 * Self::SPACING, radius))
            .collect();
        ConvolutionTable {
            spacing: Self::SPACING,
            values,
        }
    }

    fn integrate(shape: KernelShape, u: f64, radius: f64) -> f64 {
        let lo = (-radius).max(u - radius);
        let hi = radius.min(u + radius);
        if lo >= hi {
            return 0.0;
        }
        let mut breaks: Vec<f64> = [-1.0, 0.0, 1.0, u - 1.0, u, u + 1.0]
            .into_iter()
            .filter(|b| *b > lo && *b < hi)
            .collect();
        breaks.push(lo);
        breaks.push(hi);
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let f = |x: f64| shape.density(x, 1.0) * shape.density(u - x, 1.0);
        breaks
            .windows(2)
            .map(|w| {
                let panels = ((w[1] - w[0]) / Self::PANEL).ceil().max(1.0) as usize;
                let width = (w[1] - w[0]) / panels as f64;
                (0..panels)
                    .map(|p| {
                        let a = w[0] + p as f64 * width;
                        gauss_legendre(f, a, a + width)
                    })
                    .sum::<f64>()
            })
            .sum()
    }

    fn eval(&self, u: f64) -> f64 {
        let pos = u / self.spacing;
        let i = pos.floor() as usize;
        if i + 1 >= self.values.len() {
            return 0.0;
        }
        let w = pos - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }
}

fn convolution_table(shape: KernelShape) -> &'static ConvolutionTable {
    static TABLES: [OnceLock<ConvolutionTable>; 5] = [
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
        OnceLock::new(),
    ];
    let slot = KernelShape::ALL.iter().position(|s| *s == shape).unwrap();
    TABLES[slot].get_or_init(|| ConvolutionTable::build(shape))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "method", content = "h")]
pub enum BandwidthSelector {
    /// Unbiased (least-squares) cross-validation.
    Ucv,
    /// `1.06 × min(sd, IQR/1.34) × n^(−1/5)`.
    Silverman,
    Fixed(f64),
}

impl std::str::FromStr for BandwidthSelector {
    type Err = TfdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ucv" => Ok(BandwidthSelector::Ucv),
            "silverman" => Ok(BandwidthSelector::Silverman),
            _ => {
                let h = s
                    .strip_prefix("fixed:")
                    .and_then(|h| h.parse::<f64>().ok())
                    .ok_or_else(|| {
                        TfdError::InvalidParameter(format!(
                            "bandwidth must be ucv, silverman or fixed:H, got '{s}'"
                        ))
                    })?;
                Ok(BandwidthSelector::Fixed(check_bandwidth(h)?))
            }
        }
    }
}

impl std::fmt::Display for BandwidthSelector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BandwidthSelector::Ucv => f.write_str("ucv"),
            BandwidthSelector::Silverman => f.write_str("silverman"),
            BandwidthSelector::Fixed(h) => write!(f, "fixed:{h}"),
        }
    }
}

fn sorted_sample(timestamps: &[f64]) -> Result<Vec<f64>> {
    if timestamps.len() < 2 {
        return Err(TfdError::DegenerateSample(format!(
            "bandwidth selection needs at least 2 timestamps, got {}",
            timestamps.len()
        )));
    }
    if let Some(t) = timestamps.iter().find(|t| !t.is_finite()) {
        return Err(TfdError::Domain(format!("timestamp {t} is not finite")));
    }
    let mut sorted = timestamps.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(TfdError::DegenerateSample(
            "all timestamps are identical".into(),
        ));
    }
    Ok(sorted)
}

/// Linear-interpolation sample quantile of sorted data.
fn sample_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let w = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - w) + sorted[i + 1] * w
    } else {
        sorted[i]
    }
}

fn silverman_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let sd = (sorted.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let iqr = sample_quantile(sorted, 0.75) - sample_quantile(sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    1.06 * spread * n.powf(-0.2)
}

/// Silverman's reference-rule bandwidth.
pub fn silverman_bandwidth(timestamps: &[f64]) -> Result<f64> {
    Ok(silverman_sorted(&sorted_sample(timestamps)?))
}

/// UCV score `∫ f̂² − (2/n) Σ f̂₋ᵢ(τᵢ)` at bandwidth `h`.
pub fn ucv_score(timestamps: &[f64], shape: KernelShape, h: f64) -> f64 {
    let n = timestamps.len();
    let radius = 2.0 * shape.support_radius(h);
    let mut square = 0.0;
    let mut leave_one_out = 0.0;
    for (i, a) in timestamps.iter().enumerate() {
        for b in &timestamps[i + 1..] {
            let d = (a - b).abs();
            if shape.is_compact() && d > radius {
                continue;
            }
            square += shape.self_convolution(d, h);
            leave_one_out += shape.density(d, h);
        }
    }
    let nf = n as f64;
    (nf * shape.self_convolution(0.0, h) + 2.0 * square) / (nf * nf)
        - 4.0 * leave_one_out / (nf * (nf - 1.0))
}

const UCV_SEARCH_POINTS: usize = 41;
const UCV_BRACKET: f64 = 10.0;

fn ucv_bandwidth(sorted: &[f64], shape: KernelShape) -> f64 {
    let reference = silverman_sorted(sorted);
    let lo = (reference / UCV_BRACKET).ln();
    let hi = (reference * UCV_BRACKET).ln();
    let score = |log_h: f64| ucv_score(sorted, shape, log_h.exp());

    // coarse log-spaced scan locates the basin, golden section refines it
    let spacing = (hi - lo) / (UCV_SEARCH_POINTS - 1) as f64;
    let scores: Vec<f64> = (0..UCV_SEARCH_POINTS)
        .map(|i| score(lo + i as f64 * spacing))
        .collect();
    let best = scores
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let a = lo + best.saturating_sub(1) as f64 * spacing;
    let b = lo + (best + 1).min(UCV_SEARCH_POINTS - 1) as f64 * spacing;
    golden_section(score, a, b, 1e-6).exp()
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Selects a bandwidth for `timestamps` using `method`.
pub fn select_bandwidth(
    timestamps: &[f64],
    shape: KernelShape,
    method: BandwidthSelector,
) -> Result<f64> {
    match method {
        BandwidthSelector::Fixed(h) => check_bandwidth(h),
        BandwidthSelector::Silverman => silverman_bandwidth(timestamps),
        BandwidthSelector::Ucv => Ok(ucv_bandwidth(&sorted_sample(timestamps)?, shape)),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KdeEstimate {
    pub series: DensitySeries,
    pub shape: KernelShape,
    pub bandwidth: f64,
}

/// `f̂(t) = (1/n) Σᵢ K(t | τᵢ, h)` on `grid` with a known bandwidth.
pub fn kde_with_bandwidth(
    timestamps: &[f64],
    shape: KernelShape,
    h: f64,
    grid: &TimeGrid,
) -> Result<DensitySeries> {
    if timestamps.is_empty() {
        return Err(TfdError::EmptyInput("a KDE needs at least one timestamp"));
    }
    check_bandwidth(h)?;
    let n = timestamps.len() as f64;
    let step = grid.step();
    let values = grid
        .values()
        .map(|t| {
            let mut sum = 0.0;
            for tau in timestamps {
                sum += shape.cell_density(t - tau, h, step);
            }
            sum / n
        })
        .collect();
    DensitySeries::new(*grid, values)
}

/// Kernel density estimate with a bandwidth picked by `selector`.
pub fn kde(
    timestamps: &[f64],
    shape: KernelShape,
    selector: BandwidthSelector,
    grid: &TimeGrid,
) -> Result<KdeEstimate> {
    if timestamps.is_empty() {
        return Err(TfdError::EmptyInput("a KDE needs at least one timestamp"));
    }
    let bandwidth = select_bandwidth(timestamps, shape, selector)?;
    Ok(KdeEstimate {
        series: kde_with_bandwidth(timestamps, shape, bandwidth, grid)?,
        shape,
        bandwidth,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointKde {
    pub estimate: KdeEstimate,
    pub which: PointEstimateKind,
    pub points: Vec<f64>,
}

/// KDE over one point estimate (mean, median or mode) per posterior.
pub fn kde_from_posterior_points(
    posteriors: &[DensitySeries],
    which: PointEstimateKind,
    shape: KernelShape,
    selector: BandwidthSelector,
    grid: &TimeGrid,
) -> Result<PointKde> {
    let points = posteriors
        .iter()
        .map(|p| point_estimates(p).map(|pe| pe.get(which)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PointKde {
        estimate: kde(&points, shape, selector, grid)?,
        which,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{mass, normalize, sum_series};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::Normal;

    fn normal_draws(seed: u64, n: usize, sd: f64) -> Vec<f64> {
        let normal = Normal::new(0.0, sd).unwrap();
        ChaCha8Rng::seed_from_u64(seed)
            .sample_iter(normal)
            .take(n)
            .collect()
    }

    #[test]
    fn kernel_point_values() {
        let h = 40.0;
        let laplace = KernelSpec::new(KernelShape::Laplace, h).unwrap();
        assert_eq!(kernel_eval(&laplace, 100.0, 100.0), 0.5 / h);
        let far = kernel_eval(&laplace, 100.0, 100.0 + h * 20f64.ln());
        assert!((far - 0.025 / h).abs() < 1e-12);
        let rect = KernelSpec::new(KernelShape::Rectangular, h).unwrap();
        assert_eq!(kernel_eval(&rect, 0.0, h + 1e-9), 0.0);
        assert_eq!(kernel_eval(&rect, 0.0, -h - 1e-9), 0.0);
        assert!(KernelSpec::new(KernelShape::Gaussian, 0.0).is_err());
    }

    #[test]
    fn kernels_are_symmetric_and_monotone() {
        for shape in KernelShape::ALL {
            let spec = KernelSpec {
                shape,
                bandwidth: 7.5,
            };
            let mut last = f64::INFINITY;
            for i in 0..200 {
                let d = i as f64 * 0.1;
                let right = kernel_eval(&spec, 3.0, 3.0 + d);
                assert_eq!(shape.density(d, 7.5), shape.density(-d, 7.5), "{shape}");
                let left = kernel_eval(&spec, 3.0, 3.0 - d);
                assert!((right - left).abs() <= 1e-12 * right.max(1e-300), "{shape}");
                assert!(right <= last, "{shape}");
                last = right;
            }
        }
    }

    #[test]
    fn kernels_integrate_to_one() {
        // composite Gauss-Legendre on panels of width h/20, aligned with the kinks
        for shape in KernelShape::ALL {
            for h in [1.0, 13.0, 250.0] {
                let radius = shape.support_radius(h);
                let width = h / 20.0;
                let panels = (2.0 * radius / width).round() as usize;
                let total: f64 = (0..panels)
                    .map(|p| {
                        let a = -radius + p as f64 * width;
                        gauss_legendre(|x| shape.density(x, h), a, a + width)
                    })
                    .sum();
                assert!((total - 1.0).abs() < 1e-8, "{shape} h={h}: {total}");
            }
        }
    }

    #[test]
    fn cell_densities_carry_unit_mass() {
        let grid = TimeGrid::new_unbounded(-2000.0, 1.0, 4001).unwrap();
        for shape in KernelShape::ALL {
            for h in [0.01, 0.5, 3.3, 50.0] {
                let series = kde_with_bandwidth(&[0.25], shape, h, &grid).unwrap();
                assert!((mass(&series) - 1.0).abs() < 1e-12, "{shape} h={h}");
            }
        }
    }

    #[test]
    fn convolution_tables_match_closed_forms() {
        for u in [0.0f64, 0.3, 0.999, 1.0, 1.7, 2.5, 7.0] {
            let laplace = 0.25 * (1.0 + u) * (-u).exp();
            assert!((convolution_table(KernelShape::Laplace).eval(u) - laplace).abs() < 1e-7);
            let rect = if u < 2.0 { 0.25 * (2.0 - u) } else { 0.0 };
            assert!((convolution_table(KernelShape::Rectangular).eval(u) - rect).abs() < 1e-7);
        }
        // quadrature route agrees with the closed-form gaussian route
        let table = ConvolutionTable::build(KernelShape::Gaussian);
        for u in [0.0, 0.5, 1.3, 4.0] {
            let exact = KernelShape::Gaussian.self_convolution(u, 1.0);
            assert!((table.eval(u) - exact).abs() < 1e-7);
        }
        for shape in [KernelShape::Epanechnikov, KernelShape::Triangular] {
            let t = convolution_table(shape);
            let total: f64 = (0..t.values.len() - 1)
                .map(|i| 0.5 * (t.values[i] + t.values[i + 1]) * t.spacing)
                .sum();
            // K∗K integrates to one; the table holds the half-line
            assert!((2.0 * total - 1.0).abs() < 1e-5, "{shape}");
        }
    }

    #[test]
    fn silverman_and_fixed() {
        assert_eq!(
            select_bandwidth(
                &[1.0, 2.0],
                KernelShape::Gaussian,
                BandwidthSelector::Fixed(50.0)
            )
            .unwrap(),
            50.0
        );
        assert!(select_bandwidth(
            &[1.0],
            KernelShape::Gaussian,
            BandwidthSelector::Fixed(-1.0)
        )
        .is_err());
        for method in [BandwidthSelector::Ucv, BandwidthSelector::Silverman] {
            assert!(matches!(
                select_bandwidth(&[7.0, 7.0], KernelShape::Gaussian, method),
                Err(TfdError::DegenerateSample(_))
            ));
            assert!(matches!(
                select_bandwidth(&[7.0], KernelShape::Gaussian, method),
                Err(TfdError::DegenerateSample(_))
            ));
        }
        // sd = 1.5811, IQR = 2 → min(1.5811, 1.4925) × 1.06 × 5^(-0.2)
        let h = silverman_bandwidth(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!((h - 1.06 * (2.0 / 1.34) * 5f64.powf(-0.2)).abs() < 1e-12);
    }

    /// Direct UCV objective: ∫f̂² by the N(0, 2h²) self-convolution over all
    /// ordered pairs, leave-one-out term by explicit exclusion.
    fn brute_ucv(x: &[f64], h: f64) -> f64 {
        let n = x.len() as f64;
        let phi = |d: f64, s: f64| (-0.5 * (d / s).powi(2)).exp() / (s * (2.0 * PI).sqrt());
        let mut square = 0.0;
        for a in x {
            for b in x {
                square += phi(a - b, SQRT_2 * h);
            }
        }
        let mut loo = 0.0;
        for (i, a) in x.iter().enumerate() {
            let mut f = 0.0;
            for (j, b) in x.iter().enumerate() {
                if i != j {
                    f += phi(a - b, h);
                }
            }
            loo += f / (n - 1.0);
        }
        square / (n * n) - 2.0 * loo / n
    }

    #[test]
    fn ucv_matches_dense_grid_oracle() {
        for seed in [3, 11] {
            let x = normal_draws(seed, 200, 100.0);
            let reference = silverman_bandwidth(&x).unwrap();
            let oracle = (0..2000)
                .map(|i| reference / 10.0 * 100f64.powf(i as f64 / 1999.0))
                .min_by(|a, b| brute_ucv(&x, *a).total_cmp(&brute_ucv(&x, *b)))
                .unwrap();
            let h = select_bandwidth(&x, KernelShape::Gaussian, BandwidthSelector::Ucv).unwrap();
            assert!(
                (h / oracle - 1.0).abs() < 0.005,
                "seed {seed}: {h} vs {oracle}"
            );
            assert!((ucv_score(&x, KernelShape::Gaussian, h) - brute_ucv(&x, h)).abs() < 1e-12);
        }
    }

    #[test]
    fn ucv_close_to_silverman_for_normal_data() {
        let mut hs: Vec<f64> = (1..=5)
            .map(|seed| {
                let x = normal_draws(seed, 1000, 100.0);
                select_bandwidth(&x, KernelShape::Gaussian, BandwidthSelector::Ucv).unwrap()
            })
            .collect();
        hs.sort_by(f64::total_cmp);
        let h = hs[2];
        let reference = 1.06 * 100.0 * 1000f64.powf(-0.2);
        assert!((reference - 26.6).abs() < 0.05);
        assert!(h > 0.5 * reference && h < 2.0 * reference, "{hs:?}");
    }

    #[test]
    fn ucv_bandwidth_grows_as_sample_shrinks() {
        let mut large = Vec::new();
        let mut small = Vec::new();
        for seed in 0..5 {
            let x = normal_draws(100 + seed, 800, 100.0);
            large
                .push(select_bandwidth(&x, KernelShape::Gaussian, BandwidthSelector::Ucv).unwrap());
            small.push(
                select_bandwidth(&x[..80], KernelShape::Gaussian, BandwidthSelector::Ucv).unwrap(),
            );
        }
        large.sort_by(f64::total_cmp);
        small.sort_by(f64::total_cmp);
        assert!(small[2] > large[2], "{small:?} vs {large:?}");
    }

    #[test]
    fn ucv_works_for_every_shape() {
        let x = normal_draws(5, 150, 60.0);
        for shape in KernelShape::ALL {
            let h = select_bandwidth(&x, shape, BandwidthSelector::Ucv).unwrap();
            let s = silverman_bandwidth(&x).unwrap();
            assert!(h > s / 10.0 && h < s * 10.0, "{shape}: {h}");
        }
    }

    #[test]
    fn single_gaussian_kernel_value() {
        let grid = TimeGrid::from_range(0.0, 1200.0, 1.0).unwrap();
        let est = kde(
            &[600.0],
            KernelShape::Gaussian,
            BandwidthSelector::Fixed(50.0),
            &grid,
        )
        .unwrap();
        // N(600, 50) pdf at 500
        assert!((est.series.at(500.0).unwrap() - 0.001_079_819).abs() < 1e-6);
        assert!((mass(&est.series) - 1.0).abs() < 1e-6);
        assert!(kde(
            &[600.0],
            KernelShape::Gaussian,
            BandwidthSelector::Ucv,
            &grid
        )
        .is_err());
        assert!(kde(
            &[],
            KernelShape::Gaussian,
            BandwidthSelector::Fixed(1.0),
            &grid
        )
        .is_err());
    }

    #[test]
    fn kde_is_an_average_of_kernels() {
        let grid = TimeGrid::from_range(0.0, 1200.0, 1.0).unwrap();
        let h = BandwidthSelector::Fixed(50.0);
        let both = kde(&[600.0, 400.0], KernelShape::Gaussian, h, &grid)
            .unwrap()
            .series;
        let a = kde(&[600.0], KernelShape::Gaussian, h, &grid)
            .unwrap()
            .series;
        let b = kde(&[400.0], KernelShape::Gaussian, h, &grid)
            .unwrap()
            .series;
        let avg = sum_series(&[a, b], 0.5).unwrap();
        for (x, y) in both.values().iter().zip(avg.values()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn kde_from_points() {
        let grid = TimeGrid::from_range(0.0, 3000.0, 1.0).unwrap();
        let gauss = |m: f64, s: f64| {
            normalize(
                &DensitySeries::new(
                    grid,
                    grid.values()
                        .map(|t| (-0.5 * ((t - m) / s).powi(2)).exp())
                        .collect(),
                )
                .unwrap(),
            )
            .unwrap()
        };
        let symmetric: Vec<_> = [900.0, 1200.0, 1350.0, 1800.0]
            .iter()
            .map(|m| gauss(*m, 30.0))
            .collect();
        let sel = BandwidthSelector::Fixed(40.0);
        let runs: Vec<_> = [
            PointEstimateKind::Mean,
            PointEstimateKind::Median,
            PointEstimateKind::Map,
        ]
        .into_iter()
        .map(|w| {
            kde_from_posterior_points(&symmetric, w, KernelShape::Gaussian, sel, &grid).unwrap()
        })
        .collect();
        for run in &runs[1..] {
            for (a, b) in run.points.iter().zip(&runs[0].points) {
                assert!((a - b).abs() <= 1.0);
            }
        }
        assert_eq!(runs[1].which, PointEstimateKind::Median);

        // bimodal posteriors whose taller mode is far from the median
        let bimodal: Vec<_> = [1000.0, 1400.0, 2000.0]
            .iter()
            .map(|m| {
                let a = gauss(*m, 20.0);
                let b = gauss(*m + 300.0, 60.0);
                normalize(&sum_series(&[a, b], 1.0).unwrap()).unwrap()
            })
            .collect();
        let by_map = kde_from_posterior_points(
            &bimodal,
            PointEstimateKind::Map,
            KernelShape::Gaussian,
            sel,
            &grid,
        )
        .unwrap();
        let by_median = kde_from_posterior_points(
            &bimodal,
            PointEstimateKind::Median,
            KernelShape::Gaussian,
            sel,
            &grid,
        )
        .unwrap();
        assert_ne!(by_map.estimate.series, by_median.estimate.series);

        let single = kde_from_posterior_points(
            &symmetric[..1],
            PointEstimateKind::Map,
            KernelShape::Gaussian,
            sel,
            &grid,
        )
        .unwrap();
        assert_eq!(
            crate::grid::argmax_map(&single.estimate.series).unwrap(),
            900.0
        );
    }

    proptest! {
        #[test]
        fn kde_is_shift_equivariant(
            points in prop::collection::vec(200i32..800, 1..20),
            delta in -150i32..150,
            h in 1.0f64..80.0,
        ) {
            let grid = TimeGrid::from_range(0.0, 1000.0, 1.0).unwrap();
            let moved_grid = grid.shifted(delta as f64).unwrap();
            let x: Vec<f64> = points.iter().map(|p| *p as f64).collect();
            let moved: Vec<f64> = points.iter().map(|p| (p + delta) as f64).collect();
            for shape in KernelShape::ALL {
                let a = kde_with_bandwidth(&x, shape, h, &grid).unwrap();
                let b = kde_with_bandwidth(&moved, shape, h, &moved_grid).unwrap();
                prop_assert_eq!(a.values(), b.values());
            }
        }
    }
}
