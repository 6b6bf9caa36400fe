//! Monte-Carlo propagation of dating uncertainty.
//!
//! Each guess `g` draws one timestamp per date from its posterior. Guess `g`
//! always uses its own ChaCha8 stream (key from the seed, stream id `g`), so
//! the draws of a guess never depend on which thread runs it or in what
//! order. Per-guess summaries are reduced in ascending `g`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TfdError};
use crate::grid::{point_estimates, DensitySeries, GuessVector, TimeGrid};
use crate::kde::{
    kde_with_bandwidth, select_bandwidth, silverman_bandwidth, BandwidthSelector, KernelShape,
};

/// Guess count used when none is given.
pub const DEFAULT_GUESSES: usize = 1000;

/// Guesses handed to the thread pool at a time; the reduction walks chunks in
/// order, so this only bounds memory.
const CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamPolicy {
    /// ChaCha8 keyed by the seed, one stream id per guess index.
    #[default]
    ChaCha8StreamPerGuess,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct McConfig {
    pub seed: u64,
    pub guesses: usize,
    #[serde(default)]
    pub stream_policy: StreamPolicy,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            seed: 0,
            guesses: DEFAULT_GUESSES,
            stream_policy: StreamPolicy::default(),
        }
    }
}

impl McConfig {
    pub fn new(seed: u64, guesses: usize) -> Result<Self> {
        let cfg = McConfig {
            seed,
            guesses,
            stream_policy: StreamPolicy::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.guesses == 0 {
            return Err(TfdError::InvalidParameter(
                "guess count must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// The random stream of guess `g`.
    pub fn stream(&self, g: u64) -> ChaCha8Rng {
        match self.stream_policy {
            StreamPolicy::ChaCha8StreamPerGuess => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(g);
                rng
            }
        }
    }
}

/// Inverse-CDF sampler over the cells of one posterior.
#[derive(Clone, Debug)]
pub struct PosteriorSampler {
    cumulative: Vec<f64>,
}

impl PosteriorSampler {
    pub fn new(posterior: &DensitySeries) -> Result<Self> {
        let mut acc = 0.0;
        let cumulative: Vec<f64> = posterior
            .values()
            .iter()
            .map(|v| {
                acc += v;
                acc
            })
            .collect();
        if !(acc > 0.0) {
            return Err(TfdError::ZeroMass);
        }
        Ok(PosteriorSampler { cumulative })
    }

    /// Grid index of the cell whose cumulative mass first exceeds `u × total`,
    /// for `u ∈ [0, 1)`. Empty cells are never chosen.
    #[inline]
    pub fn index_for(&self, u: f64) -> usize {
        let total = self.cumulative[self.cumulative.len() - 1];
        let target = u * total;
        self.cumulative
            .partition_point(|c| *c <= target)
            .min(self.cumulative.len() - 1)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.index_for(rng.random::<f64>())
    }
}

/// Builds one sampler per posterior; all posteriors must share `grid`.
pub fn samplers(posteriors: &[DensitySeries]) -> Result<Vec<PosteriorSampler>> {
    if let Some(first) = posteriors.first() {
        if posteriors.iter().any(|p| p.grid() != first.grid()) {
            return Err(TfdError::GridMismatch);
        }
    }
    posteriors.iter().map(PosteriorSampler::new).collect()
}

/// One joint draw: each timestamp independently from its marginal.
pub fn sample_guess<R: Rng + ?Sized>(
    samplers: &[PosteriorSampler],
    grid: &TimeGrid,
    guess_index: u64,
    rng: &mut R,
) -> GuessVector {
    let indices = samplers.iter().map(|s| s.sample(rng)).collect();
    GuessVector::from_indices(grid, guess_index, indices)
}

fn guess_for(
    cfg: &McConfig,
    samplers: &[PosteriorSampler],
    grid: &TimeGrid,
    g: u64,
) -> GuessVector {
    sample_guess(samplers, grid, g, &mut cfg.stream(g))
}

/// Equal point masses `1/n` at each timestamp; duplicates stack.
pub fn degenerate_mixture(guess: &GuessVector, grid: &TimeGrid) -> Result<DensitySeries> {
    if guess.is_empty() {
        return Err(TfdError::EmptyInput("guess has no timestamps"));
    }
    let mut counts = vec![0u64; grid.len()];
    for &t in guess.timestamps() {
        let k = grid
            .index_of(t)
            .ok_or_else(|| TfdError::Domain(format!("timestamp {t} is not on the grid")))?;
        counts[k] += 1;
    }
    Ok(counts_to_series(&counts, guess.len() as u64, grid))
}

fn counts_to_series(counts: &[u64], total: u64, grid: &TimeGrid) -> DensitySeries {
    let denom = total as f64 * grid.step();
    DensitySeries::from_parts(*grid, counts.iter().map(|&c| c as f64 / denom).collect())
}

fn check_posteriors(posteriors: &[DensitySeries], grid: &TimeGrid) -> Result<()> {
    if posteriors.is_empty() {
        return Err(TfdError::EmptyInput("no posteriors to sample"));
    }
    if posteriors.iter().any(|p| p.grid() != grid) {
        return Err(TfdError::GridMismatch);
    }
    Ok(())
}

/// Average of `G` degenerate mixtures. Cell counts are integers, so the result
/// is independent of scheduling.
pub fn plugin_estimator(
    posteriors: &[DensitySeries],
    cfg: &McConfig,
    grid: &TimeGrid,
) -> Result<DensitySeries> {
    cfg.validate()?;
    check_posteriors(posteriors, grid)?;
    let samplers = samplers(posteriors)?;
    let g_total = cfg.guesses as u64;
    let counts = (0..g_total.div_ceil(CHUNK as u64))
        .into_par_iter()
        .map(|chunk| {
            let mut counts = vec![0u64; grid.len()];
            let end = ((chunk + 1) * CHUNK as u64).min(g_total);
            for g in chunk * CHUNK as u64..end {
                for &k in guess_for(cfg, &samplers, grid, g).indices() {
                    counts[k] += 1;
                }
            }
            counts
        })
        .reduce(
            || vec![0u64; grid.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(counts_to_series(
        &counts,
        g_total * posteriors.len() as u64,
        grid,
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CkdeResult {
    pub composite: DensitySeries,
    pub per_guess_bandwidths: Vec<f64>,
    /// Guesses whose own sample was degenerate and used a fallback bandwidth.
    pub fallback_guesses: Vec<u64>,
    pub per_guess: Option<Vec<DensitySeries>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CkdeOptions {
    pub shape: KernelShape,
    pub selector: BandwidthSelector,
    /// Keep every per-guess KDE in the result.
    pub retain_per_guess: bool,
}

/// Composite KDE: the unweighted average over guesses of each guess's KDE,
/// each with its own bandwidth.
///
/// A guess whose timestamps are all equal borrows the bandwidth of the
/// closest earlier guess that had one; if there is none, Silverman's rule on
/// the posterior means is used.
pub fn ckde(
    posteriors: &[DensitySeries],
    options: CkdeOptions,
    cfg: &McConfig,
    grid: &TimeGrid,
) -> Result<CkdeResult> {
    cfg.validate()?;
    check_posteriors(posteriors, grid)?;
    let samplers = samplers(posteriors)?;
    let guesses: Vec<GuessVector> = (0..cfg.guesses as u64)
        .into_par_iter()
        .map(|g| guess_for(cfg, &samplers, grid, g))
        .collect();

    let selected: Vec<Result<f64>> = guesses
        .par_iter()
        .map(|guess| select_bandwidth(guess.timestamps(), options.shape, options.selector))
        .collect();

    let mut bandwidths = Vec::with_capacity(selected.len());
    let mut fallback_guesses = Vec::new();
    let mut last_good: Option<f64> = None;
    let mut means_rule: Option<f64> = None;
    for (g, result) in selected.into_iter().enumerate() {
        match result {
            Ok(h) => {
                last_good = Some(h);
                bandwidths.push(h);
            }
            Err(TfdError::DegenerateSample(_)) => {
                let h = match last_good {
                    Some(h) => h,
                    None => match means_rule {
                        Some(h) => h,
                        None => {
                            let h = fallback_from_means(posteriors)?;
                            means_rule = Some(h);
                            h
                        }
                    },
                };
                fallback_guesses.push(g as u64);
                bandwidths.push(h);
            }
            Err(e) => return Err(e),
        }
    }

    let mut sum = vec![0.0; grid.len()];
    let mut retained = options.retain_per_guess.then(Vec::new);
    for chunk in guesses.chunks(CHUNK).zip(bandwidths.chunks(CHUNK)) {
        let kdes = chunk
            .0
            .par_iter()
            .zip(chunk.1)
            .map(|(guess, &h)| kde_with_bandwidth(guess.timestamps(), options.shape, h, grid))
            .collect::<Result<Vec<_>>>()?;
        for series in kdes {
            sum.iter_mut()
                .zip(series.values())
                .for_each(|(s, v)| *s += v);
            if let Some(keep) = retained.as_mut() {
                keep.push(series);
            }
        }
    }
    let g = cfg.guesses as f64;
    let composite = DensitySeries::from_parts(*grid, sum.into_iter().map(|s| s / g).collect());
    Ok(CkdeResult {
        composite,
        per_guess_bandwidths: bandwidths,
        fallback_guesses,
        per_guess: retained,
    })
}

fn fallback_from_means(posteriors: &[DensitySeries]) -> Result<f64> {
    let means = posteriors
        .iter()
        .map(|p| point_estimates(p).map(|pe| pe.mean))
        .collect::<Result<Vec<_>>>()?;
    silverman_bandwidth(&means).map_err(|_| {
        TfdError::DegenerateSample(
            "every guess and the posterior means are degenerate; use a fixed bandwidth".into(),
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::{spd, SpdScale};
    use crate::calibration::calibrate;
    use crate::grid::{l1_distance, mass, normalize, total_variation};
    use crate::kde::kde;
    use crate::synthetic;

    fn point_mass(grid: TimeGrid, t: f64) -> DensitySeries {
        let mut values = vec![0.0; grid.len()];
        values[grid.index_of(t).unwrap()] = 1.0 / grid.step();
        DensitySeries::new(grid, values).unwrap()
    }

    fn sample_posteriors(grid: &TimeGrid) -> Vec<DensitySeries> {
        let curve = synthetic::wiggly_curve(0.0, 5000.0);
        synthetic::twenty_date_sample()
            .iter()
            .map(|d| calibrate(d, &curve, grid).unwrap().posterior)
            .collect()
    }

    #[test]
    fn degenerate_posterior_always_draws_its_point() {
        let grid = TimeGrid::from_range(500.0, 1500.0, 1.0).unwrap();
        let s = samplers(&[point_mass(grid, 1000.0)]).unwrap();
        let mut rng = McConfig::default().stream(0);
        for g in 0..1000 {
            assert_eq!(sample_guess(&s, &grid, g, &mut rng).timestamps(), &[1000.0]);
        }
        assert_eq!(s[0].index_for(0.0), 500);
        assert_eq!(s[0].index_for(0.999_999_999), 500);
    }

    #[test]
    fn two_cell_frequencies() {
        let grid = TimeGrid::from_range(700.0, 1000.0, 100.0).unwrap();
        let p = DensitySeries::new(grid, vec![0.0, 0.0075, 0.0025, 0.0]).unwrap();
        let s = samplers(&[p]).unwrap();
        let mut rng = McConfig::new(42, 1).unwrap().stream(0);
        let draws = 100_000;
        let old = (0..draws).filter(|_| s[0].sample(&mut rng) == 2).count();
        // sd of the frequency is sqrt(0.25 × 0.75 / 1e5) ≈ 0.0014
        assert!((old as f64 / draws as f64 - 0.25).abs() < 0.01);
    }

    #[test]
    fn joint_frequencies_factorize() {
        let grid = TimeGrid::from_range(100.0, 300.0, 100.0).unwrap();
        let a = DensitySeries::new(grid, vec![0.002, 0.005, 0.003]).unwrap();
        let b = DensitySeries::new(grid, vec![0.006, 0.001, 0.003]).unwrap();
        let s = samplers(&[a.clone(), b.clone()]).unwrap();
        let cfg = McConfig::new(9, 50_000).unwrap();
        let mut table = [[0usize; 3]; 3];
        for g in 0..cfg.guesses as u64 {
            let guess = guess_for(&cfg, &s, &grid, g);
            table[guess.indices()[0]][guess.indices()[1]] += 1;
        }
        let n = cfg.guesses as f64;
        let chi2: f64 = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| {
                let expected = n * a.values()[i] * 100.0 * b.values()[j] * 100.0;
                (table[i][j] as f64 - expected).powi(2) / expected
            })
            .sum();
        // chi-square with 8 degrees of freedom, 0.99 quantile
        assert!(chi2 < 20.09, "chi2 = {chi2}");
    }

    #[test]
    fn degenerate_mixture_examples() {
        let grid = TimeGrid::from_range(0.0, 200.0, 1.0).unwrap();
        let one = GuessVector::new(&grid, 0, vec![100.0]).unwrap();
        assert_eq!(
            degenerate_mixture(&one, &grid).unwrap(),
            point_mass(grid, 100.0)
        );

        let three = GuessVector::new(&grid, 0, vec![100.0, 100.0, 50.0]).unwrap();
        let mix = degenerate_mixture(&three, &grid).unwrap();
        assert!((mix.at(100.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((mix.at(50.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((mass(&mix) - 1.0).abs() < 1e-12);

        let coarse = TimeGrid::from_range(0.0, 200.0, 5.0).unwrap();
        let g = GuessVector::new(&coarse, 0, vec![5.0, 195.0, 5.0, 100.0]).unwrap();
        assert!((mass(&degenerate_mixture(&g, &coarse).unwrap()) - 1.0).abs() < 1e-12);
        assert!(GuessVector::new(&coarse, 0, vec![3.0]).is_err());
    }

    #[test]
    fn plugin_with_one_guess_is_that_guess() {
        let grid = TimeGrid::from_range(1200.0, 2200.0, 1.0).unwrap();
        let posts = sample_posteriors(&grid);
        let cfg = McConfig::new(17, 1).unwrap();
        let plugin = plugin_estimator(&posts, &cfg, &grid).unwrap();
        let guess = guess_for(&cfg, &samplers(&posts).unwrap(), &grid, 0);
        assert_eq!(plugin, degenerate_mixture(&guess, &grid).unwrap());
    }

    #[test]
    fn plugin_with_point_masses_is_the_spd() {
        let grid = TimeGrid::from_range(0.0, 300.0, 1.0).unwrap();
        let posts: Vec<_> = [10.0, 50.0, 50.0, 200.0]
            .iter()
            .map(|t| point_mass(grid, *t))
            .collect();
        let expected = spd(&posts, SpdScale::Normalized).unwrap().series;
        for guesses in [1, 7, 100] {
            let plugin =
                plugin_estimator(&posts, &McConfig::new(3, guesses).unwrap(), &grid).unwrap();
            assert_eq!(plugin, expected);
        }
    }

    #[test]
    fn plugin_converges_to_spd() {
        let grid = TimeGrid::from_range(1300.0, 2100.0, 1.0).unwrap();
        let posts = sample_posteriors(&grid);
        let target = spd(&posts, SpdScale::Normalized).unwrap().series;
        let mut medians = Vec::new();
        for guesses in [10, 100, 1000, 10_000] {
            let mut d: Vec<f64> = (1..=5)
                .map(|seed| {
                    let est =
                        plugin_estimator(&posts, &McConfig::new(seed, guesses).unwrap(), &grid)
                            .unwrap();
                    assert!((mass(&est) - 1.0).abs() < 1e-9);
                    l1_distance(&est, &target).unwrap()
                })
                .collect();
            d.sort_by(f64::total_cmp);
            medians.push(d[2]);
        }
        assert!(medians.windows(2).all(|w| w[1] < w[0]), "{medians:?}");
        assert!(medians[3] < 0.02, "{medians:?}");
    }

    #[test]
    fn plugin_is_thread_count_independent() {
        let grid = TimeGrid::from_range(1300.0, 2100.0, 1.0).unwrap();
        let posts = sample_posteriors(&grid);
        let cfg = McConfig::new(5, 500).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| plugin_estimator(&posts, &cfg, &grid).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn ckde_examples() {
        let grid = TimeGrid::from_range(0.0, 1000.0, 1.0).unwrap();
        let pts = [200.0, 450.0, 470.0, 800.0];
        let posts: Vec<_> = pts.iter().map(|t| point_mass(grid, *t)).collect();
        let options = CkdeOptions {
            shape: KernelShape::Gaussian,
            selector: BandwidthSelector::Fixed(30.0),
            retain_per_guess: false,
        };
        let plain = kde(
            &pts,
            KernelShape::Gaussian,
            BandwidthSelector::Fixed(30.0),
            &grid,
        )
        .unwrap()
        .series;
        for guesses in [1, 5] {
            let result = ckde(&posts, options, &McConfig::new(1, guesses).unwrap(), &grid).unwrap();
            for (a, b) in result.composite.values().iter().zip(plain.values()) {
                assert!((a - b).abs() < 1e-15);
            }
        }

        let grid = TimeGrid::from_range(1300.0, 2100.0, 1.0).unwrap();
        let posts = sample_posteriors(&grid);
        let options = CkdeOptions {
            shape: KernelShape::Gaussian,
            selector: BandwidthSelector::Ucv,
            retain_per_guess: true,
        };
        let one = ckde(&posts, options, &McConfig::new(8, 1).unwrap(), &grid).unwrap();
        assert_eq!(&one.composite, &one.per_guess.as_ref().unwrap()[0]);
        let guess = guess_for(
            &McConfig::new(8, 1).unwrap(),
            &samplers(&posts).unwrap(),
            &grid,
            0,
        );
        let direct = kde(
            guess.timestamps(),
            KernelShape::Gaussian,
            BandwidthSelector::Ucv,
            &grid,
        )
        .unwrap();
        assert_eq!(one.per_guess_bandwidths, vec![direct.bandwidth]);
    }

    #[test]
    fn ckde_bandwidths_and_smoothness() {
        let grid = TimeGrid::from_range(1300.0, 2100.0, 1.0).unwrap();
        let posts = sample_posteriors(&grid);
        let options = CkdeOptions {
            shape: KernelShape::Gaussian,
            selector: BandwidthSelector::Silverman,
            retain_per_guess: true,
        };
        let result = ckde(&posts, options, &McConfig::new(2, 200).unwrap(), &grid).unwrap();
        assert!((mass(&result.composite) - 1.0).abs() < 1e-6);
        for series in result.per_guess.as_ref().unwrap() {
            assert!((mass(series) - 1.0).abs() < 1e-6);
        }
        let h = &result.per_guess_bandwidths;
        assert!(h.iter().all(|h| *h > 0.0));
        let mean = h.iter().sum::<f64>() / h.len() as f64;
        let sd = (h.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (h.len() - 1) as f64).sqrt();
        assert!(sd > 0.0 && sd / mean < 0.5, "cv = {}", sd / mean);

        let target = normalize(&spd(&posts, SpdScale::Raw).unwrap().series).unwrap();
        assert!(total_variation(&result.composite) < total_variation(&target));
    }

    #[test]
    fn ckde_degenerate_guesses_fall_back() {
        let grid = TimeGrid::from_range(0.0, 1000.0, 1.0).unwrap();
        // both dates share one point: every guess is degenerate, and so are the means
        let same = vec![point_mass(grid, 500.0), point_mass(grid, 500.0)];
        let options = CkdeOptions {
            shape: KernelShape::Gaussian,
            selector: BandwidthSelector::Ucv,
            retain_per_guess: false,
        };
        let cfg = McConfig::new(0, 3).unwrap();
        assert!(matches!(
            ckde(&same, options, &cfg, &grid),
            Err(TfdError::DegenerateSample(_))
        ));

        // one point mass plus a two-cell posterior: some guesses coincide
        let mut two = vec![0.0; grid.len()];
        two[500] = 0.5;
        two[600] = 0.5;
        let posts = vec![
            point_mass(grid, 500.0),
            DensitySeries::new(grid, two).unwrap(),
        ];
        let cfg = McConfig::new(4, 50).unwrap();
        let result = ckde(&posts, options, &cfg, &grid).unwrap();
        assert!(!result.fallback_guesses.is_empty());
        assert!(result.fallback_guesses.len() < 50);
        let first_good = (0..50u64)
            .find(|g| !result.fallback_guesses.contains(g))
            .unwrap();
        for &g in &result.fallback_guesses {
            let h = result.per_guess_bandwidths[g as usize];
            if g > first_good {
                let previous = (0..g)
                    .rev()
                    .find(|p| !result.fallback_guesses.contains(p))
                    .unwrap();
                assert_eq!(h, result.per_guess_bandwidths[previous as usize]);
            } else {
                assert_eq!(h, silverman_bandwidth(&[500.0, 550.0]).unwrap());
            }
        }
    }
}
