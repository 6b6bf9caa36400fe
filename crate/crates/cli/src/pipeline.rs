use std::io::Write as _;
use std::path::Path;

use tfd_core::calibration::{INDEPENDENCE_ASSUMPTION, LIKELIHOOD_MODEL, PRIOR_MODEL};
use tfd_core::grid::{point_estimates, DEFAULT_SPAN};
use tfd_core::io::{
    self, CurveInfo, Method, OutputFormat, Parameters, PointEstimateRow, Record, ResultEnvelope,
};
use tfd_core::kde::kde_from_posterior_points;
use tfd_core::montecarlo::CkdeOptions;
use tfd_core::weighted_kde::WkdeBandwidth;
use tfd_core::{
    calibrate_all, choid, ckde, spd, weighted_kde, CalibrationCurve, DateRecord, DensitySeries,
    McConfig, Result, SiteRecord, SpdScale, TfdError, TimeGrid, WkdeConfig,
};

use crate::{Command, Common, McArgs};

/// Padding added around the derived grid, in years.
const AUTO_GRID_PADDING: f64 = 500.0;
/// Half-width of the derived grid around each date, in combined sd.
const AUTO_GRID_SIGMAS: f64 = 6.0;

pub(crate) fn parse_wkde_bandwidth(s: &str) -> std::result::Result<WkdeBandwidth, String> {
    match s {
        "iqr" => Ok(WkdeBandwidth::IqrRule),
        _ => s
            .strip_prefix("fixed:")
            .and_then(|h| h.parse::<f64>().ok())
            .filter(|h| *h > 0.0 && h.is_finite())
            .map(WkdeBandwidth::Fixed)
            .ok_or_else(|| format!("bandwidth must be iqr or fixed:H with H > 0, got '{s}'")),
    }
}

struct Inputs {
    curve: CalibrationCurve,
    curve_info: CurveInfo,
    records: Vec<Record>,
    grid: TimeGrid,
    warnings: Vec<String>,
}

impl Inputs {
    fn load(common: &Common) -> Result<Self> {
        if let Some(n) = common.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| TfdError::InvalidParameter(format!("--threads: {e}")))?;
        }
        let curve = io::parse_curve(&common.curve)?;
        let curve_info = CurveInfo::of(&curve, Some(common.curve.display().to_string()));
        let mut warnings = Vec::new();
        let records = match &common.dates {
            Some(path) => {
                let dataset = io::parse_dates(path, common.strict)?;
                warnings.extend(
                    dataset
                        .parse_warnings
                        .iter()
                        .map(|w| format!("{}: skipped {w}", path.display())),
                );
                dataset.records
            }
            None => common
                .date
                .iter()
                .enumerate()
                .map(|(i, spec)| inline_record(i, spec))
                .collect::<Result<_>>()?,
        };
        if records.is_empty() {
            return Err(TfdError::EmptyInput(
                "no dates given; use --dates or --date",
            ));
        }
        for r in &records {
            if let Some(id) = r
                .date()
                .curve_id
                .as_deref()
                .filter(|id| *id != curve.name())
            {
                warnings.push(format!(
                    "{}: curve_id '{id}' differs from the supplied curve '{}'",
                    r.date().id,
                    curve.name()
                ));
            }
        }
        let grid = grid_for(common, &curve, &records)?;
        Ok(Inputs {
            curve,
            curve_info,
            records,
            grid,
            warnings,
        })
    }

    fn dates(&self) -> Vec<DateRecord> {
        self.records.iter().map(|r| r.date().clone()).collect()
    }

    fn parameters(&self) -> Parameters {
        Parameters {
            grid: Some(self.grid),
            curve: Some(self.curve_info.clone()),
            inputs: self.records.clone(),
            likelihood: Some(LIKELIHOOD_MODEL.into()),
            prior: Some(PRIOR_MODEL.into()),
            assumptions: vec![INDEPENDENCE_ASSUMPTION.into()],
            ..Parameters::default()
        }
    }

    /// Posteriors in input order; any failure aborts.
    fn posteriors(&mut self) -> Result<Vec<(String, DensitySeries)>> {
        let dates = self.dates();
        let mut out = Vec::with_capacity(dates.len());
        for result in calibrate_all(&dates, &self.curve, &self.grid) {
            let c = result?;
            self.warnings.extend(c.truncation_warning());
            out.push((c.id, c.posterior));
        }
        Ok(out)
    }
}

fn inline_record(i: usize, spec: &str) -> Result<Record> {
    let bad =
        || TfdError::InvalidParameter(format!("--date expects R,S or R,S,AREA, got '{spec}'"));
    let fields = spec
        .split(',')
        .map(|f| f.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<Vec<_>>>()?;
    let id = format!("date{}", i + 1);
    match fields[..] {
        [r, s] => Ok(Record::Date(DateRecord::new(id, r, s)?)),
        [r, s, area] => {
            let date = DateRecord::new(id.clone(), r, s)?;
            Ok(Record::Site(SiteRecord::new(date, id, area)?))
        }
        _ => Err(bad()),
    }
}

/// Explicit bounds where given; otherwise the span of curve knots compatible
/// with any date, padded and clipped to the curve.
fn grid_for(common: &Common, curve: &CalibrationCurve, records: &[Record]) -> Result<TimeGrid> {
    let step = common.grid_step;
    if !(step > 0.0 && step.is_finite()) {
        return Err(TfdError::InvalidParameter(format!(
            "--grid-step must be > 0, got {step}"
        )));
    }
    let (span_lo, span_hi) = curve.span();
    let (lo, hi) = match (common.grid_start, common.grid_end) {
        (Some(a), Some(b)) => (a, b),
        (start, end) => {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for r in records {
                let d = r.date();
                for k in curve.knots() {
                    if (k.mu - d.r).abs()
                        <= AUTO_GRID_SIGMAS * (d.s * d.s + k.sigma * k.sigma).sqrt()
                    {
                        lo = lo.min(k.cal_bp);
                        hi = hi.max(k.cal_bp);
                    }
                }
            }
            if lo > hi {
                (lo, hi) = (span_lo, span_hi);
            }
            let floor = span_lo.max(DEFAULT_SPAN.0);
            let ceil = span_hi.min(DEFAULT_SPAN.1);
            let mut lo = ((lo - AUTO_GRID_PADDING).max(floor) / step).floor() * step;
            let mut hi = ((hi + AUTO_GRID_PADDING).min(ceil) / step).ceil() * step;
            if lo < floor {
                lo += step;
            }
            if hi > ceil {
                hi -= step;
            }
            (start.unwrap_or(lo), end.unwrap_or(hi))
        }
    };
    TimeGrid::from_range(lo, hi, step)
}

fn mc_config(mc: &McArgs) -> Result<McConfig> {
    McConfig::new(mc.seed, mc.guesses)
}

fn medians(posteriors: &[(String, DensitySeries)]) -> Result<Vec<f64>> {
    posteriors
        .iter()
        .map(|(_, p)| point_estimates(p).map(|e| e.median))
        .collect()
}

fn series_only(posteriors: Vec<(String, DensitySeries)>) -> Vec<DensitySeries> {
    posteriors.into_iter().map(|(_, p)| p).collect()
}

/// Runs one subcommand and returns its warnings.
pub(crate) fn run(command: Command) -> Result<Vec<String>> {
    let (common, env, warnings) = match command {
        Command::Calibrate { common } => {
            let mut inputs = Inputs::load(&common)?;
            let mut env = ResultEnvelope::new(Method::Calibrate, inputs.parameters());
            for (id, p) in inputs.posteriors()? {
                env.push_series(id, &p);
            }
            (common, env, inputs.warnings)
        }
        Command::Spd { common, scale } => {
            let mut inputs = Inputs::load(&common)?;
            let posteriors = inputs.posteriors()?;
            let rug = medians(&posteriors)?;
            let result = spd(&series_only(posteriors), scale)?;
            let mut env = ResultEnvelope::new(
                Method::Spd,
                Parameters {
                    scale: Some(scale),
                    ..inputs.parameters()
                },
            );
            env.push_series("spd", &result.series);
            env.rug = rug;
            (common, env, inputs.warnings)
        }
        Command::Kde {
            common,
            kernel,
            point_estimate,
        } => {
            let mut inputs = Inputs::load(&common)?;
            let posteriors = series_only(inputs.posteriors()?);
            let result = kde_from_posterior_points(
                &posteriors,
                point_estimate,
                kernel.kernel,
                kernel.bandwidth,
                &inputs.grid,
            )?;
            let mut env = ResultEnvelope::new(
                Method::Kde,
                Parameters {
                    kernel: Some(kernel.kernel),
                    bandwidth_selector: Some(kernel.bandwidth.to_string()),
                    bandwidth: Some(result.estimate.bandwidth),
                    point_estimate: Some(point_estimate),
                    ..inputs.parameters()
                },
            );
            env.push_series("kde", &result.estimate.series);
            env.rug = result.points;
            (common, env, inputs.warnings)
        }
        Command::Ckde { common, kernel, mc } => {
            let mut inputs = Inputs::load(&common)?;
            let cfg = mc_config(&mc)?;
            let posteriors = inputs.posteriors()?;
            let rug = medians(&posteriors)?;
            let options = CkdeOptions {
                shape: kernel.kernel,
                selector: kernel.bandwidth,
                retain_per_guess: false,
            };
            let result = ckde(&series_only(posteriors), options, &cfg, &inputs.grid)?;
            if !result.fallback_guesses.is_empty() {
                inputs.warnings.push(format!(
                    "{} of {} guesses had a degenerate sample and reused a fallback bandwidth",
                    result.fallback_guesses.len(),
                    cfg.guesses
                ));
            }
            let mut env = ResultEnvelope::new(
                Method::Ckde,
                Parameters {
                    kernel: Some(kernel.kernel),
                    bandwidth_selector: Some(kernel.bandwidth.to_string()),
                    per_guess_bandwidths: result.per_guess_bandwidths,
                    monte_carlo: Some(cfg),
                    ..inputs.parameters()
                },
            );
            env.push_series("ckde", &result.composite);
            env.rug = rug;
            (common, env, inputs.warnings)
        }
        Command::Wkde {
            common,
            kernel,
            bandwidth,
        } => {
            let mut inputs = Inputs::load(&common)?;
            let posteriors = inputs.posteriors()?;
            let rug = medians(&posteriors)?;
            let summed = spd(&series_only(posteriors), SpdScale::Raw)?;
            let cfg = WkdeConfig {
                shape: kernel,
                bandwidth,
            };
            let result = weighted_kde(&summed, &cfg, &inputs.grid)?;
            inputs.warnings.extend(result.truncation_warning());
            let mut env = ResultEnvelope::new(
                Method::Wkde,
                Parameters {
                    kernel: Some(kernel),
                    bandwidth_selector: Some(match bandwidth {
                        WkdeBandwidth::IqrRule => "iqr".to_string(),
                        WkdeBandwidth::Fixed(h) => format!("fixed:{h}"),
                    }),
                    bandwidth: Some(result.bandwidth),
                    ..inputs.parameters()
                },
            );
            env.push_series("wkde", &result.series);
            env.rug = rug;
            (common, env, inputs.warnings)
        }
        Command::Hoi {
            common,
            mc,
            window_half_width,
            skip_failed,
        } => {
            let mut inputs = Inputs::load(&common)?;
            let cfg = mc_config(&mc)?;
            let mut sites = Vec::new();
            for record in &inputs.records {
                match record {
                    Record::Site(s) => sites.push(s.clone()),
                    Record::Date(d) if skip_failed => inputs
                        .warnings
                        .push(format!("{}: skipped, no site_area", d.id)),
                    Record::Date(d) => {
                        return Err(TfdError::InvalidRecord {
                            id: d.id.clone(),
                            message: "missing site_area".into(),
                        })
                    }
                }
            }
            if sites.is_empty() {
                return Err(TfdError::EmptyInput("no records with a site_area"));
            }
            let result = choid(
                &sites,
                &inputs.curve,
                &inputs.grid,
                &cfg,
                window_half_width,
                skip_failed,
            )?;
            inputs.warnings.extend(
                result
                    .skipped
                    .iter()
                    .map(|(id, why)| format!("{id}: skipped, {why}")),
            );
            inputs.warnings.extend(
                result
                    .clipped
                    .iter()
                    .map(|id| format!("{id}: occupation window reaches past the grid edge")),
            );
            let mut env = ResultEnvelope::new(
                Method::Hoi,
                Parameters {
                    monte_carlo: Some(cfg),
                    window_half_width: Some(window_half_width),
                    skip_failed: Some(skip_failed),
                    ..inputs.parameters()
                },
            );
            env.push_series("choid", &result.series);
            (common, env, inputs.warnings)
        }
        Command::Pointest { common } => {
            let mut inputs = Inputs::load(&common)?;
            let mut env = ResultEnvelope::new(Method::Pointest, inputs.parameters());
            for (id, p) in inputs.posteriors()? {
                env.point_estimates.push(PointEstimateRow {
                    id,
                    estimates: point_estimates(&p)?,
                });
            }
            (common, env, inputs.warnings)
        }
    };
    let mut env = env;
    env.warnings = warnings.clone();
    emit(&env, &common)?;
    Ok(warnings)
}

fn emit(env: &ResultEnvelope, common: &Common) -> Result<()> {
    let format = common
        .format
        .or_else(|| common.out.as_deref().and_then(OutputFormat::from_extension))
        .unwrap_or(OutputFormat::Csv);
    if format == OutputFormat::Svg && env.series.is_empty() {
        return Err(TfdError::InvalidParameter(format!(
            "{} output cannot be drawn as svg",
            env.method
        )));
    }
    match &common.out {
        Some(path) => io::write_result(env, format, path),
        None => {
            let text = io::render_result(env, format)?;
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| TfdError::io(Path::new("<stdout>"), e))
        }
    }
}
