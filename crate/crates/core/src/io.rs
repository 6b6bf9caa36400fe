//! File formats: calibration curves, date/site datasets and result envelopes.
//!
//! Curve files are text. Lines starting with `#` are comments, and data lines
//! hold at least three comma- or whitespace-separated numbers read as
//! `cal BP, 14C BP, sigma`; any further columns are ignored.
//!
//! ```text
//! # synthetic curve
//! 1000,1100,10
//! 1010 1120 20 0 0
//! ```
//!
//! Dataset files are CSV with a header row. `id`, `c14_age` and `c14_error`
//! are required; `site_id`, `site_area` and `curve_id` are optional.
//!
//! ```text
//! id,c14_age,c14_error,site_id,site_area
//! LAB-001,1760,25,ST-1,500
//! ```
//!
//! Result CSV files list rows oldest first (descending cal BP) after two
//! comment lines recording the orientation and the grid:
//!
//! ```text
//! # tfd spd; rows ordered oldest first (descending cal BP)
//! # grid start=1000 step=1 count=3
//! cal_bp,density
//! 1002,0.25
//! 1001,0.5
//! 1000,0.25
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregation::SpdScale;
use crate::calibration::{CalibrationCurve, CurveKnot, DateRecord};
use crate::error::{Result, TfdError};
use crate::grid::{DensitySeries, PointEstimateKind, PointEstimates, TimeGrid};
use crate::hoi::SiteRecord;
use crate::kde::KernelShape;
use crate::montecarlo::McConfig;

/// Shortest text that parses back to the same `f64`; exponent form for very
/// small or very large magnitudes.
pub fn number(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&a) {
        v.to_string()
    } else {
        format!("{v:?}")
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| TfdError::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| TfdError::io(path, e))
}

/// Reads a calibration curve file; the curve is named after the file.
pub fn parse_curve(path: impl AsRef<Path>) -> Result<CalibrationCurve> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "curve".into());
    parse_curve_str(&read(path)?, name)
}

pub fn parse_curve_str(text: &str, name: impl Into<String>) -> Result<CalibrationCurve> {
    let mut knots = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        if fields.len() < 3 {
            return Err(TfdError::Parse {
                line: line_no,
                message: format!("expected at least 3 columns, found {}", fields.len()),
            });
        }
        let mut numbers = [0.0; 3];
        for (slot, field) in numbers.iter_mut().zip(&fields) {
            *slot = field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| TfdError::Parse {
                    line: line_no,
                    message: format!("'{field}' is not a number"),
                })?;
        }
        let [cal_bp, mu, sigma] = numbers;
        if !(sigma > 0.0) {
            return Err(TfdError::Parse {
                line: line_no,
                message: format!("sigma must be > 0, got {sigma}"),
            });
        }
        knots.push(CurveKnot { cal_bp, mu, sigma });
    }
    knots.sort_by(|a, b| a.cal_bp.total_cmp(&b.cal_bp));
    if let Some(w) = knots.windows(2).find(|w| w[0].cal_bp == w[1].cal_bp) {
        return Err(TfdError::DuplicateKnot {
            cal_bp: w[0].cal_bp,
        });
    }
    CalibrationCurve::new(name, knots)
}

pub fn render_curve(curve: &CalibrationCurve) -> String {
    let mut out = format!("# {}\n# cal_bp,c14_bp,sigma\n", curve.name());
    for k in curve.knots() {
        let _ = writeln!(
            out,
            "{},{},{}",
            number(k.cal_bp),
            number(k.mu),
            number(k.sigma)
        );
    }
    out
}

pub fn write_curve(curve: &CalibrationCurve, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &render_curve(curve))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Record {
    Date(DateRecord),
    Site(SiteRecord),
}

impl Record {
    pub fn date(&self) -> &DateRecord {
        match self {
            Record::Date(d) => d,
            Record::Site(s) => &s.date,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParseWarning {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<Record>,
    pub source_path: Option<PathBuf>,
    pub parse_warnings: Vec<ParseWarning>,
}

impl Dataset {
    pub fn dates(&self) -> Vec<DateRecord> {
        self.records.iter().map(|r| r.date().clone()).collect()
    }

    /// One result per record: records without a site area are errors.
    pub fn site_records(&self) -> Vec<Result<SiteRecord>> {
        self.records
            .iter()
            .map(|r| match r {
                Record::Site(s) => Ok(s.clone()),
                Record::Date(d) => Err(TfdError::InvalidRecord {
                    id: d.id.clone(),
                    message: "missing site_area".into(),
                }),
            })
            .collect()
    }
}

pub fn parse_dates(path: impl AsRef<Path>, strict: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let mut dataset = parse_dates_str(&read(path)?, strict)?;
    dataset.source_path = Some(path.to_path_buf());
    Ok(dataset)
}

/// Parses dataset CSV text. Invalid rows become warnings, or abort the parse
/// when `strict` is set.
pub fn parse_dates_str(text: &str, strict: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| TfdError::Schema(e.to_string()))?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let required = |name: &str| {
        column(name).ok_or_else(|| TfdError::Schema(format!("missing required column '{name}'")))
    };
    let id_col = required("id")?;
    let age_col = required("c14_age")?;
    let err_col = required("c14_error")?;
    let site_col = column("site_id");
    let area_col = column("site_area");
    let curve_col = column("curve_id");

    let mut dataset = Dataset::default();
    let mut seen = HashSet::new();
    for row in reader.records() {
        let row = row.map_err(|e| TfdError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let field = |col: Option<usize>| col.and_then(|c| row.get(c)).filter(|v| !v.is_empty());
        let outcome = parse_row(
            field(Some(id_col)),
            field(Some(age_col)),
            field(Some(err_col)),
            field(site_col),
            field(area_col),
            field(curve_col),
        )
        .and_then(|record| {
            if seen.insert(record.date().id.clone()) {
                Ok(record)
            } else {
                Err(format!("duplicate id '{}'", record.date().id))
            }
        });
        match outcome {
            Ok(record) => dataset.records.push(record),
            Err(message) if strict => return Err(TfdError::Parse { line, message }),
            Err(message) => dataset.parse_warnings.push(ParseWarning { line, message }),
        }
    }
    Ok(dataset)
}

fn parse_row(
    id: Option<&str>,
    age: Option<&str>,
    error: Option<&str>,
    site: Option<&str>,
    area: Option<&str>,
    curve: Option<&str>,
) -> std::result::Result<Record, String> {
    let id = id.ok_or("missing id")?;
    let number = |name: &str, v: Option<&str>| -> std::result::Result<f64, String> {
        let v = v.ok_or_else(|| format!("{id}: missing {name}"))?;
        v.parse::<f64>()
            .map_err(|_| format!("{id}: {name} '{v}' is not a number"))
    };
    let mut date = DateRecord {
        id: id.to_string(),
        r: number("c14_age", age)?,
        s: number("c14_error", error)?,
        curve_id: curve.map(str::to_string),
    };
    date.validate().map_err(|e| e.to_string())?;
    match area {
        None => Ok(Record::Date(date)),
        Some(_) => {
            let a = number("site_area", area)?;
            let site_id = site.unwrap_or(id).to_string();
            date.curve_id = curve.map(str::to_string);
            SiteRecord::new(date, site_id, a)
                .map(Record::Site)
                .map_err(|e| e.to_string())
        }
    }
}

pub fn render_dataset(dataset: &Dataset) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| TfdError::Schema(e.to_string());
    writer
        .write_record([
            "id",
            "c14_age",
            "c14_error",
            "site_id",
            "site_area",
            "curve_id",
        ])
        .map_err(csv_err)?;
    for record in &dataset.records {
        let date = record.date();
        let (site, area) = match record {
            Record::Site(s) => (s.site_id.clone(), number(s.area)),
            Record::Date(_) => (String::new(), String::new()),
        };
        writer
            .write_record([
                date.id.clone(),
                number(date.r),
                number(date.s),
                site,
                area,
                date.curve_id.clone().unwrap_or_default(),
            ])
            .map_err(csv_err)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| TfdError::Schema(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &render_dataset(dataset)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Calibrate,
    Spd,
    Kde,
    Ckde,
    Wkde,
    Hoi,
    Pointest,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).map_err(|_| std::fmt::Error)?;
        f.write_str(s.as_str().unwrap_or("unknown"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveInfo {
    pub name: String,
    pub source: Option<String>,
    pub knots: usize,
    pub span: (f64, f64),
}

impl CurveInfo {
    pub fn of(curve: &CalibrationCurve, source: Option<String>) -> Self {
        CurveInfo {
            name: curve.name().to_string(),
            source,
            knots: curve.knots().len(),
            span: curve.span(),
        }
    }
}

/// Everything needed to rerun a pipeline.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub grid: Option<TimeGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<CurveInfo>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<Record>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub likelihood: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub assumptions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<SpdScale>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelShape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth_selector: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_guess_bandwidths: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point_estimate: Option<PointEstimateKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<McConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_half_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_failed: Option<bool>,
}

/// A series in file order: oldest first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSeries {
    pub label: String,
    pub mass: f64,
    pub values_oldest_first: Vec<f64>,
}

impl LabeledSeries {
    pub fn new(label: impl Into<String>, series: &DensitySeries) -> Self {
        LabeledSeries {
            label: label.into(),
            mass: series.mass(),
            values_oldest_first: series.values().iter().rev().copied().collect(),
        }
    }

    pub fn to_series(&self, grid: &TimeGrid) -> Result<DensitySeries> {
        DensitySeries::new(
            *grid,
            self.values_oldest_first.iter().rev().copied().collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointEstimateRow {
    pub id: String,
    #[serde(flatten)]
    pub estimates: PointEstimates,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultEnvelope {
    pub method: Method,
    pub parameters: Parameters,
    #[serde(default)]
    pub series: Vec<LabeledSeries>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub point_estimates: Vec<PointEstimateRow>,
    /// Timestamps drawn as rug marks in plots.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rug: Vec<f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl ResultEnvelope {
    pub fn new(method: Method, parameters: Parameters) -> Self {
        ResultEnvelope {
            method,
            parameters,
            series: Vec::new(),
            point_estimates: Vec::new(),
            rug: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn push_series(&mut self, label: impl Into<String>, series: &DensitySeries) {
        if self.parameters.grid.is_none() {
            self.parameters.grid = Some(*series.grid());
        }
        self.series.push(LabeledSeries::new(label, series));
    }

    /// The envelope's series on its grid, in index order.
    pub fn density_series(&self) -> Result<Vec<(String, DensitySeries)>> {
        let grid = self
            .parameters
            .grid
            .ok_or_else(|| TfdError::Schema("envelope has no grid".into()))?;
        self.series
            .iter()
            .map(|s| Ok((s.label.clone(), s.to_series(&grid)?)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
    Svg,
}

impl OutputFormat {
    pub fn from_extension(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(OutputFormat::Csv),
            "json" => Some(OutputFormat::Json),
            "svg" => Some(OutputFormat::Svg),
            _ => None,
        }
    }
}

impl std::str::FromStr for OutputFormat {
    type Err = TfdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            "svg" => Ok(OutputFormat::Svg),
            other => Err(TfdError::InvalidParameter(format!(
                "unknown format '{other}'"
            ))),
        }
    }
}

pub fn render_result(env: &ResultEnvelope, format: OutputFormat) -> Result<String> {
    match format {
        OutputFormat::Csv => render_csv(env),
        OutputFormat::Json => Ok(serde_json::to_string_pretty(env)? + "\n"),
        OutputFormat::Svg => render_svg(env),
    }
}

pub fn write_result(
    env: &ResultEnvelope,
    format: OutputFormat,
    path: impl AsRef<Path>,
) -> Result<()> {
    write(path.as_ref(), &render_result(env, format)?)
}

pub fn read_envelope(path: impl AsRef<Path>) -> Result<ResultEnvelope> {
    Ok(serde_json::from_str(&read(path.as_ref())?)?)
}

fn render_csv(env: &ResultEnvelope) -> Result<String> {
    let csv_err = |e: csv::Error| TfdError::Schema(e.to_string());
    if !env.point_estimates.is_empty() {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(["id", "mean", "median", "map"])
            .map_err(csv_err)?;
        for row in &env.point_estimates {
            let e = row.estimates;
            writer
                .write_record([
                    row.id.clone(),
                    number(e.mean),
                    number(e.median),
                    number(e.map),
                ])
                .map_err(csv_err)?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| TfdError::Schema(e.to_string()))?;
        return Ok(format!("# tfd {}\n", env.method) + &String::from_utf8(bytes).expect("utf-8"));
    }

    let grid = env
        .parameters
        .grid
        .ok_or_else(|| TfdError::Schema("envelope has no grid".into()))?;
    let mut out = format!(
        "# tfd {}; rows ordered oldest first (descending cal BP)\n# grid start={} step={} count={}\n",
        env.method,
        number(grid.start()),
        number(grid.step()),
        grid.len()
    );
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["cal_bp".to_string()];
    if env.series.len() == 1 {
        header.push("density".into());
    } else {
        header.extend(env.series.iter().map(|s| format!("density:{}", s.label)));
    }
    writer.write_record(&header).map_err(csv_err)?;
    for row in 0..grid.len() {
        let k = grid.len() - 1 - row;
        let mut record = vec![number(grid.value(k))];
        record.extend(
            env.series
                .iter()
                .map(|s| number(s.values_oldest_first[row])),
        );
        writer.write_record(&record).map_err(csv_err)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| TfdError::Schema(e.to_string()))?;
    out.push_str(&String::from_utf8(bytes).expect("csv output is utf-8"));
    Ok(out)
}

/// Reads series back from a result CSV, in grid index order.
pub fn parse_result_csv(text: &str) -> Result<Vec<(String, DensitySeries)>> {
    let mut declared: Option<TimeGrid> = None;
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        if let Some(spec) = line.trim_start_matches('#').trim().strip_prefix("grid ") {
            let mut start = None;
            let mut step = None;
            let mut count = None;
            for part in spec.split_whitespace() {
                match part.split_once('=') {
                    Some(("start", v)) => start = v.parse::<f64>().ok(),
                    Some(("step", v)) => step = v.parse::<f64>().ok(),
                    Some(("count", v)) => count = v.parse::<usize>().ok(),
                    _ => {}
                }
            }
            if let (Some(a), Some(b), Some(c)) = (start, step, count) {
                declared = Some(TimeGrid::new_unbounded(a, b, c)?);
            }
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| TfdError::Schema(e.to_string()))?
        .clone();
    if headers.get(0) != Some("cal_bp") || headers.len() < 2 {
        return Err(TfdError::Schema(
            "expected a cal_bp column followed by densities".into(),
        ));
    }
    let labels: Vec<String> = headers
        .iter()
        .skip(1)
        .map(|h| h.strip_prefix("density:").unwrap_or(h).to_string())
        .collect();
    let mut times = Vec::new();
    let mut columns = vec![Vec::new(); labels.len()];
    for row in reader.records() {
        let row = row.map_err(|e| TfdError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let number = |v: &str| {
            v.parse::<f64>().map_err(|_| TfdError::Parse {
                line,
                message: format!("'{v}' is not a number"),
            })
        };
        times.push(number(&row[0])?);
        for (col, v) in columns.iter_mut().zip(row.iter().skip(1)) {
            col.push(number(v)?);
        }
    }
    times.reverse();
    columns.iter_mut().for_each(|c| c.reverse());
    let grid = match declared {
        Some(g) => g,
        None if times.len() >= 2 => {
            TimeGrid::new_unbounded(times[0], times[1] - times[0], times.len())?
        }
        None => return Err(TfdError::Schema("result has fewer than 2 rows".into())),
    };
    if grid.len() != times.len()
        || times
            .iter()
            .enumerate()
            .any(|(k, t)| (t - grid.value(k)).abs() > 1e-9 * grid.step())
    {
        return Err(TfdError::Schema(
            "cal_bp column does not match a uniform grid".into(),
        ));
    }
    labels
        .into_iter()
        .zip(columns)
        .map(|(label, values)| Ok((label, DensitySeries::new(grid, values)?)))
        .collect()
}

const SVG_WIDTH: f64 = 800.0;
const SVG_HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 36.0;
const MARGIN_BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Static line plot: time runs left to right, so the oldest cal BP is on the
/// left edge.
fn render_svg(env: &ResultEnvelope) -> Result<String> {
    let series = env.density_series()?;
    let grid = env
        .parameters
        .grid
        .expect("density_series checked the grid");
    let (oldest, recent) = (grid.last(), grid.first());
    let ymax = series
        .iter()
        .flat_map(|(_, s)| s.values().iter().copied())
        .fold(0.0, f64::max);
    let ymax = if ymax > 0.0 { ymax * 1.05 } else { 1.0 };
    let plot_w = SVG_WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = SVG_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x = |t: f64| MARGIN_LEFT + (oldest - t) / (oldest - recent) * plot_w;
    let y = |v: f64| MARGIN_TOP + plot_h - v / ymax * plot_h;
    let bottom = MARGIN_TOP + plot_h;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        SVG_WIDTH / 2.0,
        escape(&env.method.to_string())
    );
    let _ = writeln!(
        out,
        r#"<g class="axes" stroke="black"><line x1="{MARGIN_LEFT}" y1="{bottom}" x2="{}" y2="{bottom}"/><line x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" y2="{bottom}"/></g>"#,
        MARGIN_LEFT + plot_w
    );
    for i in 0..=5 {
        let t = oldest - (oldest - recent) * i as f64 / 5.0;
        let v = ymax * i as f64 / 5.0;
        let _ = writeln!(
            out,
            r#"<line x1="{0:.2}" y1="{bottom}" x2="{0:.2}" y2="{1}" stroke="black"/><text x="{0:.2}" y="{2}" text-anchor="middle">{3:.0}</text>"#,
            x(t),
            bottom + 5.0,
            bottom + 18.0,
            t
        );
        let _ = writeln!(
            out,
            r#"<line x1="{0}" y1="{1:.2}" x2="{2}" y2="{1:.2}" stroke="black"/><text x="{3}" y="{4:.2}" text-anchor="end">{5:.2e}</text>"#,
            MARGIN_LEFT - 5.0,
            y(v),
            MARGIN_LEFT,
            MARGIN_LEFT - 8.0,
            y(v) + 4.0,
            v
        );
    }
    let _ = writeln!(
        out,
        r#"<text class="x-label" x="{}" y="{}" text-anchor="middle">cal BP</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        SVG_HEIGHT - 15.0
    );
    let _ = writeln!(
        out,
        r#"<text class="y-label" x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">density</text>"#,
        MARGIN_TOP + plot_h / 2.0
    );
    for (i, (label, s)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = (0..grid.len())
            .rev()
            .map(|k| format!("{:.2},{:.2}", x(grid.value(k)), y(s.values()[k])))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"><title>{}</title></polyline>"#,
            points.join(" "),
            escape(label)
        );
    }
    if !env.rug.is_empty() {
        let _ = write!(out, r#"<g class="rug" stroke="black" stroke-width="0.8">"#);
        for &t in env.rug.iter().filter(|t| grid.contains(**t)) {
            let _ = write!(
                out,
                r#"<line x1="{0:.2}" y1="{1}" x2="{0:.2}" y2="{2}"/>"#,
                x(t),
                bottom - 8.0,
                bottom
            );
        }
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    Ok(out)
}
