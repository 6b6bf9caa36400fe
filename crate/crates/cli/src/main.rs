use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use tfd_core::io::OutputFormat;
use tfd_core::montecarlo::DEFAULT_GUESSES;
use tfd_core::{BandwidthSelector, KernelShape, PointEstimateKind, SpdScale, TfdError};

mod pipeline;

/// Temporal frequency distributions from radiocarbon dates.
#[derive(Parser, Debug)]
#[command(name = "tfd", version, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Calibrate each date into a posterior density over calendar time.
    Calibrate {
        #[command(flatten)]
        common: Common,
    },
    /// Summed probability distribution of the calibrated dates.
    Spd {
        #[command(flatten)]
        common: Common,
        /// raw (mass = n), normalized (mass = 1) or a positive constant.
        #[arg(long, default_value = "raw", value_parser = parse_with::<SpdScale>)]
        scale: SpdScale,
    },
    /// Kernel density estimate over one point estimate per date.
    Kde {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        kernel: KernelArgs,
        /// Point estimate taken from each posterior.
        #[arg(long, default_value = "median", value_parser = parse_with::<PointEstimateKind>)]
        point_estimate: PointEstimateKind,
    },
    /// Composite KDE averaged over Monte Carlo draws from the posteriors.
    Ckde {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        kernel: KernelArgs,
        #[command(flatten)]
        mc: McArgs,
    },
    /// Summed distribution smoothed by a kernel (default: Laplace with the IQR rule).
    Wkde {
        #[command(flatten)]
        common: Common,
        /// Kernel shape.
        #[arg(long, default_value = "laplace", value_parser = parse_with::<KernelShape>)]
        kernel: KernelShape,
        /// iqr (bandwidth from the interquartile range and sample size) or fixed:H.
        #[arg(long, default_value = "iqr", value_parser = pipeline::parse_wkde_bandwidth)]
        bandwidth: tfd_core::weighted_kde::WkdeBandwidth,
    },
    /// Composite occupation index: area-scaled windows averaged over Monte Carlo draws.
    Hoi {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        mc: McArgs,
        /// Half-width of each occupation window, in years.
        #[arg(long, default_value_t = tfd_core::hoi::DEFAULT_HALF_WIDTH)]
        window_half_width: f64,
        /// Drop sites whose date fails to calibrate instead of aborting.
        #[arg(long)]
        skip_failed: bool,
    },
    /// Mean, median and MAP of each calibrated date.
    Pointest {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Calibration curve file (cal BP, 14C age, sigma columns).
    #[arg(long)]
    curve: PathBuf,
    /// Dataset CSV with id, c14_age, c14_error and optional site_id, site_area, curve_id.
    #[arg(long, conflicts_with = "date")]
    dates: Option<PathBuf>,
    /// Inline date as AGE,ERROR or AGE,ERROR,SITE_AREA; repeatable.
    #[arg(long, value_name = "R,S")]
    date: Vec<String>,
    /// Most recent grid point, cal BP. Derived from the dates when omitted.
    #[arg(long)]
    grid_start: Option<f64>,
    /// Oldest grid point, cal BP. Derived from the dates when omitted.
    #[arg(long)]
    grid_end: Option<f64>,
    /// Grid spacing in years.
    #[arg(long, default_value_t = 1.0)]
    grid_step: f64,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format; taken from the --out extension when omitted, else csv.
    #[arg(long, value_parser = parse_with::<OutputFormat>)]
    format: Option<OutputFormat>,
    /// Abort on the first invalid dataset row instead of skipping it.
    #[arg(long)]
    strict: bool,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct KernelArgs {
    /// Kernel shape.
    #[arg(long, default_value = "gaussian", value_parser = parse_with::<KernelShape>)]
    kernel: KernelShape,
    /// ucv (cross-validation), silverman or fixed:H.
    #[arg(long, default_value = "ucv", value_parser = parse_with::<BandwidthSelector>)]
    bandwidth: BandwidthSelector,
}

#[derive(Args, Debug)]
struct McArgs {
    /// Monte Carlo draws from the joint posterior.
    #[arg(long, default_value_t = DEFAULT_GUESSES)]
    guesses: usize,
    /// Random seed; equal seeds give identical output.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_with<T: FromStr<Err = TfdError>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: TfdError| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match pipeline::run(cli.command) {
        Ok(warnings) => {
            for w in warnings {
                eprintln!("warning: {w}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
