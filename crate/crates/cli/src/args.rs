use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use propsplat_core::Point3;

use crate::error::EXIT_CODES_HELP;

#[derive(Debug, Parser)]
#[command(
    name = "propsplat",
    version,
    about = "Map-free radio path-loss modeling with learnable Gaussian offsets",
    after_help = EXIT_CODES_HELP
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed for every stochastic choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Sequential, bit-reproducible execution.
    #[arg(long, global = true)]
    pub strict: bool,
    /// TOML file with `seed`, `threads`, `strict` and a `[train]` table.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate labeled links from a built-in fixture or a world file.
    Synth(SynthArgs),
    /// Split a measurement file into train and test files.
    Split(SplitArgs),
    /// Fit a model to a measurement file.
    Train(TrainArgs),
    /// Predict path loss (or RSSI) for query links.
    Predict(PredictArgs),
    /// Error metrics of a model on labeled links.
    Evaluate(EvaluateArgs),
    /// Coverage raster from one transmitter.
    Grid(GridArgs),
    /// Fingerprint localization from per-gateway RSSI models.
    Localize(LocalizeArgs),
    /// Leave-one-out additivity and sign-consistency checks.
    Diagnose(DiagnoseArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Train the full model and each ablation, report test metrics.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FixtureName {
    #[value(name = "urban-20")]
    Urban20,
    #[value(name = "aniso-walls")]
    AnisoWalls,
    #[value(name = "indoor-9gw")]
    Indoor9gw,
}

/// Waypoints of a drive route.
#[derive(Debug, Clone, PartialEq)]
pub struct Route(pub Vec<Point3>);

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Built-in fixture.
    #[arg(long, conflicts_with = "world")]
    pub fixture: Option<FixtureName>,
    /// World file (obstacles, true exponent, noise).
    #[arg(long, value_name = "FILE", requires_all = ["tx", "freq"])]
    pub world: Option<PathBuf>,
    /// Transmitter position `x,y,z` in meters.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    pub tx: Option<Point3>,
    #[arg(long, value_name = "HZ")]
    pub freq: Option<f64>,
    /// Drive route `x,y,z;x,y,z;...`.
    #[arg(long, value_parser = parse_route, conflicts_with = "random_rx", allow_hyphen_values = true)]
    pub route: Option<Route>,
    /// Sample spacing along the route.
    #[arg(long, default_value_t = 10.0)]
    pub spacing_m: f64,
    /// Number of uniformly placed receivers.
    #[arg(long)]
    pub random_rx: Option<usize>,
    /// Half-width of the square receivers are drawn from.
    #[arg(long, default_value_t = 1000.0)]
    pub extent_m: f64,
    #[arg(long, default_value_t = 1.5)]
    pub rx_z: f64,
    /// Off-grid observations written for the indoor fixture.
    #[arg(long, default_value_t = 200)]
    pub observations: usize,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Greedy spatial thinning: kept receivers are at least this far apart.
    #[arg(long, conflicts_with = "fraction", required_unless_present = "fraction")]
    pub spacing_m: Option<f64>,
    /// Random train fraction.
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblationFlag {
    #[value(name = "no-gaussians")]
    NoGaussians,
    Iso,
    #[value(name = "fixed-ple")]
    FixedPle,
}

/// Training overrides; unset flags fall back to the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainOverrides {
    #[arg(long)]
    pub n_gaussians: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_mu: Option<f64>,
    #[arg(long)]
    pub lr_log_scale: Option<f64>,
    #[arg(long)]
    pub lr_quat: Option<f64>,
    #[arg(long)]
    pub lr_offset: Option<f64>,
    #[arg(long)]
    pub lr_gamma: Option<f64>,
    #[arg(long)]
    pub lr_p0: Option<f64>,
    /// Distance-weight exponent.
    #[arg(long)]
    pub weight_exponent: Option<f64>,
    #[arg(long)]
    pub init_sigma0: Option<f64>,
    #[arg(long)]
    pub gamma_init: Option<f64>,
    /// Fit RSSI targets through a learnable reference power. Implied by
    /// RSSI-valued input.
    #[arg(long)]
    pub rssi_mode: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    /// Ablation switch; repeatable.
    #[arg(long, value_enum)]
    pub ablate: Vec<AblationFlag>,
    /// Print a progress line to stderr every N iterations (0: never).
    #[arg(long, default_value_t = 0)]
    pub log_every: usize,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub queries: PathBuf,
    /// Skip primitives more than K scales from a link.
    #[arg(long, value_name = "K")]
    pub cull_sigmas: Option<f64>,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Also write metrics.json and a manifest here.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FieldArg {
    Prediction,
    Offset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RasterFormat {
    Bin,
    Csv,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    pub tx: Point3,
    /// `min_x,min_y,max_x,max_y` in meters.
    #[arg(long, value_parser = parse_extent, allow_hyphen_values = true)]
    pub extent: [f64; 4],
    #[arg(long)]
    pub cell_size: f64,
    /// Receiver height.
    #[arg(long, default_value_t = 1.5)]
    pub z: f64,
    #[arg(long, value_enum, default_value_t = FieldArg::Prediction)]
    pub field: FieldArg,
    #[arg(long, value_enum, default_value_t = RasterFormat::Bin)]
    pub format: RasterFormat,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    /// CSV with columns `id,x_m,y_m,z_m`.
    #[arg(long, value_name = "FILE")]
    pub gateways: PathBuf,
    /// Directory holding `<gateway id>.psm` RSSI-mode models.
    #[arg(long, value_name = "DIR")]
    pub models_dir: PathBuf,
    /// CSV with one RSSI column per gateway id (empty cell: not heard) and
    /// optional `true_x_m,true_y_m,true_z_m`.
    #[arg(long, value_name = "FILE")]
    pub observations: PathBuf,
    /// Fingerprint area `min_x,min_y,max_x,max_y`.
    #[arg(long, value_parser = parse_extent, allow_hyphen_values = true)]
    pub extent: [f64; 4],
    /// Device height of the fingerprint grid.
    #[arg(long, default_value_t = 1.0)]
    pub z: f64,
    #[arg(long, default_value_t = propsplat_core::eval::DEFAULT_FINGERPRINT_SPACING_M)]
    pub spacing_m: f64,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Errors in the horizontal plane only (default) or in 3D.
    #[arg(long)]
    pub spatial_errors: bool,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Query links (a value column, if present, is ignored).
    #[arg(long, value_name = "FILE")]
    pub queries: PathBuf,
    /// Use at most this many queries.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Primitives per random problem.
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    /// Links per random problem.
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    /// Number of random problems; odd-numbered ones use RSSI mode.
    #[arg(long, default_value_t = 1)]
    pub cases: usize,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-4)]
    pub h: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub test: PathBuf,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

fn parse_numbers<const K: usize>(s: &str) -> Result<[f64; K], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != K {
        return Err(format!("expected {K} comma-separated numbers, got `{s}`"));
    }
    let mut out = [0.0; K];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse::<f64>().map_err(|e| format!("`{p}`: {e}"))?;
        if !o.is_finite() {
            return Err(format!("`{p}` is not finite"));
        }
    }
    Ok(out)
}

pub fn parse_point(s: &str) -> Result<Point3, String> {
    parse_numbers::<3>(s).map(Point3::from_array)
}

fn parse_route(s: &str) -> Result<Route, String> {
    s.split(';').filter(|p| !p.trim().is_empty()).map(parse_point).collect::<Result<_, _>>().map(Route)
}

fn parse_extent(s: &str) -> Result<[f64; 4], String> {
    let e = parse_numbers::<4>(s)?;
    if e[2] <= e[0] || e[3] <= e[1] {
        return Err(format!("extent `{s}` needs max_x > min_x and max_y > min_y"));
    }
    Ok(e)
}
