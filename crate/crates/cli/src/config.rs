//! Flags, the JSON config file and the resolved settings.

use std::fmt;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use crib_core::CribError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Optimal-mode efficiency over (d0, γ)
    SweepOptimal,
    /// Best Gaussian input over (d0, γ)
    SweepGaussian,
    /// Gaussian efficiency on a (t_c, t_w) lattice
    GaussianMap,
    /// Sampled optimal input modes
    Modes,
    /// First-order vs numeric broadening-stage efficiency over γ
    Perturbative,
    /// Transmission of the unbroadened ensemble over ω
    Transmission,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Times in units of 1/μ, frequencies in units of μ.
#[derive(Debug, Parser)]
#[command(name = "crib", version, about, allow_negative_numbers = true)]
pub struct Args {
    #[arg(value_enum)]
    pub command: Option<Command>,
    /// JSON file with the same keys as the long flags; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output path, `-` for stdout
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Worker threads; 1 gives reproducible scheduling
    #[arg(long)]
    pub threads: Option<usize>,
    /// Comma-separated optical depths
    #[arg(long, value_delimiter = ',')]
    pub d0: Option<Vec<f64>>,
    /// Comma-separated controlled widths γ/μ
    #[arg(long, value_delimiter = ',')]
    pub gamma: Option<Vec<f64>>,
    /// Intrinsic classes (odd)
    #[arg(long)]
    pub grid_k: Option<usize>,
    /// Controlled classes (odd)
    #[arg(long)]
    pub grid_n: Option<usize>,
    /// Grid half-width in standard deviations
    #[arg(long)]
    pub extent: Option<f64>,
    /// Tanh-sinh level of the time grids (about 109 nodes at 2)
    #[arg(long)]
    pub quad_level: Option<u32>,
    /// Talbot contour nodes (even)
    #[arg(long)]
    pub contour_nodes: Option<usize>,
    /// Seed for the random optimizer starts
    #[arg(long)]
    pub seed: Option<u64>,
    /// Broadening time for `perturbative`
    #[arg(long)]
    pub tau_d: Option<f64>,
    /// Comma-separated detunings for `transmission` (default: ±5 γ0, 201 points)
    #[arg(long, value_delimiter = ',')]
    pub omega: Option<Vec<f64>>,
    /// Lattice points per axis for `gaussian-map`
    #[arg(long)]
    pub map_points: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct FileConfig {
    command: Option<Command>,
    out: Option<String>,
    format: Option<Format>,
    threads: Option<usize>,
    d0: Option<Vec<f64>>,
    gamma: Option<Vec<f64>>,
    grid_k: Option<usize>,
    grid_n: Option<usize>,
    extent: Option<f64>,
    quad_level: Option<u32>,
    contour_nodes: Option<usize>,
    seed: Option<u64>,
    tau_d: Option<f64>,
    omega: Option<Vec<f64>>,
    map_points: Option<usize>,
}

/// Fully resolved run settings. Everything except the destination and the
/// thread count is echoed into the output header.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct Settings {
    pub command: Command,
    #[serde(skip)]
    pub out: String,
    #[serde(skip)]
    pub format: Format,
    #[serde(skip)]
    pub threads: Option<usize>,
    pub d0: Vec<f64>,
    pub gamma: Vec<f64>,
    pub grid_k: usize,
    pub grid_n: usize,
    pub extent: f64,
    pub quad_level: u32,
    pub contour_nodes: usize,
    pub seed: u64,
    pub tau_d: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<Vec<f64>>,
    pub map_points: usize,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "{m}"),
        }
    }
}

impl From<CribError> for CliError {
    fn from(e: CribError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

/// Optical depths outside this range make the detuning grid either too
/// wide or too narrow for the stiff propagators to finish in a sweep.
const D0_RANGE: (f64, f64) = (1.0, 5000.0);
const MAX_GAMMA: f64 = 100.0;

/// 25 log-spaced widths over [0.1, 10].
pub fn default_gammas() -> Vec<f64> {
    (0..25).map(|i| 10f64.powf(-1.0 + 2.0 * i as f64 / 24.0)).collect()
}

pub fn resolve(args: Args) -> Result<Settings, CliError> {
    let file = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str::<FileConfig>(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };
    let command = args
        .command
        .or(file.command)
        .ok_or_else(|| CliError::Config("no command given; see `crib --help`".into()))?;
    let s = Settings {
        command,
        out: args.out.or(file.out).unwrap_or_else(|| "-".into()),
        format: args.format.or(file.format).unwrap_or(Format::Csv),
        threads: args.threads.or(file.threads),
        d0: args.d0.or(file.d0).unwrap_or_else(|| vec![25.0, 50.0, 100.0]),
        gamma: args.gamma.or(file.gamma).unwrap_or_else(default_gammas),
        grid_k: args.grid_k.or(file.grid_k).unwrap_or(33),
        grid_n: args.grid_n.or(file.grid_n).unwrap_or(33),
        extent: args.extent.or(file.extent).unwrap_or(5.0),
        quad_level: args.quad_level.or(file.quad_level).unwrap_or(crib_core::kernels::DEFAULT_QUAD_LEVEL),
        contour_nodes: args
            .contour_nodes
            .or(file.contour_nodes)
            .unwrap_or(crib_core::laplace::DEFAULT_CONTOUR_NODES),
        seed: args.seed.or(file.seed).unwrap_or(0),
        tau_d: args.tau_d.or(file.tau_d).unwrap_or(1.0),
        omega: args.omega.or(file.omega),
        map_points: args.map_points.or(file.map_points).unwrap_or(41),
    };
    validate(&s)?;
    Ok(s)
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(msg()))
    }
}

fn validate(s: &Settings) -> Result<(), CliError> {
    check(!s.d0.is_empty(), || "d0 list is empty".into())?;
    check(!s.gamma.is_empty(), || "gamma list is empty".into())?;
    for &d in &s.d0 {
        check(d >= D0_RANGE.0 && d <= D0_RANGE.1, || format!("d0 must be in [{}, {}], got {d}", D0_RANGE.0, D0_RANGE.1))?;
    }
    let min_gamma = if s.command == Command::Perturbative { f64::MIN_POSITIVE } else { 0.0 };
    for &g in &s.gamma {
        check(g >= min_gamma && g <= MAX_GAMMA, || format!("gamma must be in [{min_gamma}, {MAX_GAMMA}], got {g}"))?;
    }
    for (name, v) in [("grid-k", s.grid_k), ("grid-n", s.grid_n)] {
        check(v % 2 == 1 && v <= 129, || format!("{name} must be odd and at most 129, got {v}"))?;
    }
    check(s.extent > 0.0 && s.extent <= 20.0, || format!("extent must be in (0, 20], got {}", s.extent))?;
    check((1..=8).contains(&s.quad_level), || format!("quad-level must be in 1..=8, got {}", s.quad_level))?;
    check(s.contour_nodes % 2 == 0 && (8..=128).contains(&s.contour_nodes), || {
        format!("contour-nodes must be even and in 8..=128, got {}", s.contour_nodes)
    })?;
    check(s.tau_d > 0.0 && s.tau_d.is_finite(), || format!("tau-d must be positive, got {}", s.tau_d))?;
    check((2..=401).contains(&s.map_points), || format!("map-points must be in 2..=401, got {}", s.map_points))?;
    check(s.threads != Some(0), || "threads must be at least 1".into())?;
    if let Some(w) = &s.omega {
        check(!w.is_empty() && w.iter().all(|x| x.is_finite()), || "omega list must be non-empty and finite".into())?;
    }
    Ok(())
}
