use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const DEFAULT_SEED: u64 = 424243;

/// Interacting reinforced stochastic processes on hierarchical networks.
///
/// Network files are JSON objects with keys `weights` (row-major, entry
/// [h][j] is the weight of agent h in agent j's action probability),
/// `block_sizes`, `gamma` in (1/2, 1], `c` > 0 and optionally `r_max` in
/// (0, 1) (default 0.99). Step sizes are r(n) = min(c n^-gamma, r_max).
/// Unknown keys are rejected. Exit codes: 0 success, 1 invalid input,
/// 2 unsupported regime. Errors are printed to stderr as JSON.
#[derive(Debug, Parser)]
#[command(name = "urnnet", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a network config and report its family and regime; exports spectral.json when Jordan data is known.
    Validate {
        #[command(flatten)]
        net: NetworkArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run one trajectory and write it as CSV.
    Simulate {
        #[command(flatten)]
        net: NetworkArgs,
        #[command(flatten)]
        init: InitArgs,
        /// Number of steps.
        #[arg(long, default_value_t = 20_000)]
        horizon: u64,
        /// Record every k-th step (default: horizon / 100).
        #[arg(long)]
        stride: Option<u64>,
        /// Run index; selects the random stream together with the seed.
        #[arg(long, default_value_t = 0)]
        run: u64,
        #[command(flatten)]
        rt: RunArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Simulate independent runs and summarize the final states.
    Ensemble {
        #[command(flatten)]
        net: NetworkArgs,
        #[command(flatten)]
        init: InitArgs,
        #[command(flatten)]
        mc: McArgs,
        /// Histogram bins on [0, 1].
        #[arg(long, default_value_t = 50)]
        bins: usize,
        #[command(flatten)]
        rt: RunArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Limiting covariance matrices for the network's regime.
    Covariance {
        #[command(flatten)]
        net: NetworkArgs,
        /// Also write one CSV file per matrix.
        #[arg(long)]
        csv: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Chi-square test of H0: W = W0 from an observed state.
    Test {
        #[command(flatten)]
        net: NetworkArgs,
        #[command(flatten)]
        obs: ObsArgs,
        /// Significance level of the test.
        #[arg(long, default_value_t = 0.05)]
        level: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Confidence interval for the common limit Z_inf.
    Ci {
        #[command(flatten)]
        net: NetworkArgs,
        #[command(flatten)]
        obs: ObsArgs,
        /// Coverage level.
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Confidence region for network parameters by test inversion; writes region.csv.
    Region {
        /// Parametric family of W0.
        #[arg(long, value_enum)]
        family: FamilyArg,
        /// Agents of a cascade (example1).
        #[arg(long)]
        n_agents: Option<usize>,
        /// Leading-group size (example2).
        #[arg(long)]
        n1: Option<usize>,
        /// Follower-group size (example2).
        #[arg(long)]
        n2: Option<usize>,
        /// Grid for alpha as lo:hi:steps.
        #[arg(long)]
        alpha_range: String,
        /// Grid for beta as lo:hi:steps (example2 and sim).
        #[arg(long)]
        beta_range: Option<String>,
        /// Step-size exponent.
        #[arg(long)]
        gamma: f64,
        /// Step-size constant.
        #[arg(long)]
        c: f64,
        /// Step-size clip.
        #[arg(long, default_value_t = urnnet::io::DEFAULT_R_MAX)]
        r_max: f64,
        #[command(flatten)]
        obs: ObsArgs,
        /// Coverage level.
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Polarization table of the 4-agent study; writes table1.csv.
    Table1 {
        #[command(flatten)]
        mc: StudyArgs,
        #[command(flatten)]
        rt: RunArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Density estimates of the final states per scenario; writes density_<scenario>.csv.
    Figures {
        #[command(flatten)]
        mc: StudyArgs,
        /// Histogram bins.
        #[arg(long, default_value_t = 50)]
        bins: usize,
        /// Kernel density grid points on [0, 1].
        #[arg(long, default_value_t = 201)]
        grid: usize,
        #[command(flatten)]
        rt: RunArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Compare a truncated limit sum with its closed form.
    Oracle {
        /// First eigenvalue as re or re,im.
        #[arg(long, allow_hyphen_values = true)]
        x: String,
        /// Second eigenvalue as re or re,im.
        #[arg(long, allow_hyphen_values = true)]
        y: String,
        /// Power of the weight log n - log k (n^(1-gamma) - k^(1-gamma) when gamma < 1).
        #[arg(long, default_value_t = 0)]
        q: u32,
        #[arg(long)]
        c: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        /// Truncation point.
        #[arg(long, default_value_t = 1_000_000)]
        n: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Empirical against theoretical covariance; writes cltcheck_<regime>.json.
    CltCheck {
        #[command(flatten)]
        net: NetworkArgs,
        #[command(flatten)]
        init: InitArgs,
        #[command(flatten)]
        mc: McArgs,
        #[command(flatten)]
        rt: RunArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Distribution of the test statistic over simulated runs; writes calibrate.json.
    Calibrate {
        /// Hypothesized network W0.
        #[command(flatten)]
        net: NetworkArgs,
        /// Network used to simulate (default: W0).
        #[arg(long)]
        truth: Option<PathBuf>,
        #[command(flatten)]
        init: InitArgs,
        #[command(flatten)]
        mc: McArgs,
        /// Significance level.
        #[arg(long, default_value_t = 0.05)]
        level: f64,
        /// Keep adding batches until this many non-degenerate runs exist.
        #[arg(long)]
        min_used: Option<usize>,
        #[command(flatten)]
        rt: RunArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Re-run the command recorded in a manifest.
    Replay {
        /// Manifest written by an earlier run.
        manifest: PathBuf,
        /// Write outputs here instead of the recorded directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FamilyArg {
    Example1,
    Example2,
    Sim,
}

#[derive(Debug, Clone, Args)]
pub struct NetworkArgs {
    /// Network config JSON.
    #[arg(long, visible_alias = "w0")]
    pub network: PathBuf,
    /// Jordan data JSON (eigenvalues, block_orders, P_tilde, Q_tilde as [re, im] pairs).
    /// Required unless the network is a cascade, two-group or 4-agent study network.
    #[arg(long)]
    pub spectral: Option<PathBuf>,
    /// Override gamma from the config.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Override c from the config.
    #[arg(long)]
    pub c: Option<f64>,
    /// Override r_max from the config.
    #[arg(long)]
    pub r_max: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct InitArgs {
    /// Initial inclinations, comma separated; `U` draws uniformly on [0, 1].
    /// Default 0.5 for every agent.
    #[arg(long, allow_hyphen_values = true)]
    pub z0: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct McArgs {
    /// Steps per run.
    #[arg(long, default_value_t = 20_000)]
    pub horizon: u64,
    /// Number of runs.
    #[arg(long, default_value_t = 1000)]
    pub sims: usize,
    /// First run index.
    #[arg(long, default_value_t = 0)]
    pub first_run: u64,
}

#[derive(Debug, Clone, Args)]
pub struct StudyArgs {
    /// Runs per scenario.
    #[arg(long, default_value_t = 5000)]
    pub sims: usize,
    /// Steps per run.
    #[arg(long, default_value_t = 20_000)]
    pub horizon: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ObsArgs {
    /// Observed inclinations: a trajectory CSV (last row used) or a one-row CSV of Z_1..Z_N.
    #[arg(long)]
    pub state: PathBuf,
    /// Step at which the state was observed (default: taken from a trajectory file).
    #[arg(long)]
    pub n: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Master seed; every random stream derives from it.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Worker threads (0: one per core). Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Parses `lo:hi:steps`.
pub fn parse_range(s: &str) -> Result<(f64, f64, usize), String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("range {s:?} is not lo:hi:steps"));
    }
    let lo = parts[0].trim().parse::<f64>().map_err(|e| format!("{s:?}: {e}"))?;
    let hi = parts[1].trim().parse::<f64>().map_err(|e| format!("{s:?}: {e}"))?;
    let steps = parts[2].trim().parse::<usize>().map_err(|e| format!("{s:?}: {e}"))?;
    if steps == 0 || !(lo <= hi) {
        return Err(format!("range {s:?} needs lo <= hi and steps >= 1"));
    }
    Ok((lo, hi, steps))
}

/// Parses a comma-separated initial state; `U` marks a uniform draw.
pub fn parse_z0(s: &str) -> Result<Vec<Option<f64>>, String> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            if t.eq_ignore_ascii_case("u") {
                Ok(None)
            } else {
                t.parse::<f64>().map(Some).map_err(|e| format!("z0 entry {t:?}: {e}"))
            }
        })
        .collect()
}

/// Parses `re` or `re,im`.
pub fn parse_complex(s: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').collect();
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{s:?}: {e}"));
    match parts.as_slice() {
        [re] => Ok((num(re)?, 0.0)),
        [re, im] => Ok((num(re)?, num(im)?)),
        _ => Err(format!("{s:?} is not re or re,im")),
    }
}
