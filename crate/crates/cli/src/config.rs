//! Run configuration from flags and an optional key-value file.
//!
//! The file grammar is one `key = value` pair per line. Keys are the long
//! flag names without the leading dashes (`half-width`, `M`, ...). `#`
//! starts a comment, blank lines are ignored, and `eps` and `x` take
//! comma-separated lists. Flags override file values; a repeated `--eps`
//! replaces the file's list as a whole.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use activeset_core::experiments::IdentifierParams;
use activeset_core::{LpLpecParams, QpParams};
use clap::{Args, Parser, Subcommand};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Heatmap,
    Trajectory,
    Identify,
    Verify,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub problem: String,
    pub params: IdentifierParams,
    /// Noise levels; each command has its own default when `None`.
    pub eps: Option<Vec<f64>>,
    pub trials: Option<usize>,
    pub seed: u64,
    pub out: PathBuf,
    pub png: bool,
    /// Evaluation point for `identify`, start point for `trajectory`.
    pub x: Option<Vec<f64>>,
    pub quick: bool,
    pub half_width: f64,
    pub resolution: usize,
    pub mu: f64,
}

impl RunConfig {
    pub fn defaults(command: Command) -> Self {
        Self {
            command,
            problem: "f1".into(),
            params: IdentifierParams::default(),
            eps: None,
            trials: None,
            seed: 0,
            out: PathBuf::from("."),
            png: false,
            x: None,
            quick: false,
            half_width: 0.4,
            resolution: 81,
            mu: 100.0,
        }
    }

    pub fn noise_levels(&self) -> Vec<f64> {
        self.eps.clone().unwrap_or_else(|| match self.command {
            Command::Trajectory => vec![0.0, 1e-2],
            Command::Identify => vec![0.0],
            _ => vec![0.0, 1e-2, 1e-1],
        })
    }

    pub fn trials(&self) -> usize {
        self.trials.unwrap_or(match self.command {
            Command::Trajectory => 10,
            _ => 8,
        })
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key {
            "problem" => self.problem = v.to_string(),
            "eps" => self.eps = Some(parse_list(key, v)?),
            "trials" => self.trials = Some(parse(key, v)?),
            "M" => self.params.lp.m_box = parse(key, v)?,
            "beta" => self.params.lp.beta = parse(key, v)?,
            "sigma" => self.params.lp.sigma = parse(key, v)?,
            "nu" => self.params.qp.nu = parse(key, v)?,
            "theta" => self.params.qp.theta = parse(key, v)?,
            "gap-tol" => self.params.qp.gap_tol = parse(key, v)?,
            "activity-tol" => self.params.qp.activity_tol = parse(key, v)?,
            "max-dual-iters" => self.params.qp.max_dual_iters = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "png" => self.png = parse(key, v)?,
            "x" => self.x = Some(parse_list(key, v)?),
            "quick" => self.quick = parse(key, v)?,
            "half-width" => self.half_width = parse(key, v)?,
            "resolution" => self.resolution = parse(key, v)?,
            "mu" => self.mu = parse(key, v)?,
            other => return Err(CliError::Usage(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    fn validate(self) -> Result<Self, CliError> {
        let lp = self.params.lp;
        if !(lp.sigma > 0.0 && lp.sigma < 1.0) {
            return Err(range(
                "sigma",
                format!("must lie in (0, 1), got {}", lp.sigma),
            ));
        }
        LpLpecParams::new(lp.m_box, lp.beta, lp.sigma)
            .map_err(|e| range("M/beta", e.to_string()))?;
        QpParams::validated(self.params.qp).map_err(|e| range("theta/nu", e.to_string()))?;
        if let Some(bad) = self
            .eps
            .iter()
            .flatten()
            .find(|e| !(**e >= 0.0 && e.is_finite()))
        {
            return Err(range(
                "eps",
                format!("must be finite and nonnegative, got {bad}"),
            ));
        }
        if self.trials == Some(0) {
            return Err(range("trials", "must be at least 1".into()));
        }
        if self.resolution < 2 {
            return Err(range(
                "resolution",
                format!("must be at least 2, got {}", self.resolution),
            ));
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(range(
                "half-width",
                format!("must be positive, got {}", self.half_width),
            ));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(range("mu", format!("must be positive, got {}", self.mu)));
        }
        Ok(self)
    }
}

fn range(key: &str, message: String) -> CliError {
    CliError::Range {
        key: key.to_string(),
        message,
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse().map_err(|_| CliError::Value {
        key: key.to_string(),
        value: v.to_string(),
    })
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>, CliError> {
    v.split(',').map(|t| parse(key, t.trim())).collect()
}

#[derive(Debug, Parser)]
#[command(
    name = "activeset-id",
    version,
    about = "Active-set identification experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: CommandArgs,
}

#[derive(Debug, Subcommand)]
enum CommandArgs {
    /// Success-fraction maps on a grid around the minimizer.
    Heatmap(Flags),
    /// Identification along a penalty-descent trajectory.
    Trajectory(Flags),
    /// Both estimates at one point.
    Identify(Flags),
    /// Seeded property suites for every module.
    Verify(Flags),
}

#[derive(Debug, Args, Default)]
struct Flags {
    /// Key-value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_name = "f1|f2")]
    problem: Option<String>,
    /// Noise level; repeat for several.
    #[arg(long, value_name = "E")]
    eps: Vec<String>,
    #[arg(long, value_name = "N")]
    trials: Option<String>,
    /// Multiplier bound of the LP identifier.
    #[arg(long = "M", value_name = "V")]
    m_box: Option<String>,
    #[arg(long, value_name = "V")]
    beta: Option<String>,
    #[arg(long, value_name = "V")]
    sigma: Option<String>,
    /// Penalty of the QP identifier.
    #[arg(long, value_name = "V")]
    nu: Option<String>,
    /// Proximal weight of the QP identifier.
    #[arg(long, value_name = "V")]
    theta: Option<String>,
    #[arg(long = "gap-tol", value_name = "V")]
    gap_tol: Option<String>,
    #[arg(long = "activity-tol", value_name = "V")]
    activity_tol: Option<String>,
    #[arg(long = "max-dual-iters", value_name = "N")]
    max_dual_iters: Option<String>,
    #[arg(long, value_name = "S")]
    seed: Option<String>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<String>,
    /// Also render PNG heatmaps.
    #[arg(long)]
    png: bool,
    /// Comma-separated point.
    #[arg(long, value_name = "X1,X2", allow_hyphen_values = true)]
    x: Option<String>,
    /// Reduced instance counts for `verify`.
    #[arg(long)]
    quick: bool,
    #[arg(long = "half-width", value_name = "V")]
    half_width: Option<String>,
    #[arg(long, value_name = "N")]
    resolution: Option<String>,
    /// Quadratic penalty weight of the trajectory optimizer.
    #[arg(long, value_name = "V")]
    mu: Option<String>,
}

impl Flags {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut push = |k: &'static str, v: &Option<String>| {
            if let Some(v) = v {
                out.push((k, v.clone()));
            }
        };
        push("problem", &self.problem);
        push("trials", &self.trials);
        push("M", &self.m_box);
        push("beta", &self.beta);
        push("sigma", &self.sigma);
        push("nu", &self.nu);
        push("theta", &self.theta);
        push("gap-tol", &self.gap_tol);
        push("activity-tol", &self.activity_tol);
        push("max-dual-iters", &self.max_dual_iters);
        push("seed", &self.seed);
        push("out", &self.out);
        push("x", &self.x);
        push("half-width", &self.half_width);
        push("resolution", &self.resolution);
        push("mu", &self.mu);
        if !self.eps.is_empty() {
            out.push(("eps", self.eps.join(",")));
        }
        if self.png {
            out.push(("png", "true".into()));
        }
        if self.quick {
            out.push(("quick", "true".into()));
        }
        out
    }
}

/// Parses a key-value file into ordered pairs.
pub fn parse_config_file(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut seen = HashSet::new();
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "config line {}: expected `key = value`",
                n + 1
            )));
        };
        let key = k.trim().to_string();
        if !seen.insert(key.clone()) {
            return Err(CliError::Usage(format!(
                "config line {}: duplicate key `{key}`",
                n + 1
            )));
        }
        pairs.push((key, v.trim().to_string()));
    }
    Ok(pairs)
}

/// Builds the run configuration from command-line arguments (program name
/// first) and an optional file; `--config` takes precedence over `file`.
pub fn parse_config<I, S>(args: I, file: Option<&Path>) -> Result<RunConfig, CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(CliError::Clap)?;
    let (command, flags) = match cli.command {
        CommandArgs::Heatmap(f) => (Command::Heatmap, f),
        CommandArgs::Trajectory(f) => (Command::Trajectory, f),
        CommandArgs::Identify(f) => (Command::Identify, f),
        CommandArgs::Verify(f) => (Command::Verify, f),
    };
    let mut cfg = RunConfig::defaults(command);
    if let Some(path) = flags.config.as_deref().or(file) {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        for (k, v) in parse_config_file(&text)? {
            cfg.set(&k, &v)?;
        }
    }
    for (k, v) in flags.pairs() {
        cfg.set(k, &v)?;
    }
    cfg.validate()
}
