//! Run configuration: built-in defaults, then an optional TOML/JSON file, then flags.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use spinshield::dynamics::Frame;
use spinshield::experiments::Settings;
use spinshield::metrics::MetricName;
use spinshield::model::{BufferInit, NoiseChannel, NoiseSpec, PairConvention};
use spinshield::topology::{extreme_geometry, BufferGraph, Extreme};

use crate::error::CliError;

/// Flags shared by every subcommand. Each overrides the matching config-file key.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML or JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Number of buffer spins N.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// `empty`, `maximal`, an edge list `(2,3),(3,4)` or `N=<n>; edges=...`.
    #[arg(long, global = true)]
    pub geometry: Option<String>,
    #[arg(long, global = true)]
    pub channel: Option<String>,
    #[arg(long, global = true)]
    pub g: Option<f64>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    #[arg(long = "gamma-d", global = true)]
    pub gamma_d: Option<f64>,
    #[arg(long, global = true)]
    pub temp: Option<f64>,
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    #[arg(long = "t-max", global = true)]
    pub t_max: Option<f64>,
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    #[arg(long, global = true)]
    pub frame: Option<String>,
    #[arg(long = "initial-buffer", global = true)]
    pub initial_buffer: Option<String>,
    /// `once`, `double` or `calibrate`.
    #[arg(long = "pair-convention", global = true)]
    pub pair_convention: Option<String>,
    /// Maximum number of worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long = "output-dir", env = "SPINSHIELD_OUTPUT_DIR", global = true)]
    pub output_dir: Option<PathBuf>,
    /// Validate and report the estimated step count without simulating.
    #[arg(long = "dry-run", global = true)]
    pub dry_run: bool,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub cluster: ClusterSection,
    #[serde(default)]
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    pub output_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSection {
    pub n: Option<usize>,
    pub geometry: Option<String>,
    pub omega: Option<f64>,
    pub g: Option<f64>,
    pub channel: Option<String>,
    pub gamma: Option<f64>,
    pub gamma_d: Option<f64>,
    pub temperature: Option<f64>,
    pub pair_convention: Option<String>,
    pub initial_buffer: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    pub dt: Option<f64>,
    pub t_max: Option<f64>,
    pub frame: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub threshold: Option<f64>,
    pub window: Option<(f64, f64)>,
    pub metrics: Option<Vec<String>>,
    pub n_range: Option<Vec<usize>>,
    pub g_values: Option<Vec<f64>>,
    pub gamma_values: Option<Vec<f64>>,
    pub minus: Option<String>,
    pub fraction: Option<f64>,
}

impl FileConfig {
    /// JSON when the extension is `.json` or the text starts with `{`, TOML otherwise.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Parse(format!("cannot read {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
        if is_json {
            serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConventionChoice {
    Fixed(PairConvention),
    Calibrate,
}

/// Fully merged configuration.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub settings: Settings,
    pub convention: ConventionChoice,
    pub n: Option<usize>,
    pub geometry: Option<String>,
    pub metrics: Option<Vec<MetricName>>,
    pub n_range: Option<Vec<usize>>,
    pub g_values: Option<Vec<f64>>,
    pub gamma_values: Option<Vec<f64>>,
    pub minus: Option<String>,
    pub fraction: f64,
    pub output_dir: PathBuf,
    pub jobs: Option<usize>,
    pub dry_run: bool,
}

fn parse_with<T, E: std::fmt::Display>(what: &str, s: &str, f: impl FnOnce(&str) -> Result<T, E>) -> Result<T, CliError> {
    f(s).map_err(|e| CliError::Parse(format!("{what}: {e}")))
}

fn parse_frame(s: &str) -> Result<Frame, CliError> {
    parse_with("frame", s, str::parse::<Frame>)
}

impl Resolved {
    /// `channel_default` selects the channel whose defaults apply before the
    /// file and flags are read.
    pub fn build(args: &CommonArgs, channel_default: NoiseChannel) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let c = &file.cluster;
        let x = &file.experiment;

        let channel = match args.channel.as_deref().or(c.channel.as_deref()) {
            Some(s) => parse_with("channel", s, str::parse::<NoiseChannel>)?,
            None => channel_default,
        };
        let mut settings = match channel {
            NoiseChannel::Thermal => Settings::default(),
            NoiseChannel::Dephasing => Settings::dephasing(),
        };
        let base = settings.noise;
        settings.noise = NoiseSpec {
            channel,
            temperature: args.temp.or(c.temperature).unwrap_or(base.temperature),
            gamma: args.gamma.or(c.gamma).unwrap_or(base.gamma),
            gamma_d: args.gamma_d.or(c.gamma_d).unwrap_or(base.gamma_d),
        };
        if let Some(omega) = c.omega {
            settings.omega = omega;
        }
        if let Some(g) = args.g.or(c.g) {
            settings.g = g;
        }
        if let Some(s) = args.initial_buffer.as_deref().or(c.initial_buffer.as_deref()) {
            settings.initial_buffer = parse_with("initial buffer", s, str::parse::<BufferInit>)?;
        }
        let convention = match args.pair_convention.as_deref().or(c.pair_convention.as_deref()) {
            Some("calibrate") => ConventionChoice::Calibrate,
            Some(s) => ConventionChoice::Fixed(parse_with("pair convention", s, str::parse::<PairConvention>)?),
            None => ConventionChoice::Fixed(settings.pair_convention),
        };
        if let ConventionChoice::Fixed(p) = convention {
            settings.pair_convention = p;
        }
        if let Some(t) = args.threshold.or(x.threshold) {
            settings.threshold = t;
        }
        if let Some(w) = x.window {
            settings.window = w;
        }
        if let Some(t) = args.t_max.or(file.integrator.t_max) {
            settings.t_max = t;
        }
        settings.dt = args.dt.or(file.integrator.dt).or(settings.dt);
        if let Some(s) = args.frame.as_deref().or(file.integrator.frame.as_deref()) {
            settings.frame = parse_frame(s)?;
        }

        let metrics = x
            .metrics
            .as_ref()
            .map(|names| {
                names
                    .iter()
                    .map(|m| parse_with("metric", m, str::parse::<MetricName>))
                    .collect::<Result<Vec<_>, _>>()
            })
            .transpose()?;

        let output_dir = args
            .output_dir
            .clone()
            .or(file.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("results"));

        let resolved = Self {
            settings,
            convention,
            n: args.n.or(c.n),
            geometry: args.geometry.clone().or(c.geometry.clone()),
            metrics,
            n_range: x.n_range.clone(),
            g_values: x.g_values.clone(),
            gamma_values: x.gamma_values.clone(),
            minus: x.minus.clone(),
            fraction: x.fraction.unwrap_or(0.5),
            output_dir,
            jobs: args.jobs.or(file.jobs),
            dry_run: args.dry_run,
        };
        resolved.check_numbers()?;
        Ok(resolved)
    }

    fn check_numbers(&self) -> Result<(), CliError> {
        let s = &self.settings;
        let positive = [
            ("threshold", s.threshold),
            ("t_max", s.t_max),
            ("temperature", s.noise.temperature),
            ("omega", s.omega),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Validation(format!("{name} = {v} must be positive and finite")));
            }
        }
        if let Some(dt) = s.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(CliError::Validation(format!("dt = {dt} must be positive and finite")));
            }
        }
        if self.jobs == Some(0) {
            return Err(CliError::Validation("jobs must be at least 1".into()));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(CliError::Validation(format!("fraction {} must lie in (0, 1]", self.fraction)));
        }
        Ok(())
    }

    /// Geometry from `--geometry` and `--n`; defaults to the maximal network.
    pub fn graph(&self) -> Result<BufferGraph, CliError> {
        resolve_geometry(self.geometry.as_deref(), self.n)
    }
}

pub fn resolve_geometry(text: Option<&str>, n: Option<usize>) -> Result<BufferGraph, CliError> {
    let text = text.unwrap_or("maximal").trim();
    let need_n = || n.ok_or_else(|| CliError::Validation(format!("geometry `{text}` needs --n")));
    let graph = match text {
        "empty" => extreme_geometry(need_n()?, Extreme::Empty),
        "maximal" => extreme_geometry(need_n()?, Extreme::Maximal),
        t if t.starts_with("N=") => {
            let g: BufferGraph = parse_with("geometry", t, str::parse)?;
            if let Some(n) = n {
                if n != g.n_buffer() {
                    return Err(CliError::Validation(format!(
                        "geometry has N={} but --n is {n}",
                        g.n_buffer()
                    )));
                }
            }
            Ok(g)
        }
        t => {
            let full = format!("N={}; edges={t}", need_n()?);
            return parse_with("geometry", &full, str::parse);
        }
    };
    graph.map_err(|e| CliError::Validation(e.to_string()))
}
