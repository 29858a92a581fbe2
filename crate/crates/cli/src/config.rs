use std::path::PathBuf;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use radsym::harness::Thresholds;
use radsym::model::PresetParams;
use radsym::optimize::MinimizeOptions;
use radsym::rearrange::GridExactPolarizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Symmetrize,
    Verify,
    Audit,
    Minimize,
    Polarize,
    LintModel,
    Refine,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Symmetrize => "symmetrize",
            Command::Verify => "verify",
            Command::Audit => "audit",
            Command::Minimize => "minimize",
            Command::Polarize => "polarize",
            Command::LintModel => "lint-model",
            Command::Refine => "refine",
        }
    }
}

/// One run, read from a single JSON document. Unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub params: ModelParams,
    #[serde(default)]
    pub domain: DomainConfig,
    #[serde(default)]
    pub options: MinimizeOptions,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub polarizers: PolarizerConfig,
    #[serde(default)]
    pub start: StartConfig,
    /// A grid function in the binary format; required by `symmetrize` and
    /// `polarize`, optional starting point elsewhere.
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub refine: RefineConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub emit: Emit,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Overrides of the preset's exponents.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub p: Option<f64>,
    pub sigma: Option<f64>,
}

impl From<ModelParams> for PresetParams {
    fn from(m: ModelParams) -> Self {
        PresetParams { p: m.p, sigma: m.sigma }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeName {
    #[default]
    Ball,
    Box,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainConfig {
    /// Defaults to the model's dimension.
    pub dim: Option<usize>,
    pub shape: ShapeName,
    /// Ball radius `R`.
    pub radius: f64,
    /// Box half-width `L`; defaults to `radius`.
    pub half_extent: Option<f64>,
    pub h: f64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        DomainConfig { dim: None, shape: ShapeName::Ball, radius: 3.0, half_extent: None, h: 3.0 / 32.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolarizerMode {
    /// Only lattice reflections; anything else is a usage error.
    #[default]
    Exact,
    /// Arbitrary half-spaces through multilinear interpolation.
    General,
}

/// A polarizer given either in lattice form or as a unit normal and offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolarizerSpec {
    Exact(GridExactPolarizer),
    General { normal: Vec<f64>, offset: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolarizerConfig {
    pub seed: u64,
    pub count: usize,
    /// Cap on the sampled offsets; defaults to a quarter of the domain radius.
    pub max_offset: Option<f64>,
    pub mode: PolarizerMode,
    /// Explicit list used instead of sampling.
    pub items: Option<Vec<PolarizerSpec>>,
}

impl Default for PolarizerConfig {
    fn default() -> Self {
        PolarizerConfig { seed: 0, count: 200, max_offset: None, mode: PolarizerMode::Exact, items: None }
    }
}

/// Feasible plateau start used when no input file is given.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StartConfig {
    pub height: f64,
    /// Defaults to `(0.75, 0.5)` in 2D and the origin otherwise.
    pub center: Option<Vec<f64>>,
}

impl Default for StartConfig {
    fn default() -> Self {
        StartConfig { height: 0.5, center: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    /// Strictly decreasing spacings with integer ratios to the first.
    pub h_list: Vec<f64>,
    /// Largest consecutive ratio accepted for a passing verdict.
    pub max_ratio: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig { h_list: vec![3.0 / 32.0, 3.0 / 64.0], max_ratio: 0.7 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Emit {
    pub json: bool,
    pub csv: bool,
    pub pgm: bool,
}

impl Default for Emit {
    fn default() -> Self {
        Emit { json: true, csv: false, pgm: false }
    }
}

/// A starting config for `command` with every field spelled out.
pub fn example(command: Command) -> RunConfig {
    let mut cfg = RunConfig {
        command,
        preset: Some("plaplace".into()),
        params: ModelParams::default(),
        domain: DomainConfig { dim: Some(2), ..DomainConfig::default() },
        options: MinimizeOptions { grad_tol: 1e-4, ..MinimizeOptions::default() },
        thresholds: Thresholds::default(),
        polarizers: PolarizerConfig::default(),
        start: StartConfig { height: 0.5, center: Some(vec![0.75, 0.5]) },
        input: None,
        refine: RefineConfig::default(),
        output_dir: default_output_dir(),
        emit: Emit::default(),
    };
    if matches!(command, Command::Symmetrize | Command::Polarize) {
        cfg.input = Some(PathBuf::from("u.symf"));
    }
    cfg
}
