//! Scenario configuration: one JSON document, overridden by flags, resolved
//! into a [`CohortSpec`].

use std::path::PathBuf;

use rdl_core::cohort::DEFAULT_EPSILON;
use rdl_core::{BiasSpec, CheckpointGrid, ClampPolicy, CohortSpec, GroupSpec, UrnParams};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::output::GroupSeed;

/// Name of the implicit group when `groups` is empty.
pub const DEFAULT_GROUP: &str = "default";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub urn: UrnParams,
    #[serde(default)]
    pub bias: BiasConfig,
    #[serde(default = "default_steps")]
    pub steps: u64,
    /// Size of every group that does not set its own.
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    #[serde(default)]
    pub groups: Vec<GroupConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_steps() -> u64 {
    1000
}

fn default_trajectories() -> usize {
    1000
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            urn: UrnParams::default(),
            bias: BiasConfig::default(),
            steps: default_steps(),
            trajectories: default_trajectories(),
            groups: Vec::new(),
            seed: 0,
            output: OutputConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiasConfig {
    pub rho: f64,
    pub clamp: ClampPolicy,
    /// Groups with `R = 1`. When absent every group is disadvantaged.
    pub disadvantaged: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
    /// Falls back to the top-level `urn`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub urn: Option<UrnParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub format: Option<Format>,
    pub path: Option<PathBuf>,
    pub hist_bins: usize,
    pub checkpoints: CheckpointGrid,
    pub epsilon: f64,
    /// Per-member endpoint CSV written by `cohort`.
    pub endpoints: Option<PathBuf>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            format: None,
            path: None,
            hist_bins: 20,
            checkpoints: CheckpointGrid::default(),
            epsilon: DEFAULT_EPSILON,
            endpoints: None,
        }
    }
}

/// Flags that override file keys.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Scenario JSON file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub trajectories: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub k: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub b0: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub r0: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub rho: Option<f64>,
    #[arg(long, value_enum)]
    pub clamp: Option<ClampArg>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub hist_bins: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ClampArg {
    Clamp,
    Unclamped,
}

impl Overrides {
    pub fn load(&self) -> CliResult<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(path) => parse_config(&crate::output::read_to_string(path)?)
                .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?,
            None => ScenarioConfig::default(),
        };
        self.apply(&mut cfg);
        Ok(cfg)
    }

    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.trajectories {
            cfg.trajectories = v;
        }
        if let Some(v) = self.k {
            cfg.urn.k = v;
        }
        if let Some(v) = self.b0 {
            cfg.urn.b0 = v;
        }
        if let Some(v) = self.r0 {
            cfg.urn.r0 = v;
        }
        if let Some(v) = self.rho {
            cfg.bias.rho = v;
        }
        if let Some(v) = self.clamp {
            cfg.bias.clamp = match v {
                ClampArg::Clamp => ClampPolicy::ClampUnitInterval,
                ClampArg::Unclamped => ClampPolicy::Unclamped,
            };
        }
        if let Some(v) = &self.out {
            cfg.output.path = Some(v.clone());
        }
        if let Some(v) = self.format {
            cfg.output.format = Some(v);
        }
        if let Some(v) = self.hist_bins {
            cfg.output.hist_bins = v;
        }
    }
}

/// Parses a config document; errors name the offending key path.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, String> {
    from_json(text)
}

pub fn from_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, String> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            e.into_inner().to_string()
        } else {
            format!("{path}: {}", e.into_inner())
        }
    })
}

impl ScenarioConfig {
    pub fn to_cohort_spec(&self) -> CliResult<CohortSpec> {
        let invalid = |key: &str, e: rdl_core::Error| CliError::at(key, e);
        self.urn.validate().map_err(|e| invalid("urn", e))?;
        let bias_at = |r: bool| BiasSpec::new(self.bias.rho, r, self.bias.clamp).map_err(|e| invalid("bias", e));
        if self.steps == 0 {
            return Err(CliError::validation("steps: must be at least 1"));
        }
        if self.output.hist_bins == 0 {
            return Err(CliError::validation("output.hist_bins: must be at least 1"));
        }
        if !(self.output.epsilon > 0.0 && self.output.epsilon < 0.5) {
            return Err(CliError::validation(format!(
                "output.epsilon: must lie in (0, 0.5), got {}",
                self.output.epsilon
            )));
        }
        self.output
            .checkpoints
            .resolve(self.steps)
            .map_err(|e| invalid("output.checkpoints", e))?;

        let disadvantaged = |name: &str| match &self.bias.disadvantaged {
            None => true,
            Some(list) => list.iter().any(|n| n == name),
        };

        let groups = if self.groups.is_empty() {
            if self.trajectories == 0 {
                return Err(CliError::validation("trajectories: must be at least 1"));
            }
            vec![GroupSpec {
                name: DEFAULT_GROUP.into(),
                size: self.trajectories,
                urn: self.urn,
                bias: bias_at(disadvantaged(DEFAULT_GROUP))?,
            }]
        } else {
            let mut out = Vec::with_capacity(self.groups.len());
            for (i, g) in self.groups.iter().enumerate() {
                if out.iter().any(|o: &GroupSpec| o.name == g.name) {
                    return Err(CliError::validation(format!("groups[{i}].name: duplicate `{}`", g.name)));
                }
                let urn = g.urn.unwrap_or(self.urn);
                urn.validate().map_err(|e| invalid(&format!("groups[{i}].urn"), e))?;
                let size = g.size.unwrap_or(self.trajectories);
                if size == 0 {
                    return Err(CliError::validation(format!("groups[{i}].size: must be at least 1")));
                }
                out.push(GroupSpec {
                    name: g.name.clone(),
                    size,
                    urn,
                    bias: bias_at(disadvantaged(&g.name))?,
                });
            }
            out
        };

        if let Some(list) = &self.bias.disadvantaged {
            for (i, name) in list.iter().enumerate() {
                if !groups.iter().any(|g| &g.name == name) {
                    return Err(CliError::validation(format!(
                        "bias.disadvantaged[{i}]: unknown group `{name}`"
                    )));
                }
            }
        }

        let spec = CohortSpec {
            groups,
            n_steps: self.steps,
            master_seed: self.seed,
            record_full_paths: false,
            checkpoints: self.output.checkpoints.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

pub fn group_seeds(spec: &CohortSpec) -> Vec<GroupSeed> {
    spec.groups
        .iter()
        .enumerate()
        .map(|(i, g)| GroupSeed {
            group: g.name.clone(),
            index: i,
            seed: spec.group_seed(i),
        })
        .collect()
}
