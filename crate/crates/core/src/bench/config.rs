//! Experiment configuration (TOML).
//!
//! ```toml
//! schema_version = 1
//! runs = 25
//! iterations = 4000
//! seed = 1
//! schemes = ["DASA", "HSA(0.1)", "HSA(1)", "HSA(10)"]
//!
//! [problem]
//! kind = "bandwidth"
//! select = [1, 4, 10]   # optional: 1-based rows of the settings table
//! ```
//!
//! See `docs/config.md` for every field.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bench::oracle::{OracleConfig, SurrogateConfig};
use crate::error::{Result, SviError};
use crate::problems::bandwidth::{self, bandwidth_instance, BandwidthSettings};
use crate::problems::cournot::{self, cournot_instance, CournotMarket, CournotSettings};
use crate::problems::quadratic::quadratic_instance;
use crate::problems::Instance;
use crate::smoothing::SmoothingKind;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepRule {
    Dasa,
    Harmonic(f64),
}

/// A stepsize rule combined with a smoothing choice, written as
/// `DASA`, `HSA(0.1)`, `MSR-DASA`, `MCR-HSA(10)`, ...
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scheme {
    pub smoothing: SmoothingKind,
    pub rule: StepRule,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.smoothing {
            SmoothingKind::None => {}
            SmoothingKind::Msr => f.write_str("MSR-")?,
            SmoothingKind::Mcr => f.write_str("MCR-")?,
        }
        match self.rule {
            StepRule::Dasa => f.write_str("DASA"),
            StepRule::Harmonic(t) => write!(f, "HSA({t})"),
        }
    }
}

impl FromStr for Scheme {
    type Err = SviError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || SviError::Config(format!("unknown scheme {s:?}"));
        let t = s.trim();
        let (smoothing, rest) = if let Some(r) = t.strip_prefix("MSR-") {
            (SmoothingKind::Msr, r)
        } else if let Some(r) = t.strip_prefix("MCR-") {
            (SmoothingKind::Mcr, r)
        } else {
            (SmoothingKind::None, t)
        };
        let rule = if rest == "DASA" {
            StepRule::Dasa
        } else if let Some(arg) = rest.strip_prefix("HSA(").and_then(|r| r.strip_suffix(')')) {
            let theta: f64 = arg.trim().parse().map_err(|_| bad())?;
            if !(theta > 0.0 && theta.is_finite()) {
                return Err(SviError::Config(format!("HSA needs theta > 0 in {s:?}")));
            }
            StepRule::Harmonic(theta)
        } else {
            return Err(bad());
        };
        Ok(Scheme { smoothing, rule })
    }
}

impl Serialize for Scheme {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Scheme {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Bandwidth {
        /// Defaults to the twelve standard settings.
        #[serde(default)]
        settings: Option<Vec<BandwidthSettings>>,
        #[serde(default)]
        select: Option<Vec<usize>>,
        /// Links x routes override of the default routing matrix.
        #[serde(default)]
        routing: Option<Vec<Vec<f64>>>,
        /// Smoothing radius for MSR/MCR schemes.
        #[serde(default)]
        eps: Option<f64>,
    },
    Cournot {
        #[serde(default)]
        settings: Option<Vec<CournotSettings>>,
        #[serde(default)]
        select: Option<Vec<usize>>,
        #[serde(default)]
        market: Option<CournotMarket>,
    },
    Quadratic {
        dims: Vec<usize>,
        #[serde(default)]
        half_width: f64,
        #[serde(default)]
        eps: Option<f64>,
        #[serde(default)]
        instance_seed: u64,
    },
}

/// One row of the settings grid, ready to build.
#[derive(Clone, Debug)]
pub struct SettingRow {
    /// `S1`, `S2`, ... numbered by position in the full table.
    pub label: String,
    /// 0-based position in the full table.
    pub index: usize,
    pub instance: Instance,
}

impl ProblemSpec {
    fn selection(select: &Option<Vec<usize>>, total: usize) -> Result<Vec<usize>> {
        match select {
            None => Ok((0..total).collect()),
            Some(ix) => ix
                .iter()
                .map(|&i| {
                    if (1..=total).contains(&i) {
                        Ok(i - 1)
                    } else {
                        Err(SviError::Config(format!("setting S{i} does not exist (1..={total})")))
                    }
                })
                .collect(),
        }
    }

    /// Builds the selected settings in table order.
    pub fn rows(&self) -> Result<Vec<SettingRow>> {
        let label = |i: usize| format!("S{}", i + 1);
        match self {
            ProblemSpec::Bandwidth {
                settings,
                select,
                routing,
                eps,
            } => {
                let all = settings
                    .clone()
                    .unwrap_or_else(|| bandwidth::STANDARD_SETTINGS.to_vec());
                Self::selection(select, all.len())?
                    .into_iter()
                    .map(|i| {
                        let bi = bandwidth_instance(all[i], routing.clone(), *eps)?;
                        Ok(SettingRow {
                            label: label(i),
                            index: i,
                            instance: bi.instance,
                        })
                    })
                    .collect()
            }
            ProblemSpec::Cournot {
                settings,
                select,
                market,
            } => {
                let all = settings.clone().unwrap_or_else(|| cournot::STANDARD_SETTINGS.to_vec());
                Self::selection(select, all.len())?
                    .into_iter()
                    .map(|i| {
                        let ci = cournot_instance(all[i], market.clone())?;
                        Ok(SettingRow {
                            label: label(i),
                            index: i,
                            instance: ci.instance,
                        })
                    })
                    .collect()
            }
            ProblemSpec::Quadratic {
                dims,
                half_width,
                eps,
                instance_seed,
            } => {
                if dims.is_empty() || dims.contains(&0) {
                    return Err(SviError::Config("quadratic dims must be positive".into()));
                }
                let qi = quadratic_instance(dims, *half_width, *eps, *instance_seed)?;
                Ok(vec![SettingRow {
                    label: label(0),
                    index: 0,
                    instance: qi.instance,
                }])
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceConfig {
    pub surrogate: SurrogateConfig,
    pub oracle: OracleConfig,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig {
            surrogate: SurrogateConfig::default(),
            oracle: OracleConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub problem: ProblemSpec,
    pub schemes: Vec<Scheme>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_level")]
    pub ci_level: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// Relative to the config file when read from disk.
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub reference: ReferenceConfig,
}

fn default_runs() -> usize {
    25
}
fn default_iterations() -> usize {
    4000
}
fn default_level() -> f64 {
    0.9
}
fn default_record_every() -> usize {
    10
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| SviError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config; a relative `output_dir` is resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SviError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.output_dir.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.output_dir = dir.join(&cfg.output_dir);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(SviError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.runs < 2 {
            return Err(SviError::Config("runs must be >= 2 for confidence intervals".into()));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(SviError::Config(format!(
                "ci_level must lie in (0, 1), got {}",
                self.ci_level
            )));
        }
        if self.record_every == 0 {
            return Err(SviError::Config("record_every must be positive".into()));
        }
        if self.schemes.is_empty() {
            return Err(SviError::Config("at least one scheme is required".into()));
        }
        self.reference.oracle.validate()?;
        Ok(())
    }
}
