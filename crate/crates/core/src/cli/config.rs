use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::CliError;
use crate::audit::{AuditConfig, BudgetSpec, DefinitionSpec};
use crate::model::LogisticConfig;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    dataset: Option<PathBuf>,
    schema: Option<PathBuf>,
    protected: Option<String>,
    #[serde(default)]
    workers: usize,
    predictor: Option<RawPredictor>,
    #[serde(default)]
    mining: RawMining,
    #[serde(default)]
    metrics: RawMetrics,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPredictor {
    kind: Option<String>,
    path: Option<PathBuf>,
    address: Option<String>,
    command: Option<Vec<String>>,
    learning_rate: Option<f64>,
    epochs: Option<usize>,
    l2: Option<f64>,
    save_weights: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMining {
    subgroup_support: Option<f64>,
    action_support: Option<f64>,
    itemsets: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMetrics {
    definitions: Option<Vec<String>>,
    budgets: Option<String>,
    c_inf: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    text: Option<PathBuf>,
    json: Option<PathBuf>,
    top: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictorSpec {
    /// Fit the builtin logistic model on the dataset's label column.
    Train {
        config: LogisticConfig,
        save_weights: Option<PathBuf>,
    },
    /// Builtin logistic model from a weight file.
    Weights(PathBuf),
    /// External model over TCP.
    BridgeTcp(String),
    /// External model spawned as a child process speaking over stdio.
    BridgeCommand(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub schema: PathBuf,
    pub protected: String,
    pub predictor: PredictorSpec,
    pub audit: AuditConfig,
    pub text_out: PathBuf,
    pub json_out: PathBuf,
    pub itemsets_out: Option<PathBuf>,
    pub top: usize,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub workers: Option<usize>,
    pub subgroup_support: Option<f64>,
    pub action_support: Option<f64>,
    pub text_out: Option<PathBuf>,
    pub json_out: Option<PathBuf>,
    pub top: Option<usize>,
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{field}: {msg}"))
}

fn check_support(field: &str, s: f64) -> Result<f64, CliError> {
    if s > 0.0 && s <= 1.0 {
        Ok(s)
    } else {
        Err(invalid(field, format!("must lie in (0, 1], got {s}")))
    }
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, overrides)
    }

    /// Parses a config document. Relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };

        let dataset = resolve(raw.dataset.ok_or_else(|| invalid("dataset", "required"))?);
        let schema = resolve(raw.schema.ok_or_else(|| invalid("schema", "required"))?);
        let protected = raw.protected.ok_or_else(|| invalid("protected", "required"))?;
        let predictor = parse_predictor(raw.predictor.ok_or_else(|| invalid("predictor", "required"))?, &resolve)?;

        let subgroup_support = check_support(
            "mining.subgroup_support",
            overrides.subgroup_support.or(raw.mining.subgroup_support).unwrap_or(0.01),
        )?;
        let action_support = overrides
            .action_support
            .or(raw.mining.action_support)
            .map(|s| check_support("mining.action_support", s))
            .transpose()?;

        let definitions = match raw.metrics.definitions {
            None => DefinitionSpec::default_battery(),
            Some(list) if list.is_empty() => return Err(invalid("metrics.definitions", "at least one definition is required")),
            Some(list) => list
                .iter()
                .enumerate()
                .map(|(i, d)| DefinitionSpec::parse(d).map_err(|e| invalid(&format!("metrics.definitions[{i}]"), e)))
                .collect::<Result<_, _>>()?,
        };
        let budgets = match raw.metrics.budgets {
            None => BudgetSpec::default(),
            Some(b) => BudgetSpec::parse(&b).map_err(|e| invalid("metrics.budgets", e))?,
        };
        if let Some(c) = raw.metrics.c_inf {
            if !(c.is_finite() && c >= 0.0) {
                return Err(invalid("metrics.c_inf", format!("must be a non-negative number, got {c}")));
            }
        }

        let top = overrides.top.or(raw.output.top).unwrap_or(10);
        Ok(RunConfig {
            dataset,
            schema,
            protected,
            predictor,
            audit: AuditConfig {
                subgroup_support,
                action_support,
                definitions,
                budgets,
                c_inf: raw.metrics.c_inf,
                workers: overrides.workers.unwrap_or(raw.workers),
            },
            text_out: overrides
                .text_out
                .clone()
                .unwrap_or_else(|| resolve(raw.output.text.unwrap_or_else(|| "audit-report.txt".into()))),
            json_out: overrides
                .json_out
                .clone()
                .unwrap_or_else(|| resolve(raw.output.json.unwrap_or_else(|| "audit-report.json".into()))),
            itemsets_out: raw.mining.itemsets.map(resolve),
            top,
        })
    }
}

fn parse_predictor(raw: RawPredictor, resolve: &dyn Fn(PathBuf) -> PathBuf) -> Result<PredictorSpec, CliError> {
    let kind = raw.kind.as_deref().ok_or_else(|| invalid("predictor.kind", "required (train, weights or bridge)"))?;
    let reject = |present: bool, field: &str| {
        if present {
            Err(invalid(&format!("predictor.{field}"), format!("not used by kind = \"{kind}\"")))
        } else {
            Ok(())
        }
    };
    match kind {
        "train" => {
            reject(raw.path.is_some(), "path")?;
            reject(raw.address.is_some(), "address")?;
            reject(raw.command.is_some(), "command")?;
            let defaults = LogisticConfig::default();
            let config = LogisticConfig {
                learning_rate: raw.learning_rate.unwrap_or(defaults.learning_rate),
                epochs: raw.epochs.unwrap_or(defaults.epochs),
                l2: raw.l2.unwrap_or(defaults.l2),
            };
            if !(config.learning_rate.is_finite() && config.learning_rate > 0.0) {
                return Err(invalid("predictor.learning_rate", "must be positive"));
            }
            if !(config.l2.is_finite() && config.l2 >= 0.0) {
                return Err(invalid("predictor.l2", "must be non-negative"));
            }
            Ok(PredictorSpec::Train {
                config,
                save_weights: raw.save_weights.map(resolve),
            })
        }
        "weights" | "bridge" => {
            reject(raw.learning_rate.is_some(), "learning_rate")?;
            reject(raw.epochs.is_some(), "epochs")?;
            reject(raw.l2.is_some(), "l2")?;
            reject(raw.save_weights.is_some(), "save_weights")?;
            if kind == "weights" {
                reject(raw.address.is_some(), "address")?;
                reject(raw.command.is_some(), "command")?;
                let path = raw.path.ok_or_else(|| invalid("predictor.path", "required for kind = \"weights\""))?;
                return Ok(PredictorSpec::Weights(resolve(path)));
            }
            reject(raw.path.is_some(), "path")?;
            match (raw.address, raw.command) {
                (Some(a), None) => Ok(PredictorSpec::BridgeTcp(a)),
                (None, Some(c)) if !c.is_empty() => Ok(PredictorSpec::BridgeCommand(c)),
                (None, Some(_)) => Err(invalid("predictor.command", "must not be empty")),
                _ => Err(invalid("predictor", "kind = \"bridge\" needs exactly one of `address` or `command`")),
            }
        }
        other => Err(invalid("predictor.kind", format!("unknown kind `{other}` (train, weights or bridge)"))),
    }
}
