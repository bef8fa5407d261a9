//! Command implementations behind the `recourse-audit` binary.

mod config;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::audit::{run_audit_detailed, AuditError, AuditReport, REPORT_FORMAT};
use crate::dataset::{load_dataset, Dataset};
use crate::mining::write_itemsets;
use crate::model::{train_logistic, BridgeClient, LogisticModel, ModelError, Predictor};
use crate::schema::{SchemaError, SchemaSpec};

pub use config::{Overrides, PredictorSpec, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Bridge(String),
}

impl CliError {
    /// 1 validation, 2 pipeline, 3 bridge transport.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Bridge(_) => 3,
        }
    }
}

impl From<SchemaError> for CliError {
    fn from(e: SchemaError) -> Self {
        match e {
            SchemaError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        if e.is_bridge() {
            CliError::Bridge(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<AuditError> for CliError {
    fn from(e: AuditError) -> Self {
        match e {
            AuditError::Predictor(m) => m.into(),
            AuditError::Config(m) => CliError::Validation(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Files written by [`cmd_audit`].
#[derive(Debug)]
pub struct AuditOutput {
    pub report: AuditReport,
    pub text: PathBuf,
    pub json: PathBuf,
}

fn build_predictor(spec: &PredictorSpec, dataset: &Dataset) -> Result<Box<dyn Predictor>, CliError> {
    let schema = dataset.schema();
    Ok(match spec {
        PredictorSpec::Train { config, save_weights } => {
            let labels = dataset.labels().ok_or_else(|| {
                CliError::Validation("predictor.kind: `train` needs a `label` section in the schema".into())
            })?;
            let model = train_logistic(dataset, labels, config)?;
            if let Some(path) = save_weights {
                std::fs::write(path, model.to_weights_text()).map_err(|e| io_error(path, e))?;
            }
            Box::new(model)
        }
        PredictorSpec::Weights(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            Box::new(LogisticModel::from_weights_text(&text, schema)?)
        }
        PredictorSpec::BridgeTcp(addr) => Box::new(BridgeClient::connect_tcp(addr.as_str(), schema)?),
        PredictorSpec::BridgeCommand(cmd) => Box::new(BridgeClient::spawn(cmd, schema)?),
    })
}

/// Loads the config, runs the audit and writes the text and JSON reports.
pub fn cmd_audit(config_path: &Path, overrides: &Overrides) -> Result<AuditOutput, CliError> {
    let config = RunConfig::load(config_path, overrides)?;
    let spec = SchemaSpec::load(&config.schema)?.with_protected(&config.protected);
    let dataset = load_dataset(&config.dataset, &spec)?;
    let predictor = build_predictor(&config.predictor, &dataset)?;
    let (eval, report) = run_audit_detailed(&dataset, predictor.as_ref(), &config.audit)?;

    std::fs::write(&config.text_out, report.render_text(config.top)).map_err(|e| io_error(&config.text_out, e))?;
    let file = File::create(&config.json_out).map_err(|e| io_error(&config.json_out, e))?;
    let mut writer = BufWriter::new(file);
    report
        .write_json(&mut writer)
        .map_err(|e| io_error(&config.json_out, e))?;
    writer.flush().map_err(|e| io_error(&config.json_out, e))?;
    if let Some(path) = &config.itemsets_out {
        let file = File::create(path).map_err(|e| io_error(path, e))?;
        write_itemsets(BufWriter::new(file), dataset.schema(), &eval.subgroups, &eval.actions)
            .map_err(|e| io_error(path, e))?;
    }
    Ok(AuditOutput {
        report,
        text: config.text_out,
        json: config.json_out,
    })
}

pub fn load_report(path: &Path) -> Result<AuditReport, CliError> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    let report = AuditReport::read_json(BufReader::new(file)).map_err(|e| io_error(path, e))?;
    if report.format != REPORT_FORMAT {
        return Err(CliError::Validation(format!(
            "{}: unsupported report format `{}` (expected `{REPORT_FORMAT}`)",
            path.display(),
            report.format
        )));
    }
    Ok(report)
}

/// The `top` most unfair CSCs of one definition.
pub fn cmd_rank(report_path: &Path, definition: &str, top: usize) -> Result<String, CliError> {
    let report = load_report(report_path)?;
    let def = report.definition(definition).ok_or_else(|| {
        let known: Vec<&str> = report.definitions.iter().map(|d| d.id.as_str()).collect();
        CliError::Validation(format!("unknown definition `{definition}`; the report has: {}", known.join(", ")))
    })?;
    Ok(report.render_ranked(def, top))
}

/// Ranking-analysis and aggregated-rankings tables.
pub fn cmd_compare(report_path: &Path) -> Result<String, CliError> {
    let report = load_report(report_path)?;
    if report.definitions.len() < 2 {
        return Err(CliError::Validation(format!(
            "{}: comparison needs at least two definitions, the report has {}",
            report_path.display(),
            report.definitions.len()
        )));
    }
    Ok(format!(
        "== Ranking analysis ==\n{}\n== Aggregated rankings ==\n{}",
        report.render_ranking_analysis(),
        report.render_aggregated()
    ))
}
