//! The audited black-box classifier `h: X -> {-1, +1}`.

mod bridge;
mod logistic;

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::dataset::Instance;

pub use bridge::BridgeClient;
pub use logistic::{train_logistic, LogisticConfig, LogisticModel};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("no label known for instance at row {row}")]
    UnknownInstance { row: usize },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("{got} labels supplied for {expected} rows")]
    LabelCount { expected: usize, got: usize },
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed weight file: {0}")]
    WeightsFile(String),
    #[error("bridge transport failure: {0}")]
    Transport(#[from] std::io::Error),
    #[error("bridge protocol violation: {0}")]
    Protocol(String),
    #[error("bridge reported an error: {0}")]
    Remote(String),
}

impl ModelError {
    /// True for failures talking to an external predictor.
    pub fn is_bridge(&self) -> bool {
        matches!(
            self,
            ModelError::Transport(_) | ModelError::Protocol(_) | ModelError::Remote(_)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    /// Sign of a decision score; a score of exactly zero is favorable.
    pub fn from_score(score: f64) -> Label {
        if score >= 0.0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Label::Negative => -1,
            Label::Positive => 1,
        }
    }

    /// Accepts `1`, `+1`, `-1` and the unicode minus form `−1`.
    pub fn parse(token: &str) -> Option<Label> {
        match token {
            "1" | "+1" => Some(Label::Positive),
            "-1" | "\u{2212}1" => Some(Label::Negative),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_i8())
    }
}

/// Deterministic binary classifier. Implementations must be safe to call
/// from several threads at once.
pub trait Predictor: Send + Sync {
    /// Labels for every instance, in order.
    fn predict_batch(&self, instances: &[Instance]) -> Result<Vec<Label>, ModelError>;

    fn predict(&self, instance: &Instance) -> Result<Label, ModelError> {
        let labels = self.predict_batch(std::slice::from_ref(instance))?;
        labels
            .into_iter()
            .next()
            .ok_or_else(|| ModelError::Protocol("empty response for a single instance".into()))
    }
}

/// Explicit instance -> label map. Unknown instances are an error.
#[derive(Debug, Clone, Default)]
pub struct RuleTable {
    map: HashMap<Instance, Label>,
}

impl RuleTable {
    pub fn new(entries: impl IntoIterator<Item = (Instance, Label)>) -> Self {
        RuleTable {
            map: entries.into_iter().collect(),
        }
    }
}

impl Predictor for RuleTable {
    fn predict_batch(&self, instances: &[Instance]) -> Result<Vec<Label>, ModelError> {
        instances
            .iter()
            .enumerate()
            .map(|(i, x)| {
                self.map
                    .get(x)
                    .copied()
                    .ok_or(ModelError::UnknownInstance { row: i + 1 })
            })
            .collect()
    }
}

/// A transparent rule classifier given as a closure.
pub struct RuleFn<F> {
    rule: F,
}

impl<F> RuleFn<F>
where
    F: Fn(&Instance) -> Label + Send + Sync,
{
    pub fn new(rule: F) -> Self {
        RuleFn { rule }
    }
}

impl<F> Predictor for RuleFn<F>
where
    F: Fn(&Instance) -> Label + Send + Sync,
{
    fn predict_batch(&self, instances: &[Instance]) -> Result<Vec<Label>, ModelError> {
        Ok(instances.iter().map(&self.rule).collect())
    }
}
