//! Builtin logistic regression over one-hot encoded features, fitted by
//! full-batch gradient descent.

use serde::{Deserialize, Serialize};

use super::{Label, ModelError, Predictor};
use crate::dataset::{Dataset, Instance};
use crate::schema::{Domain, Schema, Value};

const WEIGHTS_HEADER: &str = "recourse-audit logistic v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogisticConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            learning_rate: 0.1,
            epochs: 500,
            l2: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Encoding {
    OneHot { levels: Vec<String> },
    Scaled { min: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq)]
struct Column {
    feature: String,
    offset: usize,
    encoding: Encoding,
}

impl Column {
    fn width(&self) -> usize {
        match &self.encoding {
            Encoding::OneHot { levels } => levels.len(),
            Encoding::Scaled { .. } => 1,
        }
    }

    /// The single active (weight index, input value) pair for `value`.
    #[inline]
    fn encode(&self, value: Value) -> Result<(usize, f64), ModelError> {
        match (&self.encoding, value) {
            (Encoding::OneHot { levels }, Value::Level(c)) if (c as usize) < levels.len() => {
                Ok((self.offset + c as usize, 1.0))
            }
            (Encoding::Scaled { min, max }, Value::Number(x)) => {
                let scaled = if max > min { (x - min) / (max - min) } else { 0.0 };
                Ok((self.offset, scaled))
            }
            _ => Err(ModelError::SchemaMismatch(format!(
                "value {value:?} does not fit feature `{}`",
                self.feature
            ))),
        }
    }
}

/// Linear scorer `intercept + w . onehot(x)`; labels are the score's sign.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    columns: Vec<Column>,
    weights: Vec<f64>,
    intercept: f64,
    loss_trace: Vec<f64>,
}

fn layout(schema: &Schema, scale: impl Fn(usize) -> Option<(f64, f64)>) -> Vec<Column> {
    let mut offset = 0;
    schema
        .features()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let encoding = match &f.domain {
                Domain::Levels(levels) => Encoding::OneHot {
                    levels: levels.clone(),
                },
                Domain::Range { min, max } => {
                    let (min, max) = scale(i).unwrap_or((*min, *max));
                    Encoding::Scaled { min, max }
                }
            };
            let col = Column {
                feature: f.name.clone(),
                offset,
                encoding,
            };
            offset += col.width();
            col
        })
        .collect()
}

impl LogisticModel {
    /// An untrained model (all weights zero) laid out for `dataset`.
    pub fn zeros(dataset: &Dataset) -> Self {
        let columns = layout(dataset.schema(), |f| dataset.scale(f));
        let dim = columns.iter().map(Column::width).sum();
        LogisticModel {
            columns,
            weights: vec![0.0; dim],
            intercept: 0.0,
            loss_trace: Vec::new(),
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    /// Regularized training loss before the first update and after each epoch.
    pub fn loss_trace(&self) -> &[f64] {
        &self.loss_trace
    }

    fn encode(&self, instance: &Instance) -> Result<Vec<(usize, f64)>, ModelError> {
        if instance.len() != self.columns.len() {
            return Err(ModelError::SchemaMismatch(format!(
                "instance has {} values, model expects {}",
                instance.len(),
                self.columns.len()
            )));
        }
        self.columns
            .iter()
            .zip(instance.iter())
            .map(|(c, &v)| c.encode(v))
            .collect()
    }

    pub fn score(&self, instance: &Instance) -> Result<f64, ModelError> {
        if instance.len() != self.columns.len() {
            return Err(ModelError::SchemaMismatch(format!(
                "instance has {} values, model expects {}",
                instance.len(),
                self.columns.len()
            )));
        }
        let mut z = self.intercept;
        for (c, &v) in self.columns.iter().zip(instance.iter()) {
            let (j, x) = c.encode(v)?;
            z += self.weights[j] * x;
        }
        Ok(z)
    }

    pub fn to_weights_text(&self) -> String {
        let mut out = format!("{WEIGHTS_HEADER}\nintercept\t{}\n", self.intercept);
        for col in &self.columns {
            match &col.encoding {
                Encoding::OneHot { levels } => {
                    for (k, level) in levels.iter().enumerate() {
                        out.push_str(&format!(
                            "weight\t{}\t{}\t{}\n",
                            col.feature,
                            level,
                            self.weights[col.offset + k]
                        ));
                    }
                }
                Encoding::Scaled { min, max } => {
                    out.push_str(&format!("scale\t{}\t{min}\t{max}\n", col.feature));
                    out.push_str(&format!(
                        "weight\t{}\t\t{}\n",
                        col.feature, self.weights[col.offset]
                    ));
                }
            }
        }
        out
    }

    /// Parses a weight file written by [`LogisticModel::to_weights_text`].
    /// Columns the file does not mention get weight zero.
    pub fn from_weights_text(text: &str, schema: &Schema) -> Result<Self, ModelError> {
        let bad = |line: usize, msg: &str| ModelError::WeightsFile(format!("line {line}: {msg}"));
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == WEIGHTS_HEADER => {}
            _ => return Err(ModelError::WeightsFile(format!("expected header `{WEIGHTS_HEADER}`"))),
        }
        let num = |line: usize, s: &str| -> Result<f64, ModelError> {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| bad(line, &format!("`{s}` is not a finite number")))
        };
        let mut columns = layout(schema, |_| None);
        let mut weights = vec![0.0; columns.iter().map(Column::width).sum()];
        let mut intercept = 0.0;
        let mut entries = Vec::new();
        for (i, line) in lines {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            let col_of = |name: &str| {
                columns
                    .iter()
                    .position(|c| c.feature == name)
                    .ok_or_else(|| ModelError::SchemaMismatch(format!("unknown feature `{name}` in weight file")))
            };
            match parts.as_slice() {
                ["intercept", v] => intercept = num(line_no, v)?,
                ["scale", feature, min, max] => {
                    let c = col_of(feature)?;
                    let (min, max) = (num(line_no, min)?, num(line_no, max)?);
                    match &mut columns[c].encoding {
                        Encoding::Scaled { min: m0, max: m1 } => {
                            *m0 = min;
                            *m1 = max;
                        }
                        Encoding::OneHot { .. } => {
                            return Err(bad(line_no, "scale given for a non-numerical feature"))
                        }
                    }
                }
                ["weight", feature, level, w] => {
                    entries.push((line_no, col_of(feature)?, level.to_string(), num(line_no, w)?))
                }
                _ => return Err(bad(line_no, "unrecognized entry")),
            }
        }
        for (line_no, c, level, w) in entries {
            let col = &columns[c];
            let j = match &col.encoding {
                Encoding::OneHot { levels } => {
                    let k = levels.iter().position(|l| *l == level).ok_or_else(|| {
                        ModelError::SchemaMismatch(format!(
                            "line {line_no}: `{level}` is not a value of `{}`",
                            col.feature
                        ))
                    })?;
                    col.offset + k
                }
                Encoding::Scaled { .. } if level.is_empty() => col.offset,
                Encoding::Scaled { .. } => {
                    return Err(bad(line_no, "numerical weights take an empty value field"))
                }
            };
            weights[j] = w;
        }
        Ok(LogisticModel {
            columns,
            weights,
            intercept,
            loss_trace: Vec::new(),
        })
    }
}

impl Predictor for LogisticModel {
    fn predict_batch(&self, instances: &[Instance]) -> Result<Vec<Label>, ModelError> {
        instances
            .iter()
            .map(|x| self.score(x).map(Label::from_score))
            .collect()
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fits the builtin model by batch gradient descent on the L2-regularized
/// logistic loss, starting from all-zero weights. The intercept is not
/// regularized.
pub fn train_logistic(
    dataset: &Dataset,
    labels: &[Label],
    config: &LogisticConfig,
) -> Result<LogisticModel, ModelError> {
    if labels.len() != dataset.len() {
        return Err(ModelError::LabelCount {
            expected: dataset.len(),
            got: labels.len(),
        });
    }
    if !labels.contains(&Label::Positive) || !labels.contains(&Label::Negative) {
        return Err(ModelError::SingleClass);
    }
    if !(config.learning_rate.is_finite() && config.learning_rate > 0.0) {
        return Err(ModelError::InvalidConfig("learning_rate must be positive".into()));
    }
    if !(config.l2.is_finite() && config.l2 >= 0.0) {
        return Err(ModelError::InvalidConfig("l2 must be non-negative".into()));
    }

    let mut model = LogisticModel::zeros(dataset);
    let encoded: Vec<Vec<(usize, f64)>> = dataset
        .rows()
        .iter()
        .map(|x| model.encode(x))
        .collect::<Result<_, _>>()?;
    let targets: Vec<f64> = labels
        .iter()
        .map(|l| if *l == Label::Positive { 1.0 } else { 0.0 })
        .collect();
    let n = encoded.len() as f64;
    let mut grad = vec![0.0; model.weights.len()];

    for epoch in 0..=config.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        let mut loss = 0.0;
        for (row, &y) in encoded.iter().zip(&targets) {
            let z = row
                .iter()
                .fold(model.intercept, |acc, &(j, x)| acc + model.weights[j] * x);
            loss += softplus(z) - y * z;
            let residual = sigmoid(z) - y;
            grad_b += residual;
            for &(j, x) in row {
                grad[j] += residual * x;
            }
        }
        let penalty: f64 = model.weights.iter().map(|w| w * w).sum::<f64>() * config.l2 / 2.0;
        let loss = loss / n + penalty;
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { epoch });
        }
        model.loss_trace.push(loss);
        if epoch == config.epochs {
            break;
        }
        let lr = config.learning_rate;
        for (w, g) in model.weights.iter_mut().zip(&grad) {
            *w -= lr * (g / n + config.l2 * *w);
        }
        model.intercept -= lr * grad_b / n;
    }
    Ok(model)
}
