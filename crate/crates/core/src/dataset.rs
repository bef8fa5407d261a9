//! Tabular data loading, numeric binning and the affected/unaffected split.

use std::fs::File;
use std::io::{Read, Write};
use std::ops::Deref;
use std::path::Path;

use crate::model::{Label, ModelError, Predictor};
use crate::schema::{FeatureKind, FeatureSchema, Schema, SchemaError, SchemaSpec, Side, Value};

/// One row: a value per schema feature, in schema order.
#[derive(Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Instance(Vec<Value>);

impl Clone for Instance {
    fn clone(&self) -> Self {
        Instance(self.0.clone())
    }

    fn clone_from(&mut self, source: &Self) {
        self.0.clone_from(&source.0);
    }
}

impl Instance {
    pub fn new(values: Vec<Value>) -> Self {
        Instance(values)
    }

    pub fn set(&mut self, feature: usize, value: Value) {
        self.0[feature] = value;
    }

    pub fn into_values(self) -> Vec<Value> {
        self.0
    }
}

impl Deref for Instance {
    type Target = [Value];

    fn deref(&self) -> &[Value] {
        &self.0
    }
}

/// Immutable validated table. Row order is the input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Schema,
    rows: Vec<Instance>,
    labels: Option<Vec<Label>>,
    dropped_rows: usize,
    scales: Vec<Option<(f64, f64)>>,
}

impl Dataset {
    pub fn new(schema: Schema, rows: Vec<Instance>) -> Result<Self, SchemaError> {
        for (r, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(SchemaError::Invalid(format!(
                    "row {} has {} values, schema has {} features",
                    r + 1,
                    row.len(),
                    schema.len()
                )));
            }
            for (f, &v) in row.iter().enumerate() {
                let feature = schema.feature(f);
                if !feature.contains(v) {
                    return Err(SchemaError::DomainViolation {
                        row: r + 1,
                        column: feature.name.clone(),
                        value: feature.render(v),
                    });
                }
            }
        }
        let scales = compute_scales(&schema, &rows);
        Ok(Dataset {
            schema,
            rows,
            labels: None,
            dropped_rows: 0,
            scales,
        })
    }

    pub fn with_labels(mut self, labels: Vec<Label>) -> Result<Self, SchemaError> {
        if labels.len() != self.rows.len() {
            return Err(SchemaError::Invalid(format!(
                "{} labels for {} rows",
                labels.len(),
                self.rows.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn rows(&self) -> &[Instance] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &Instance {
        &self.rows[i]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn labels(&self) -> Option<&[Label]> {
        self.labels.as_deref()
    }

    /// Rows skipped at load because of missing values.
    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }

    /// Observed `(min, max)` of a numerical feature over the whole dataset.
    pub fn scale(&self, feature: usize) -> Option<(f64, f64)> {
        self.scales[feature]
    }

    pub fn side(&self, row: usize) -> Side {
        self.schema.side_of(self.rows[row][self.schema.protected()])
    }

    /// Writes the feature columns back out with a header row.
    pub fn write_csv<W: Write>(&self, writer: W, delimiter: char) -> Result<(), SchemaError> {
        let mut out = csv::WriterBuilder::new()
            .delimiter(delimiter as u8)
            .from_writer(writer);
        out.write_record(self.schema.features().iter().map(|f| f.name.as_str()))?;
        for row in &self.rows {
            out.write_record(
                row.iter()
                    .enumerate()
                    .map(|(f, &v)| self.schema.feature(f).render(v)),
            )?;
        }
        out.flush().map_err(|source| SchemaError::Io {
            path: "<output>".into(),
            source,
        })?;
        Ok(())
    }

    /// Replaces a numerical feature by ordinal bins labelled `(lo, hi]`.
    ///
    /// The lowest edge is inclusive so every value in `[first, last]` lands in a bin.
    pub fn bin_numeric(&self, feature: &str, edges: &[f64]) -> Result<Dataset, SchemaError> {
        let err = |reason: String| SchemaError::Binning {
            feature: feature.to_string(),
            reason,
        };
        let idx = self
            .schema
            .position(feature)
            .ok_or_else(|| err("no such feature".into()))?;
        let source = self.schema.feature(idx);
        if source.kind != FeatureKind::Numerical {
            return Err(err("feature is not numerical (already binned?)".into()));
        }
        if edges.len() < 2 {
            return Err(err("at least two edges are required".into()));
        }
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(err("edges must be finite and strictly increasing".into()));
        }
        let labels: Vec<String> = edges
            .windows(2)
            .map(|w| format!("({:?}, {:?}]", w[0], w[1]))
            .collect();
        let mut binned = FeatureSchema::ordinal(&source.name, &labels).with_weight(source.weight);
        binned.monotone = source.monotone;

        let (lo, hi) = (edges[0], edges[edges.len() - 1]);
        let mut rows = self.rows.clone();
        for (r, row) in rows.iter_mut().enumerate() {
            let x = match row[idx] {
                Value::Number(x) => x,
                Value::Level(_) => unreachable!("numerical feature holds numbers"),
            };
            if x < lo || x > hi {
                return Err(err(format!("row {}: value {x} outside [{lo}, {hi}]", r + 1)));
            }
            // first bin whose upper edge is >= x
            let bin = edges[1..].partition_point(|&e| e < x);
            row.set(idx, Value::Level(bin as u32));
        }
        let schema = self.schema.replace_feature(idx, binned)?;
        let scales = compute_scales(&schema, &rows);
        Ok(Dataset {
            schema,
            rows,
            labels: self.labels.clone(),
            dropped_rows: self.dropped_rows,
            scales,
        })
    }
}

fn compute_scales(schema: &Schema, rows: &[Instance]) -> Vec<Option<(f64, f64)>> {
    (0..schema.len())
        .map(|f| {
            if schema.feature(f).kind != FeatureKind::Numerical {
                return None;
            }
            rows.iter().fold(None, |acc: Option<(f64, f64)>, row| {
                let x = match row[f] {
                    Value::Number(x) => x,
                    Value::Level(_) => return acc,
                };
                Some(acc.map_or((x, x), |(lo, hi)| (lo.min(x), hi.max(x))))
            })
        })
        .collect()
}

pub fn load_dataset(path: &Path, spec: &SchemaSpec) -> Result<Dataset, SchemaError> {
    let file = File::open(path).map_err(|source| SchemaError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_dataset(file, spec)
}

/// Reads delimiter-separated text with a header row, validating every cell.
///
/// Rows holding a missing-value token that is not a declared domain value are
/// dropped and counted. Row numbers in errors are 1-based data rows.
pub fn read_dataset<R: Read>(reader: R, spec: &SchemaSpec) -> Result<Dataset, SchemaError> {
    let schema = spec.build()?;
    let mut csv = csv::ReaderBuilder::new()
        .delimiter(spec.delimiter as u8)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = csv.headers()?.clone();

    let mut feature_cols = vec![None; schema.len()];
    let mut label_col = None;
    for (c, name) in header.iter().enumerate() {
        if let Some(f) = schema.position(name) {
            feature_cols[f] = Some(c);
        } else if spec.label.as_ref().is_some_and(|l| l.column == name) {
            label_col = Some(c);
        } else if !spec.ignore_columns.iter().any(|i| i == name) {
            return Err(SchemaError::UnknownColumn(name.to_string()));
        }
    }
    let feature_cols: Vec<usize> = feature_cols
        .into_iter()
        .enumerate()
        .map(|(f, c)| c.ok_or_else(|| SchemaError::MissingColumn(schema.feature(f).name.clone())))
        .collect::<Result<_, _>>()?;
    if let (Some(label), None) = (&spec.label, label_col) {
        return Err(SchemaError::MissingColumn(label.column.clone()));
    }

    let is_missing = |token: &str| spec.missing_tokens.iter().any(|m| m == token);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut dropped = 0;
    'records: for (r, record) in csv.records().enumerate() {
        let record = record?;
        let mut values = Vec::with_capacity(schema.len());
        for (f, &c) in feature_cols.iter().enumerate() {
            let token = record.get(c).unwrap_or("");
            let feature = schema.feature(f);
            match feature.parse(token) {
                Some(v) => values.push(v),
                None if is_missing(token) => {
                    dropped += 1;
                    continue 'records;
                }
                None => {
                    return Err(SchemaError::DomainViolation {
                        row: r + 1,
                        column: feature.name.clone(),
                        value: token.to_string(),
                    })
                }
            }
        }
        if let (Some(label), Some(c)) = (&spec.label, label_col) {
            let token = record.get(c).unwrap_or("");
            if is_missing(token) {
                dropped += 1;
                continue;
            }
            labels.push(if token == label.positive {
                Label::Positive
            } else {
                Label::Negative
            });
        }
        rows.push(Instance::new(values));
    }

    let mut dataset = Dataset::new(schema, rows)?;
    dataset.dropped_rows = dropped;
    if spec.label.is_some() {
        dataset = dataset.with_labels(labels)?;
    }
    for f in &spec.features {
        if let Some(edges) = &f.bins {
            dataset = dataset.bin_numeric(&f.name, edges)?;
        }
    }
    Ok(dataset)
}

/// Affected individuals (predicted -1) split by protected value, plus the
/// unaffected rows. All lists hold dataset row indices in increasing order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AffectedSplit {
    pub affected: Vec<usize>,
    pub sides: [Vec<usize>; 2],
    pub unaffected: Vec<usize>,
}

impl AffectedSplit {
    pub fn side(&self, side: Side) -> &[usize] {
        &self.sides[side.index()]
    }
}

pub fn split_affected(dataset: &Dataset, predictor: &dyn Predictor) -> Result<AffectedSplit, ModelError> {
    let labels = predictor.predict_batch(dataset.rows())?;
    if labels.len() != dataset.len() {
        return Err(ModelError::Protocol(format!(
            "predictor returned {} labels for {} rows",
            labels.len(),
            dataset.len()
        )));
    }
    let mut split = AffectedSplit::default();
    for (i, label) in labels.into_iter().enumerate() {
        match label {
            Label::Negative => {
                split.affected.push(i);
                split.sides[dataset.side(i).index()].push(i);
            }
            Label::Positive => split.unaffected.push(i),
        }
    }
    Ok(split)
}
