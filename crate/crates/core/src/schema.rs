//! Feature schemas: kinds, domains, ordering, cost weights and feasibility rules.
//!
//! A [`Schema`] is built from a [`SchemaSpec`], the TOML document that names
//! every column of the input file. Cell values are stored as compact
//! [`Value`]s that only make sense together with the owning [`FeatureSchema`].

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed schema document: {0}")]
    Parse(String),
    #[error("invalid schema: {0}")]
    Invalid(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("unknown column `{0}` (not declared in the schema)")]
    UnknownColumn(String),
    #[error("column `{0}` declared in the schema is missing from the input header")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: value `{value}` is outside the feature domain")]
    DomainViolation {
        row: usize,
        column: String,
        value: String,
    },
    #[error("protected feature `{0}` must be categorical with exactly two values")]
    ProtectedNotBinary(String),
    #[error("binning `{feature}`: {reason}")]
    Binning { feature: String, reason: String },
}

/// The two protected values. `Zero` is the first declared protected level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "0")]
    Zero,
    #[serde(rename = "1")]
    One,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Zero, Side::One];

    pub fn index(self) -> usize {
        match self {
            Side::Zero => 0,
            Side::One => 1,
        }
    }

    pub fn other(self) -> Side {
        match self {
            Side::Zero => Side::One,
            Side::One => Side::Zero,
        }
    }

    pub fn from_index(i: usize) -> Side {
        if i == 0 {
            Side::Zero
        } else {
            Side::One
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Categorical,
    Ordinal,
    Numerical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Monotone {
    #[default]
    Free,
    NonDecreasing,
}

/// A single cell value. `Level` indexes the feature's domain list; `Number`
/// holds a numerical magnitude.
#[derive(Debug, Clone, Copy)]
pub enum Value {
    Level(u32),
    Number(f64),
}

impl Value {
    fn key(&self) -> (u8, u64) {
        match *self {
            Value::Level(code) => (0, code as u64),
            // -0.0 and 0.0 are the same value
            Value::Number(x) => (1, if x == 0.0 { 0 } else { x.to_bits() }),
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Value {}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.key().hash(state)
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Level(a), Value::Level(b)) => a.cmp(b),
            (Value::Number(a), Value::Number(b)) => a.total_cmp(b),
            (Value::Level(_), Value::Number(_)) => Ordering::Less,
            (Value::Number(_), Value::Level(_)) => Ordering::Greater,
        }
    }
}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Levels(Vec<String>),
    Range { min: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSchema {
    pub name: String,
    pub kind: FeatureKind,
    pub domain: Domain,
    /// Ordinal position of each level code; identity for categorical features.
    positions: Vec<u32>,
    lookup: HashMap<String, u32>,
    pub weight: f64,
    pub monotone: Monotone,
    forbidden: Vec<Value>,
}

impl FeatureSchema {
    pub fn categorical<S: AsRef<str>>(name: &str, levels: &[S]) -> Self {
        Self::with_levels(name, FeatureKind::Categorical, levels)
    }

    /// Ordinal feature whose levels are listed in increasing order.
    pub fn ordinal<S: AsRef<str>>(name: &str, levels: &[S]) -> Self {
        Self::with_levels(name, FeatureKind::Ordinal, levels)
    }

    pub fn numerical(name: &str, min: f64, max: f64) -> Self {
        FeatureSchema {
            name: name.to_string(),
            kind: FeatureKind::Numerical,
            domain: Domain::Range { min, max },
            positions: Vec::new(),
            lookup: HashMap::new(),
            weight: 1.0,
            monotone: Monotone::Free,
            forbidden: Vec::new(),
        }
    }

    fn with_levels<S: AsRef<str>>(name: &str, kind: FeatureKind, levels: &[S]) -> Self {
        let levels: Vec<String> = levels.iter().map(|s| s.as_ref().to_string()).collect();
        let lookup = levels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i as u32))
            .collect();
        FeatureSchema {
            name: name.to_string(),
            kind,
            positions: (0..levels.len() as u32).collect(),
            domain: Domain::Levels(levels),
            lookup,
            weight: 1.0,
            monotone: Monotone::Free,
            forbidden: Vec::new(),
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn non_decreasing(mut self) -> Self {
        self.monotone = Monotone::NonDecreasing;
        self
    }

    /// Overrides the ordinal positions: `order` lists every level from lowest to highest.
    pub fn with_order<S: AsRef<str>>(mut self, order: &[S]) -> Result<Self, SchemaError> {
        let n = self.levels().map_or(0, |l| l.len());
        if self.kind != FeatureKind::Ordinal {
            return Err(SchemaError::Invalid(format!(
                "`{}`: order is only meaningful for ordinal features",
                self.name
            )));
        }
        if order.len() != n {
            return Err(SchemaError::Invalid(format!(
                "`{}`: order must list each of the {n} domain values exactly once",
                self.name
            )));
        }
        let mut positions = vec![u32::MAX; n];
        for (pos, level) in order.iter().enumerate() {
            let code = *self.lookup.get(level.as_ref()).ok_or_else(|| {
                SchemaError::Invalid(format!(
                    "`{}`: order mentions `{}` which is not in the domain",
                    self.name,
                    level.as_ref()
                ))
            })?;
            if positions[code as usize] != u32::MAX {
                return Err(SchemaError::Invalid(format!(
                    "`{}`: order lists `{}` twice",
                    self.name,
                    level.as_ref()
                )));
            }
            positions[code as usize] = pos as u32;
        }
        self.positions = positions;
        Ok(self)
    }

    pub fn forbid<S: AsRef<str>>(mut self, targets: &[S]) -> Result<Self, SchemaError> {
        for t in targets {
            let v = self.parse(t.as_ref()).ok_or_else(|| {
                SchemaError::Invalid(format!(
                    "`{}`: forbidden target `{}` is not in the domain",
                    self.name,
                    t.as_ref()
                ))
            })?;
            if !self.forbidden.contains(&v) {
                self.forbidden.push(v);
            }
        }
        self.forbidden.sort();
        Ok(self)
    }

    pub fn levels(&self) -> Option<&[String]> {
        match &self.domain {
            Domain::Levels(l) => Some(l),
            Domain::Range { .. } => None,
        }
    }

    pub fn level_count(&self) -> usize {
        self.levels().map_or(0, |l| l.len())
    }

    /// Parses a cell token into a value of this feature, `None` if it is outside the domain.
    pub fn parse(&self, token: &str) -> Option<Value> {
        match &self.domain {
            Domain::Levels(_) => self.lookup.get(token).map(|&c| Value::Level(c)),
            Domain::Range { min, max } => {
                let x: f64 = token.trim().parse().ok()?;
                (x.is_finite() && x >= *min && x <= *max).then_some(Value::Number(x))
            }
        }
    }

    pub fn contains(&self, value: Value) -> bool {
        match (&self.domain, value) {
            (Domain::Levels(l), Value::Level(c)) => (c as usize) < l.len(),
            (Domain::Range { min, max }, Value::Number(x)) => x >= *min && x <= *max,
            _ => false,
        }
    }

    pub fn render(&self, value: Value) -> String {
        match (&self.domain, value) {
            (Domain::Levels(l), Value::Level(c)) => l
                .get(c as usize)
                .cloned()
                .unwrap_or_else(|| format!("<level {c}>")),
            (_, Value::Number(x)) => format!("{x}"),
            (_, Value::Level(c)) => format!("<level {c}>"),
        }
    }

    /// Ordinal position or numerical magnitude, used by monotonicity checks and costs.
    pub fn magnitude(&self, value: Value) -> f64 {
        match value {
            Value::Level(c) => self.positions.get(c as usize).copied().unwrap_or(c) as f64,
            Value::Number(x) => x,
        }
    }

    pub fn is_forbidden(&self, value: Value) -> bool {
        self.forbidden.binary_search(&value).is_ok()
    }

    pub fn forbidden_targets(&self) -> &[Value] {
        &self.forbidden
    }

    fn validate(&self) -> Result<(), SchemaError> {
        let bad = |msg: String| Err(SchemaError::Invalid(format!("`{}`: {msg}", self.name)));
        if !(self.weight.is_finite() && self.weight >= 0.0) {
            return bad(format!("weight must be a non-negative number, got {}", self.weight));
        }
        match &self.domain {
            Domain::Levels(levels) => {
                if levels.is_empty() {
                    return bad("domain is empty".into());
                }
                if self.lookup.len() != levels.len() {
                    return bad("domain lists a value twice".into());
                }
                let mut seen = vec![false; levels.len()];
                for &p in &self.positions {
                    match seen.get_mut(p as usize) {
                        Some(s) if !*s => *s = true,
                        _ => return bad("ordinal order is not a bijection".into()),
                    }
                }
            }
            Domain::Range { min, max } => {
                if !(min.is_finite() && max.is_finite() && min < max) {
                    return bad(format!("numerical range needs min < max, got [{min}, {max}]"));
                }
            }
        }
        if self.kind == FeatureKind::Categorical && self.monotone == Monotone::NonDecreasing {
            return bad("categorical features have no order, so cannot be non-decreasing".into());
        }
        Ok(())
    }
}

/// An ordered list of features plus the protected feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    features: Vec<FeatureSchema>,
    index: HashMap<String, usize>,
    protected: usize,
}

impl Schema {
    pub fn new(features: Vec<FeatureSchema>, protected: &str) -> Result<Self, SchemaError> {
        let mut index = HashMap::new();
        for (i, f) in features.iter().enumerate() {
            f.validate()?;
            if index.insert(f.name.clone(), i).is_some() {
                return Err(SchemaError::Invalid(format!(
                    "feature `{}` declared twice",
                    f.name
                )));
            }
        }
        let protected_idx = *index.get(protected).ok_or_else(|| {
            SchemaError::Invalid(format!("protected feature `{protected}` is not declared"))
        })?;
        let pf = &features[protected_idx];
        if pf.kind == FeatureKind::Numerical || pf.level_count() != 2 {
            return Err(SchemaError::ProtectedNotBinary(protected.to_string()));
        }
        Ok(Schema {
            features,
            index,
            protected: protected_idx,
        })
    }

    pub fn features(&self) -> &[FeatureSchema] {
        &self.features
    }

    pub fn feature(&self, i: usize) -> &FeatureSchema {
        &self.features[i]
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn protected(&self) -> usize {
        self.protected
    }

    pub fn protected_name(&self) -> &str {
        &self.features[self.protected].name
    }

    /// Text of the protected level mapped to `side`.
    pub fn side_label(&self, side: Side) -> &str {
        &self.features[self.protected].levels().expect("protected feature has levels")
            [side.index()]
    }

    pub fn side_of(&self, value: Value) -> Side {
        match value {
            Value::Level(c) => Side::from_index(c as usize),
            Value::Number(_) => unreachable!("protected feature is never numerical"),
        }
    }

    pub(crate) fn replace_feature(&self, i: usize, feature: FeatureSchema) -> Result<Self, SchemaError> {
        let mut features = self.features.clone();
        features[i] = feature;
        Schema::new(features, self.protected_name())
    }
}

fn default_delimiter() -> char {
    ','
}

fn default_missing() -> Vec<String> {
    vec!["".into(), "?".into(), "NA".into()]
}

fn default_weight() -> f64 {
    1.0
}

/// Column holding ground-truth labels, used only when training the builtin model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSpec {
    pub column: String,
    /// Token marking the favorable (+1) outcome; any other token is -1.
    pub positive: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default)]
    pub domain: Option<Vec<String>>,
    #[serde(default)]
    pub order: Option<Vec<String>>,
    #[serde(default)]
    pub range: Option<[f64; 2]>,
    #[serde(default = "default_weight")]
    pub weight: f64,
    #[serde(default)]
    pub monotone: Monotone,
    #[serde(default)]
    pub forbidden_targets: Vec<String>,
    /// Bin edges applied right after loading (numerical features only).
    #[serde(default)]
    pub bins: Option<Vec<f64>>,
}

/// The schema document: one `[[feature]]` table per column, in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaSpec {
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default)]
    pub protected: Option<String>,
    #[serde(default)]
    pub ignore_columns: Vec<String>,
    /// Tokens treated as missing unless they are declared domain values.
    #[serde(default = "default_missing")]
    pub missing_tokens: Vec<String>,
    #[serde(default)]
    pub label: Option<LabelSpec>,
    #[serde(rename = "feature")]
    pub features: Vec<FeatureSpec>,
}

impl SchemaSpec {
    pub fn from_toml(text: &str) -> Result<Self, SchemaError> {
        toml::from_str(text).map_err(|e| SchemaError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, SchemaError> {
        let text = std::fs::read_to_string(path).map_err(|source| SchemaError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn with_protected(mut self, protected: &str) -> Self {
        self.protected = Some(protected.to_string());
        self
    }

    /// Builds the unbinned schema (numerical features stay numerical).
    pub fn build(&self) -> Result<Schema, SchemaError> {
        let protected = self
            .protected
            .as_deref()
            .ok_or_else(|| SchemaError::Invalid("no protected feature named".into()))?;
        let mut names = HashSet::new();
        let mut features = Vec::with_capacity(self.features.len());
        for spec in &self.features {
            if !names.insert(spec.name.as_str()) {
                return Err(SchemaError::Invalid(format!(
                    "feature `{}` declared twice",
                    spec.name
                )));
            }
            features.push(spec.to_feature()?);
        }
        Schema::new(features, protected)
    }
}

impl FeatureSpec {
    fn to_feature(&self) -> Result<FeatureSchema, SchemaError> {
        let invalid = |msg: &str| SchemaError::Invalid(format!("`{}`: {msg}", self.name));
        let mut feature = match self.kind {
            FeatureKind::Numerical => {
                if self.domain.is_some() || self.order.is_some() {
                    return Err(invalid("numerical features take `range`, not `domain`/`order`"));
                }
                let [min, max] = self.range.ok_or_else(|| invalid("numerical feature needs `range = [min, max]`"))?;
                FeatureSchema::numerical(&self.name, min, max)
            }
            FeatureKind::Categorical | FeatureKind::Ordinal => {
                if self.range.is_some() {
                    return Err(invalid("`range` is only valid for numerical features"));
                }
                if self.bins.is_some() {
                    return Err(invalid("`bins` is only valid for numerical features"));
                }
                let levels = self
                    .domain
                    .as_ref()
                    .or(self.order.as_ref())
                    .ok_or_else(|| invalid("needs a `domain` list"))?;
                let mut f = FeatureSchema::with_levels(&self.name, self.kind, levels);
                if let Some(order) = &self.order {
                    if self.kind != FeatureKind::Ordinal {
                        return Err(invalid("`order` is only valid for ordinal features"));
                    }
                    f = f.with_order(order)?;
                }
                f
            }
        };
        feature.weight = self.weight;
        feature.monotone = self.monotone;
        feature = feature.forbid(&self.forbidden_targets)?;
        feature.validate()?;
        Ok(feature)
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}
