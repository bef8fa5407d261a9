//! Actions, feasibility and action costs.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{Dataset, Instance};
use crate::mining::{Item, Predicate};
use crate::schema::{FeatureKind, Monotone, Schema, Value};

/// A set of feature assignments, at most one per feature, kept sorted by
/// feature index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Action {
    items: Vec<Item>,
}

impl Action {
    /// Panics if two items share a feature.
    pub fn new(mut items: Vec<Item>) -> Self {
        items.sort();
        assert!(
            items.windows(2).all(|w| w[0].feature != w[1].feature),
            "an action assigns each feature at most once"
        );
        Action { items }
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn features(&self) -> impl Iterator<Item = usize> + '_ {
        self.items.iter().map(|i| i.feature)
    }

    pub fn target(&self, feature: usize) -> Option<Value> {
        self.items
            .binary_search_by_key(&feature, |i| i.feature)
            .ok()
            .map(|k| self.items[k].value)
    }

    /// `a=x,b=y` with assignments ordered by feature name.
    pub fn render(&self, schema: &Schema) -> String {
        crate::mining::render_items(&self.items, schema)
    }
}

/// Returns a copy of `instance` with the action's assignments applied.
pub fn apply_action(instance: &Instance, action: &Action) -> Instance {
    let mut out = instance.clone();
    for item in action.items() {
        out.set(item.feature, item.value);
    }
    out
}

/// Anything that can report the current value of a feature.
pub trait ValueSource {
    fn value_of(&self, feature: usize) -> Option<Value>;
}

impl ValueSource for Instance {
    fn value_of(&self, feature: usize) -> Option<Value> {
        self.get(feature).copied()
    }
}

impl ValueSource for Predicate {
    fn value_of(&self, feature: usize) -> Option<Value> {
        Predicate::value_of(self, feature)
    }
}

/// False if the action lowers a non-decreasing feature or assigns a forbidden
/// value. Features the source does not fix are only checked for forbidden
/// targets.
pub fn is_feasible<S: ValueSource + ?Sized>(source: &S, action: &Action, schema: &Schema) -> bool {
    action.items().iter().all(|item| {
        let f = schema.feature(item.feature);
        if f.is_forbidden(item.value) {
            return false;
        }
        match (f.monotone, source.value_of(item.feature)) {
            (Monotone::NonDecreasing, Some(v)) => f.magnitude(item.value) >= f.magnitude(v),
            _ => true,
        }
    })
}

/// A non-negative cost or the distinguished infinite cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostValue {
    Finite(f64),
    Infinite,
}

impl CostValue {
    pub fn is_finite(self) -> bool {
        matches!(self, CostValue::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            CostValue::Finite(x) => Some(x),
            CostValue::Infinite => None,
        }
    }
}

impl Eq for CostValue {}

impl Ord for CostValue {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (CostValue::Finite(a), CostValue::Finite(b)) => a.total_cmp(b),
            (CostValue::Finite(_), CostValue::Infinite) => Ordering::Less,
            (CostValue::Infinite, CostValue::Finite(_)) => Ordering::Greater,
            (CostValue::Infinite, CostValue::Infinite) => Ordering::Equal,
        }
    }
}

impl PartialOrd for CostValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for CostValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostValue::Finite(x) => write!(f, "{x}"),
            CostValue::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for CostValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            CostValue::Finite(x) => s.serialize_f64(*x),
            CostValue::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for CostValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(CostValue::Finite(x)),
            Repr::Text(t) if t == "inf" => Ok(CostValue::Infinite),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad cost `{t}`"))),
        }
    }
}

/// Per-kind cost functions scaled by feature weights. Numerical features are
/// normalized by their min-max range over the whole dataset.
#[derive(Debug, Clone)]
pub struct CostModel {
    schema: Schema,
    spans: Vec<f64>,
}

impl CostModel {
    pub fn from_dataset(dataset: &Dataset) -> Self {
        let spans = (0..dataset.schema().len())
            .map(|f| dataset.scale(f).map_or(0.0, |(lo, hi)| hi - lo))
            .collect();
        CostModel {
            schema: dataset.schema().clone(),
            spans,
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    fn base(&self, feature: usize, from: Value, to: Value) -> f64 {
        if from == to {
            return 0.0;
        }
        let f = self.schema.feature(feature);
        match f.kind {
            FeatureKind::Categorical => 1.0,
            FeatureKind::Ordinal => (f.magnitude(from) - f.magnitude(to)).abs(),
            FeatureKind::Numerical => {
                let span = self.spans[feature];
                if span > 0.0 {
                    (f.magnitude(from) - f.magnitude(to)).abs() / span
                } else {
                    0.0
                }
            }
        }
    }

    /// Sum over assignments of `weight * base`, or infinite when infeasible or
    /// when the source does not fix an assigned feature.
    pub fn cost<S: ValueSource + ?Sized>(&self, source: &S, action: &Action) -> CostValue {
        if !is_feasible(source, action, &self.schema) {
            return CostValue::Infinite;
        }
        let mut total = 0.0;
        for item in action.items() {
            let Some(from) = source.value_of(item.feature) else {
                return CostValue::Infinite;
            };
            total += self.schema.feature(item.feature).weight * self.base(item.feature, from, item.value);
        }
        CostValue::Finite(total)
    }

    /// Subgroup-level cost: every member shares the predicate's values on the
    /// features a valid action touches.
    pub fn action_cost(&self, predicate: &Predicate, action: &Action) -> CostValue {
        self.cost(predicate, action)
    }
}
