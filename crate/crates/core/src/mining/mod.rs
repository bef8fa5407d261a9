//! Frequent-predicate mining: candidate subgroups from the affected
//! population and candidate actions from the unaffected one.

mod fpgrowth;

use std::collections::HashMap;
use std::io::Write;

use fixedbitset::FixedBitSet;
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{AffectedSplit, Dataset, Instance};
use crate::recourse::Action;
use crate::schema::{Schema, Side, Value};

pub use fpgrowth::{fpgrowth, min_count, FrequentItemset};

#[derive(Debug, Error)]
pub enum MiningError {
    #[error("support threshold must lie in (0, 1], got {0}")]
    InvalidSupport(f64),
    #[error("no transactions to mine")]
    EmptyTransactions,
    #[error("protected side {0} has no affected individuals")]
    EmptySide(Side),
    #[error("a predicate needs at least one item")]
    EmptyPredicate,
    #[error("feature {0} appears twice in one predicate")]
    DuplicateFeature(usize),
    #[error("writing itemsets: {0}")]
    Io(#[from] std::io::Error),
}

/// `feature = value`, equality only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Item {
    pub feature: usize,
    pub value: Value,
}

/// Non-empty conjunction of items over distinct features, sorted by feature index.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Predicate {
    items: Vec<Item>,
}

impl Predicate {
    pub fn new(mut items: Vec<Item>) -> Result<Self, MiningError> {
        if items.is_empty() {
            return Err(MiningError::EmptyPredicate);
        }
        items.sort();
        if let Some(w) = items.windows(2).find(|w| w[0].feature == w[1].feature) {
            return Err(MiningError::DuplicateFeature(w[0].feature));
        }
        Ok(Predicate { items })
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn value_of(&self, feature: usize) -> Option<Value> {
        self.items
            .binary_search_by_key(&feature, |i| i.feature)
            .ok()
            .map(|k| self.items[k].value)
    }

    pub fn matches(&self, x: &Instance) -> bool {
        self.items.iter().all(|i| x[i.feature] == i.value)
    }

    /// Canonical text `a=x,b=y`, items ordered by feature name.
    pub fn render(&self, schema: &Schema) -> String {
        render_items(&self.items, schema)
    }
}

pub(crate) fn render_items(items: &[Item], schema: &Schema) -> String {
    let mut parts: Vec<(&str, String)> = items
        .iter()
        .map(|i| {
            let f = schema.feature(i.feature);
            (f.name.as_str(), f.render(i.value))
        })
        .collect();
    parts.sort();
    parts
        .iter()
        .map(|(name, value)| format!("{name}={value}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Dense ids for every (feature, value) pair present in a dataset, protected
/// feature excluded.
#[derive(Debug, Clone)]
pub struct ItemCatalog {
    items: Vec<Item>,
    ids: HashMap<Item, u32>,
    protected: usize,
}

impl ItemCatalog {
    pub fn from_dataset(dataset: &Dataset) -> Self {
        let protected = dataset.schema().protected();
        let mut items: Vec<Item> = dataset
            .rows()
            .iter()
            .flat_map(|x| {
                x.iter()
                    .enumerate()
                    .filter(|&(f, _)| f != protected)
                    .map(|(feature, &value)| Item { feature, value })
            })
            .collect();
        items.sort();
        items.dedup();
        let ids = items.iter().enumerate().map(|(i, &it)| (it, i as u32)).collect();
        ItemCatalog { items, ids, protected }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn item(&self, id: u32) -> Item {
        self.items[id as usize]
    }

    pub fn id(&self, item: &Item) -> Option<u32> {
        self.ids.get(item).copied()
    }

    pub fn transaction(&self, x: &Instance) -> Vec<u32> {
        x.iter()
            .enumerate()
            .filter(|&(f, _)| f != self.protected)
            .filter_map(|(feature, &value)| self.id(&Item { feature, value }))
            .collect()
    }

    fn items_of(&self, ids: &[u32]) -> Vec<Item> {
        ids.iter().map(|&i| self.item(i)).collect()
    }
}

/// A frequent predicate together with its two protected subgroups.
#[derive(Debug, Clone, PartialEq)]
pub struct Subgroup {
    pub predicate: Predicate,
    /// Dataset row indices of `G_{p,0}` and `G_{p,1}`, ascending.
    pub members: [Vec<usize>; 2],
    /// `|G_{p,i}| / |D_i|`.
    pub coverage: [f64; 2],
}

impl Subgroup {
    pub fn size(&self, side: Side) -> usize {
        self.members[side.index()].len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinedAction {
    pub action: Action,
    /// Relative frequency in the unaffected population.
    pub support: f64,
}

/// Per-item membership bitsets over `rows`.
fn item_bitsets(dataset: &Dataset, catalog: &ItemCatalog, rows: &[usize]) -> Vec<FixedBitSet> {
    let mut sets = vec![FixedBitSet::with_capacity(rows.len()); catalog.len()];
    for (pos, &r) in rows.iter().enumerate() {
        for id in catalog.transaction(dataset.row(r)) {
            sets[id as usize].insert(pos);
        }
    }
    sets
}

fn mine_rows(
    dataset: &Dataset,
    catalog: &ItemCatalog,
    rows: &[usize],
    min_support: f64,
) -> Result<Vec<FrequentItemset>, MiningError> {
    let tx: Vec<Vec<u32>> = rows.iter().map(|&r| catalog.transaction(dataset.row(r))).collect();
    fpgrowth(&tx, min_support)
}

/// Predicates frequent among both `D0` and `D1`, sorted by canonical text.
pub fn generate_subgroups(
    dataset: &Dataset,
    split: &AffectedSplit,
    min_support: f64,
) -> Result<Vec<Subgroup>, MiningError> {
    for side in Side::BOTH {
        if split.side(side).is_empty() {
            return Err(MiningError::EmptySide(side));
        }
    }
    let catalog = ItemCatalog::from_dataset(dataset);
    let (f0, f1) = rayon::join(
        || mine_rows(dataset, &catalog, split.side(Side::Zero), min_support),
        || mine_rows(dataset, &catalog, split.side(Side::One), min_support),
    );
    let (f0, f1) = (f0?, f1?);
    let in_one: HashMap<&[u32], usize> = f1.iter().map(|f| (f.items.as_slice(), f.count)).collect();
    let common: Vec<&FrequentItemset> = f0.iter().filter(|f| in_one.contains_key(f.items.as_slice())).collect();

    let bits = [
        item_bitsets(dataset, &catalog, split.side(Side::Zero)),
        item_bitsets(dataset, &catalog, split.side(Side::One)),
    ];
    let schema = dataset.schema();
    let mut subgroups: Vec<(String, Subgroup)> = common
        .par_iter()
        .map(|f| {
            let predicate = Predicate::new(catalog.items_of(&f.items)).expect("mined itemsets are predicates");
            let members = [0, 1].map(|s| {
                let rows = &split.sides[s];
                let mut acc = bits[s][f.items[0] as usize].clone();
                for &i in &f.items[1..] {
                    acc.intersect_with(&bits[s][i as usize]);
                }
                acc.ones().map(|pos| rows[pos]).collect::<Vec<usize>>()
            });
            let coverage = [0, 1].map(|s| members[s].len() as f64 / split.sides[s].len() as f64);
            (
                predicate.render(schema),
                Subgroup {
                    predicate,
                    members,
                    coverage,
                },
            )
        })
        .collect();
    subgroups.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(subgroups.into_iter().map(|(_, s)| s).collect())
}

/// Frequent itemsets of the unaffected population as actions, sorted by
/// canonical text.
pub fn generate_actions(
    dataset: &Dataset,
    unaffected: &[usize],
    min_support: f64,
) -> Result<Vec<MinedAction>, MiningError> {
    let catalog = ItemCatalog::from_dataset(dataset);
    let found = mine_rows(dataset, &catalog, unaffected, min_support)?;
    let schema = dataset.schema();
    let mut actions: Vec<(String, MinedAction)> = found
        .into_iter()
        .map(|f| {
            let action = Action::new(catalog.items_of(&f.items));
            (
                action.render(schema),
                MinedAction {
                    action,
                    support: f.support,
                },
            )
        })
        .collect();
    actions.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(actions.into_iter().map(|(_, a)| a).collect())
}

/// Touches only features of `p` and changes at least one of them.
pub fn is_valid_action(predicate: &Predicate, action: &Action) -> bool {
    let mut differs = false;
    for item in action.items() {
        match predicate.value_of(item.feature) {
            None => return false,
            Some(v) => differs |= v != item.value,
        }
    }
    differs
}

/// Indices of the actions valid for `predicate`, ascending.
pub fn valid_actions(predicate: &Predicate, actions: &[Action]) -> Vec<usize> {
    (0..actions.len())
        .filter(|&a| is_valid_action(predicate, &actions[a]))
        .collect()
}

const MAX_INDEXED_LEN: usize = 20;

/// Actions bucketed by feature set, so valid actions are found by walking the
/// subsets of a predicate's features instead of scanning every action.
#[derive(Debug, Clone)]
pub struct ActionIndex {
    buckets: HashMap<Vec<usize>, Vec<usize>>,
}

impl ActionIndex {
    pub fn new(actions: &[Action]) -> Self {
        let mut buckets: HashMap<Vec<usize>, Vec<usize>> = HashMap::new();
        for (a, action) in actions.iter().enumerate() {
            buckets.entry(action.features().collect()).or_default().push(a);
        }
        ActionIndex { buckets }
    }

    /// Same result as [`valid_actions`].
    pub fn valid_for(&self, predicate: &Predicate, actions: &[Action]) -> Vec<usize> {
        let items = predicate.items();
        if items.len() > MAX_INDEXED_LEN {
            return valid_actions(predicate, actions);
        }
        let mut out = Vec::new();
        let mut key = Vec::with_capacity(items.len());
        for mask in 1u32..(1 << items.len()) {
            key.clear();
            key.extend((0..items.len()).filter(|b| mask >> b & 1 == 1).map(|b| items[b].feature));
            let Some(bucket) = self.buckets.get(&key) else {
                continue;
            };
            for &a in bucket {
                let same = actions[a]
                    .items()
                    .iter()
                    .all(|it| predicate.value_of(it.feature) == Some(it.value));
                if !same {
                    out.push(a);
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Writes `population,itemset,support` rows for every mined subgroup side and
/// every action.
pub fn write_itemsets<W: Write>(
    writer: W,
    schema: &Schema,
    subgroups: &[Subgroup],
    actions: &[MinedAction],
) -> Result<(), MiningError> {
    let mut out = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| MiningError::Io(std::io::Error::other(e));
    out.write_record(["population", "itemset", "support"]).map_err(csv_err)?;
    for sg in subgroups {
        let text = sg.predicate.render(schema);
        for side in Side::BOTH {
            out.write_record([
                format!("affected:{side}"),
                text.clone(),
                sg.coverage[side.index()].to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    for a in actions {
        out.write_record(["unaffected".to_string(), a.action.render(schema), a.support.to_string()])
            .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}
