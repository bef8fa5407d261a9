//! The end-to-end audit: mining, counterfactual evaluation, scoring,
//! ranking and reporting.

mod ranking;
mod report;

use std::collections::HashSet;

use fixedbitset::FixedBitSet;
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{split_affected, Dataset, Instance};
use crate::metrics::{Definition, EvaluatedAction, MetricError, SubgroupSummary, Viewpoint};
use crate::mining::{generate_actions, generate_subgroups, ActionIndex, MiningError, MinedAction, Subgroup};
use crate::model::{Label, ModelError, Predictor};
use crate::recourse::{Action, CostModel, CostValue};
use crate::schema::Side;

pub use ranking::{
    aggregated_rankings, derive_budgets, nearest_rank, rank_subgroups, ranking_analysis, AggregatedRankings,
    RankedEntry, RankedList, RankingAnalysisRow,
};
pub use report::{
    displayed_actions, format_csc, AuditReport, ConfigEcho, DefinitionReport, MiningStats, Population,
    ProtectedInfo, SubgroupRecord, REPORT_FORMAT,
};

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("predictor failed: {0}")]
    Predictor(#[from] ModelError),
    #[error(transparent)]
    Mining(#[from] MiningError),
    #[error("the classifier assigns no individual the unfavorable outcome")]
    EmptyAffected,
    #[error("no subgroup is frequent in both protected populations")]
    NoSubgroups,
    #[error("budget derivation: {0}")]
    Budget(String),
    #[error("invalid audit configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

impl AuditError {
    pub fn is_bridge(&self) -> bool {
        matches!(self, AuditError::Predictor(e) if e.is_bridge())
    }
}

/// Where within-budget definitions get their budgets.
#[derive(Debug, Clone, PartialEq)]
pub enum BudgetSpec {
    /// Nearest-rank percentiles of the per-subgroup cost to reach 50% micro
    /// effectiveness on both sides.
    Percentiles(Vec<f64>),
    Values(Vec<f64>),
}

impl Default for BudgetSpec {
    fn default() -> Self {
        BudgetSpec::Percentiles(vec![30.0, 60.0, 90.0])
    }
}

impl BudgetSpec {
    /// `percentile:30,60,90` or a plain list such as `1,2.5,4`.
    pub fn parse(text: &str) -> Result<Self, String> {
        let (percent, list) = match text.trim().strip_prefix("percentile:") {
            Some(rest) => (true, rest),
            None => (false, text.trim()),
        };
        let values = list
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| format!("`{}` is not a number", t.trim())))
            .collect::<Result<Vec<f64>, String>>()?;
        if values.is_empty() {
            return Err("no budgets given".into());
        }
        if percent {
            if let Some(p) = values.iter().find(|p| !(**p > 0.0 && **p < 100.0)) {
                return Err(format!("percentile {p} is outside (0, 100)"));
            }
            Ok(BudgetSpec::Percentiles(values))
        } else {
            if let Some(c) = values.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
                return Err(format!("budget {c} must be a non-negative number"));
            }
            Ok(BudgetSpec::Values(values))
        }
    }

    pub fn describe(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        match self {
            BudgetSpec::Percentiles(p) => format!("percentile:{}", join(p)),
            BudgetSpec::Values(v) => join(v),
        }
    }
}

/// A definition as configured, before budgets and `c_inf` are known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DefinitionSpec {
    Fixed(Definition),
    /// One definition per resolved budget.
    WithinBudget(Viewpoint),
    /// Unconditional mean recourse with the resolved `c_inf`.
    MeanRecourse,
}

fn parse_viewpoint(t: &str) -> Result<Viewpoint, String> {
    match t {
        "micro" => Ok(Viewpoint::Micro),
        "macro" => Ok(Viewpoint::Macro),
        _ => Err(format!("unknown viewpoint `{t}` (micro or macro)")),
    }
}

fn parse_unit(name: &str, t: &str, open: bool) -> Result<f64, String> {
    let x: f64 = t.parse().map_err(|_| format!("{name} `{t}` is not a number"))?;
    let ok = if open { x > 0.0 && x < 1.0 } else { (0.0..=1.0).contains(&x) };
    if ok {
        Ok(x)
    } else if open {
        Err(format!("{name} must lie in (0, 1), got {x}"))
    } else {
        Err(format!("{name} must lie in [0, 1], got {x}"))
    }
}

fn parse_cost(name: &str, t: &str) -> Result<f64, String> {
    match t.parse::<f64>() {
        Ok(x) if x.is_finite() && x >= 0.0 => Ok(x),
        _ => Err(format!("{name} must be a non-negative number, got `{t}`")),
    }
}

impl DefinitionSpec {
    /// Parses identifiers such as `equal-choice:0.7`,
    /// `cost-of-effectiveness:macro:0.3` or `effectiveness-within-budget:micro`.
    /// Every [`Definition::id`] parses back to itself.
    pub fn parse(text: &str) -> Result<Self, String> {
        let parts: Vec<&str> = text.trim().split(':').collect();
        let fixed = |d: Definition| Ok(DefinitionSpec::Fixed(d));
        match parts.as_slice() {
            ["equal-effectiveness"] => fixed(Definition::EqualEffectiveness {
                viewpoint: Viewpoint::Micro,
            }),
            ["equal-effectiveness", v] => fixed(Definition::EqualEffectiveness {
                viewpoint: parse_viewpoint(v)?,
            }),
            ["equal-choice", phi] => fixed(Definition::EqualChoice {
                phi: parse_unit("phi", phi, false)?,
            }),
            ["effectiveness-within-budget"] => Ok(DefinitionSpec::WithinBudget(Viewpoint::Micro)),
            ["effectiveness-within-budget", v] => Ok(DefinitionSpec::WithinBudget(parse_viewpoint(v)?)),
            ["effectiveness-within-budget", v, c] => fixed(Definition::EffectivenessWithinBudget {
                budget: parse_cost("budget", c)?,
                viewpoint: parse_viewpoint(v)?,
            }),
            ["cost-of-effectiveness", v, phi] => fixed(Definition::CostOfEffectiveness {
                phi: parse_unit("phi", phi, false)?,
                viewpoint: parse_viewpoint(v)?,
            }),
            ["fair-tradeoff"] => fixed(Definition::FairTradeOff {
                alpha: 0.05,
                viewpoint: Viewpoint::Micro,
            }),
            ["fair-tradeoff", v] => fixed(Definition::FairTradeOff {
                alpha: 0.05,
                viewpoint: parse_viewpoint(v)?,
            }),
            ["fair-tradeoff", v, alpha] => fixed(Definition::FairTradeOff {
                alpha: parse_unit("alpha", alpha, true)?,
                viewpoint: parse_viewpoint(v)?,
            }),
            ["conditional-mean-recourse"] => fixed(Definition::ConditionalMeanRecourse),
            ["mean-recourse"] => Ok(DefinitionSpec::MeanRecourse),
            ["mean-recourse", c] => fixed(Definition::MeanRecourse {
                c_inf: parse_cost("c_inf", c)?,
            }),
            _ => Err(format!("unknown definition `{text}`")),
        }
    }

    /// Equal Effectiveness; Equal Choice at 0.3 and 0.7; three budgets;
    /// Cost of Effectiveness micro and macro at 0.3 and 0.7; Fair Trade-Off;
    /// Conditional Mean Recourse.
    pub fn default_battery() -> Vec<DefinitionSpec> {
        [
            "equal-effectiveness:micro",
            "equal-choice:0.3",
            "equal-choice:0.7",
            "effectiveness-within-budget:micro",
            "cost-of-effectiveness:micro:0.3",
            "cost-of-effectiveness:micro:0.7",
            "cost-of-effectiveness:macro:0.3",
            "cost-of-effectiveness:macro:0.7",
            "fair-tradeoff:micro:0.05",
            "conditional-mean-recourse",
        ]
        .iter()
        .map(|t| DefinitionSpec::parse(t).expect("default definitions parse"))
        .collect()
    }

    /// Text form accepted by [`DefinitionSpec::parse`].
    pub fn describe(&self) -> String {
        match self {
            DefinitionSpec::Fixed(d) => d.id(),
            DefinitionSpec::WithinBudget(v) => format!("effectiveness-within-budget:{}", v.as_str()),
            DefinitionSpec::MeanRecourse => "mean-recourse".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditConfig {
    pub subgroup_support: f64,
    /// Defaults to `subgroup_support`.
    pub action_support: Option<f64>,
    pub definitions: Vec<DefinitionSpec>,
    pub budgets: BudgetSpec,
    /// Defaults to twice the largest finite action cost seen.
    pub c_inf: Option<f64>,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            subgroup_support: 0.01,
            action_support: None,
            definitions: DefinitionSpec::default_battery(),
            budgets: BudgetSpec::default(),
            c_inf: None,
            workers: 0,
        }
    }
}

impl AuditConfig {
    pub fn action_support(&self) -> f64 {
        self.action_support.unwrap_or(self.subgroup_support)
    }

    fn validate(&self) -> Result<(), AuditError> {
        let support_ok = |s: f64| s > 0.0 && s <= 1.0;
        if !support_ok(self.subgroup_support) {
            return Err(AuditError::Config(format!(
                "subgroup support must lie in (0, 1], got {}",
                self.subgroup_support
            )));
        }
        if !support_ok(self.action_support()) {
            return Err(AuditError::Config(format!(
                "action support must lie in (0, 1], got {}",
                self.action_support()
            )));
        }
        if self.definitions.is_empty() {
            return Err(AuditError::Config("no fairness definition enabled".into()));
        }
        if let Some(c) = self.c_inf {
            if !(c.is_finite() && c >= 0.0) {
                return Err(AuditError::Config(format!("c_inf must be a non-negative number, got {c}")));
            }
        }
        Ok(())
    }
}

/// Everything computed before any definition is scored.
pub struct Evaluation {
    pub subgroups: Vec<Subgroup>,
    pub actions: Vec<MinedAction>,
    pub summaries: Vec<SubgroupSummary>,
    pub excluded: usize,
    pub valid_pairs: usize,
    pub affected: [usize; 2],
    pub unaffected: usize,
}

const PREDICT_CHUNK: usize = 1024;

/// Bit `i` of the result is bit `positions[i]` of `set`; empty sets are
/// returned unallocated.
fn gather(set: &FixedBitSet, positions: &[usize], scratch: &mut Vec<usize>) -> FixedBitSet {
    const BITS: usize = usize::BITS as usize;
    let words = set.as_slice();
    scratch.clear();
    scratch.extend(positions.chunks(BITS).map(|chunk| {
        chunk
            .iter()
            .enumerate()
            .fold(0usize, |acc, (j, &p)| acc | ((words[p / BITS] >> (p % BITS)) & 1) << j)
    }));
    if scratch.iter().all(|&w| w == 0) {
        FixedBitSet::new()
    } else {
        FixedBitSet::with_capacity_and_blocks(positions.len(), scratch.iter().copied())
    }
}

/// Mines subgroups and actions, predicts every needed counterfactual once
/// per action, and summarizes each subgroup.
pub fn evaluate_subgroups(
    dataset: &Dataset,
    predictor: &dyn Predictor,
    config: &AuditConfig,
) -> Result<Evaluation, AuditError> {
    let split = split_affected(dataset, predictor)?;
    if split.affected.is_empty() {
        return Err(AuditError::EmptyAffected);
    }
    let mined_subgroups = generate_subgroups(dataset, &split, config.subgroup_support)?;
    let (subgroups, excluded): (Vec<Subgroup>, Vec<Subgroup>) =
        mined_subgroups.into_iter().partition(|s| s.size(Side::Zero) > 0 && s.size(Side::One) > 0);
    if subgroups.is_empty() {
        return Err(AuditError::NoSubgroups);
    }
    let mined_actions = if split.unaffected.is_empty() {
        Vec::new()
    } else {
        generate_actions(dataset, &split.unaffected, config.action_support())?
    };
    let actions: Vec<Action> = mined_actions.iter().map(|m| m.action.clone()).collect();
    let index = ActionIndex::new(&actions);
    let costs = CostModel::from_dataset(dataset);

    // positions in `split.affected`
    let mut position = vec![usize::MAX; dataset.len()];
    for (p, &r) in split.affected.iter().enumerate() {
        position[r] = p;
    }
    let universe = split.affected.len();
    let member_pos: Vec<[Vec<usize>; 2]> = subgroups
        .par_iter()
        .map(|sg| sg.members.clone().map(|rows| rows.into_iter().map(|r| position[r]).collect()))
        .collect();
    let member_bits: Vec<FixedBitSet> = member_pos
        .par_iter()
        .map(|sides| {
            let mut b = FixedBitSet::with_capacity(universe);
            b.extend(sides.iter().flatten().copied());
            b
        })
        .collect();
    let valid: Vec<Vec<(usize, CostValue)>> = subgroups
        .par_iter()
        .map(|sg| {
            index
                .valid_for(&sg.predicate, &actions)
                .into_iter()
                .map(|a| (a, costs.action_cost(&sg.predicate, &actions[a])))
                .collect()
        })
        .collect();

    let mut users: Vec<Vec<usize>> = vec![Vec::new(); actions.len()];
    for (s, pairs) in valid.iter().enumerate() {
        for &(a, cost) in pairs {
            if cost.is_finite() {
                users[a].push(s);
            }
        }
    }
    let flips: Vec<FixedBitSet> = users
        .par_iter()
        .enumerate()
        .map_init(Vec::new, |batch: &mut Vec<Instance>, (a, users)| -> Result<FixedBitSet, ModelError> {
            let mut needed = FixedBitSet::with_capacity(universe);
            for &s in users {
                needed.union_with(&member_bits[s]);
            }
            let positions: Vec<usize> = needed.ones().collect();
            let mut flipped = FixedBitSet::with_capacity(universe);
            if positions.is_empty() {
                return Ok(flipped);
            }
            // counterfactual rows reuse the buffers of earlier actions
            for chunk in positions.chunks(PREDICT_CHUNK) {
                for (i, &p) in chunk.iter().enumerate() {
                    let row = dataset.row(split.affected[p]);
                    match batch.get_mut(i) {
                        Some(x) => x.clone_from(row),
                        None => batch.push(row.clone()),
                    }
                    for item in actions[a].items() {
                        batch[i].set(item.feature, item.value);
                    }
                }
                let labels = predictor.predict_batch(&batch[..chunk.len()])?;
                if labels.len() != chunk.len() {
                    return Err(ModelError::Protocol(format!(
                        "predictor returned {} labels for {} rows",
                        labels.len(),
                        chunk.len()
                    )));
                }
                for (&p, l) in chunk.iter().zip(labels) {
                    if l == Label::Positive {
                        flipped.insert(p);
                    }
                }
            }
            Ok(flipped)
        })
        .collect::<Result<_, _>>()?;

    // flipped sets are indexed by member order within each side
    let silent: Vec<bool> = flips.iter().map(FixedBitSet::is_clear).collect();
    let summaries: Vec<SubgroupSummary> = subgroups
        .par_iter()
        .enumerate()
        .map_init(Vec::new, |scratch, (s, sg)| {
            let evaluated: Vec<EvaluatedAction> = valid[s]
                .iter()
                .map(|&(a, cost)| EvaluatedAction {
                    action: a,
                    cost,
                    flipped: [0, 1].map(|side| {
                        if cost.is_finite() && !silent[a] {
                            gather(&flips[a], &member_pos[s][side], scratch)
                        } else {
                            FixedBitSet::new()
                        }
                    }),
                })
                .collect();
            SubgroupSummary::from_evaluated([sg.members[0].len(), sg.members[1].len()], &evaluated)
        })
        .collect::<Result<_, _>>()?;

    Ok(Evaluation {
        valid_pairs: valid.iter().map(Vec::len).sum(),
        subgroups,
        actions: mined_actions,
        summaries,
        excluded: excluded.len(),
        affected: [split.sides[0].len(), split.sides[1].len()],
        unaffected: split.unaffected.len(),
    })
}

/// Resolves budget and `c_inf` placeholders. Duplicate identifiers (e.g.
/// two percentiles landing on the same budget) are kept once.
pub fn resolve_definitions(specs: &[DefinitionSpec], budgets: &[f64], c_inf: f64) -> Vec<Definition> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for spec in specs {
        let expanded: Vec<Definition> = match *spec {
            DefinitionSpec::Fixed(d) => vec![d],
            DefinitionSpec::WithinBudget(viewpoint) => budgets
                .iter()
                .map(|&budget| Definition::EffectivenessWithinBudget { budget, viewpoint })
                .collect(),
            DefinitionSpec::MeanRecourse => vec![Definition::MeanRecourse { c_inf }],
        };
        for d in expanded {
            if seen.insert(d.id()) {
                out.push(d);
            }
        }
    }
    out
}

/// Runs the whole audit on a worker pool of `config.workers` threads. The
/// report does not depend on the worker count.
pub fn run_audit(dataset: &Dataset, predictor: &dyn Predictor, config: &AuditConfig) -> Result<AuditReport, AuditError> {
    run_audit_detailed(dataset, predictor, config).map(|(_, report)| report)
}

/// [`run_audit`], also returning the mined subgroups, actions and summaries.
pub fn run_audit_detailed(
    dataset: &Dataset,
    predictor: &dyn Predictor,
    config: &AuditConfig,
) -> Result<(Evaluation, AuditReport), AuditError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| AuditError::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        let eval = evaluate_subgroups(dataset, predictor, config)?;
        let report = report::assemble(dataset, config, &eval)?;
        Ok((eval, report))
    })
}
