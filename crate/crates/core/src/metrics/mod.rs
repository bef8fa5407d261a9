//! Effectiveness, effectiveness-cost distributions and the fairness-of-recourse
//! definitions.

mod definitions;
mod ecd;

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::recourse::CostValue;
use crate::schema::Side;

pub use definitions::{
    ks_threshold, metric_cost_of_effectiveness, metric_effectiveness_within_budget, metric_equal_choice,
    metric_equal_effectiveness, metric_fair_tradeoff, metric_mean_recourse, Definition, KsConfidence,
    MetricOutcome, Score, Unfairness, FAIR_TOLERANCE,
};
pub use ecd::{build_ecd, Ecd};
pub(crate) use definitions::trim_number;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("protected subgroup {0} is empty")]
    EmptyGroup(Side),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Viewpoint {
    /// Each individual picks their own action: union of flip sets.
    Micro,
    /// One action for the whole group: best single flip set.
    Macro,
}

impl Viewpoint {
    pub fn as_str(self) -> &'static str {
        match self {
            Viewpoint::Micro => "micro",
            Viewpoint::Macro => "macro",
        }
    }
}

/// An action applied to one subgroup. `flipped[i]` marks members of `G_{p,i}`
/// whose counterfactual is predicted +1; bit positions may index any
/// universe as long as the two sides do not share one.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatedAction {
    pub action: usize,
    pub cost: CostValue,
    pub flipped: [FixedBitSet; 2],
}

pub fn effectiveness(action: &EvaluatedAction, side: Side, group_size: usize) -> Result<f64, MetricError> {
    if group_size == 0 {
        return Err(MetricError::EmptyGroup(side));
    }
    Ok(action.flipped[side.index()].count_ones(..) as f64 / group_size as f64)
}

/// Micro: share flipped by some finite-cost action. Macro: best single
/// finite-cost action.
pub fn aggregate_effectiveness(
    actions: &[EvaluatedAction],
    side: Side,
    group_size: usize,
    viewpoint: Viewpoint,
) -> Result<f64, MetricError> {
    if group_size == 0 {
        return Err(MetricError::EmptyGroup(side));
    }
    Ok(build_ecd(actions, side, group_size, viewpoint).total())
}

/// Per-subgroup, per-action figures kept in reports. Serialized as
/// `[action, cost, flipped0, flipped1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "(usize, f64, usize, usize)", from = "(usize, f64, usize, usize)")]
pub struct ActionStat {
    pub action: usize,
    pub cost: f64,
    pub flipped: [usize; 2],
}

impl From<ActionStat> for (usize, f64, usize, usize) {
    fn from(a: ActionStat) -> Self {
        (a.action, a.cost, a.flipped[0], a.flipped[1])
    }
}

impl From<(usize, f64, usize, usize)> for ActionStat {
    fn from((action, cost, f0, f1): (usize, f64, usize, usize)) -> Self {
        ActionStat {
            action,
            cost,
            flipped: [f0, f1],
        }
    }
}

impl ActionStat {
    pub fn effectiveness(&self, side: Side, sizes: [usize; 2]) -> f64 {
        self.flipped[side.index()] as f64 / sizes[side.index()] as f64
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
struct SideSummary {
    micro: Ecd,
    macro_: Ecd,
    /// Sum of each flipped individual's cheapest effective cost.
    recourse_sum: f64,
    recourse_count: usize,
}

/// Everything the metrics need about one subgroup, without flip sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgroupSummary {
    pub sizes: [usize; 2],
    /// Finite-cost actions ordered by `(cost, action)`.
    pub actions: Vec<ActionStat>,
    /// Valid actions with infinite cost.
    pub infeasible: usize,
    sides: [SideSummary; 2],
}

impl SubgroupSummary {
    pub fn from_evaluated(sizes: [usize; 2], evaluated: &[EvaluatedAction]) -> Result<Self, MetricError> {
        for side in Side::BOTH {
            if sizes[side.index()] == 0 {
                return Err(MetricError::EmptyGroup(side));
            }
        }
        let mut finite: Vec<(f64, &EvaluatedAction)> = evaluated
            .iter()
            .filter_map(|a| a.cost.finite().map(|c| (c, a)))
            .collect();
        finite.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.action.cmp(&b.1.action)));
        let infeasible = evaluated.len() - finite.len();
        let actions = finite
            .iter()
            .map(|&(cost, a)| ActionStat {
                action: a.action,
                cost,
                flipped: [a.flipped[0].count_ones(..), a.flipped[1].count_ones(..)],
            })
            .collect();

        // one cost-ordered sweep per side yields both ECDs and the recourse sums
        let sides = [0, 1].map(|s| {
            let n = sizes[s] as f64;
            let mut summary = SideSummary::default();
            let (mut micro, mut macro_): (Vec<(f64, f64)>, Vec<(f64, f64)>) = (Vec::new(), Vec::new());
            let mut union = FixedBitSet::new();
            let mut best = 0usize;
            for &(cost, a) in &finite {
                let flipped = &a.flipped[s];
                if !flipped.is_empty() {
                    union.grow(flipped.len());
                    let fresh = flipped.difference(&union).count();
                    summary.recourse_sum += cost * fresh as f64;
                    summary.recourse_count += fresh;
                    union.union_with(flipped);
                    best = best.max(flipped.count_ones(..));
                }
                for (steps, reached) in [(&mut micro, summary.recourse_count), (&mut macro_, best)] {
                    let eff = reached as f64 / n;
                    match steps.last_mut() {
                        Some(last) if last.0 == cost => last.1 = eff,
                        _ => steps.push((cost, eff)),
                    }
                }
            }
            summary.micro = Ecd::from_steps(micro);
            summary.macro_ = Ecd::from_steps(macro_);
            summary
        });
        Ok(SubgroupSummary {
            sizes,
            actions,
            infeasible,
            sides,
        })
    }

    pub fn size(&self, side: Side) -> usize {
        self.sizes[side.index()]
    }

    pub fn ecd(&self, side: Side, viewpoint: Viewpoint) -> &Ecd {
        let s = &self.sides[side.index()];
        match viewpoint {
            Viewpoint::Micro => &s.micro,
            Viewpoint::Macro => &s.macro_,
        }
    }

    pub fn effectiveness(&self, stat: &ActionStat, side: Side) -> f64 {
        stat.effectiveness(side, self.sizes)
    }

    /// Members of `side` with at least one effective finite-cost action.
    pub fn recourse_count(&self, side: Side) -> usize {
        self.sides[side.index()].recourse_count
    }

    /// Sum over those members of their cheapest effective cost.
    pub fn recourse_sum(&self, side: Side) -> f64 {
        self.sides[side.index()].recourse_sum
    }

    /// The same subgroup with protected labels exchanged.
    pub fn swapped(&self) -> Self {
        let mut out = self.clone();
        out.sizes.swap(0, 1);
        out.sides.swap(0, 1);
        for a in &mut out.actions {
            a.flipped.swap(0, 1);
        }
        out
    }

    pub fn max_finite_cost(&self) -> Option<f64> {
        self.actions.iter().map(|a| a.cost).reduce(f64::max)
    }
}
