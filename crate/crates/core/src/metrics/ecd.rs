use serde::{Deserialize, Serialize};

use super::{EvaluatedAction, Viewpoint};
use crate::recourse::CostValue;
use crate::schema::Side;

/// Right-continuous step function from cost budget to aggregate
/// effectiveness. Zero below the first breakpoint.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Ecd {
    steps: Vec<(f64, f64)>,
}

impl Ecd {
    /// `steps` must have strictly increasing costs and non-decreasing values.
    pub fn from_steps(steps: Vec<(f64, f64)>) -> Self {
        debug_assert!(steps.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1));
        Ecd { steps }
    }

    pub fn steps(&self) -> &[(f64, f64)] {
        &self.steps
    }

    pub fn breakpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.0)
    }

    pub fn eval(&self, cost: f64) -> f64 {
        match self.steps.partition_point(|s| s.0 <= cost) {
            0 => 0.0,
            k => self.steps[k - 1].1,
        }
    }

    /// Value with every finite action in budget.
    pub fn total(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.1)
    }

    /// Smallest breakpoint reaching `phi`; zero for `phi <= 0`, infinite if
    /// never reached.
    pub fn inverse(&self, phi: f64) -> CostValue {
        if phi <= 0.0 {
            return CostValue::Finite(0.0);
        }
        self.steps
            .iter()
            .find(|s| s.1 >= phi)
            .map_or(CostValue::Infinite, |s| CostValue::Finite(s.0))
    }
}

/// ECD of one protected subgroup. Infinite-cost actions never enter.
pub fn build_ecd(actions: &[EvaluatedAction], side: Side, group_size: usize, viewpoint: Viewpoint) -> Ecd {
    let mut finite: Vec<(f64, &EvaluatedAction)> = actions
        .iter()
        .filter_map(|a| a.cost.finite().map(|c| (c, a)))
        .collect();
    finite.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = side.index();
    let mut steps: Vec<(f64, f64)> = Vec::new();
    let mut union = fixedbitset::FixedBitSet::new();
    let mut best = 0usize;
    for (cost, a) in finite {
        let flipped = &a.flipped[s];
        let reached = match viewpoint {
            Viewpoint::Micro => {
                union.grow(flipped.len());
                union.union_with(flipped);
                union.count_ones(..)
            }
            Viewpoint::Macro => {
                best = best.max(flipped.count_ones(..));
                best
            }
        };
        let eff = reached as f64 / group_size as f64;
        match steps.last_mut() {
            Some(last) if last.0 == cost => last.1 = eff,
            _ => steps.push((cost, eff)),
        }
    }
    Ecd { steps }
}
