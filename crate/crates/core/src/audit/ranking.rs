use serde::{Deserialize, Serialize};

use super::AuditError;
use crate::metrics::{MetricOutcome, SubgroupSummary, Unfairness, Viewpoint};
use crate::schema::Side;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub subgroup: usize,
    /// Competition rank; `None` marks a fair subgroup.
    pub rank: Option<usize>,
}

/// Subgroups ordered from most to least unfair, fair ones last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub definition: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn unfair(&self) -> &[RankedEntry] {
        let n = self.entries.iter().take_while(|e| e.rank.is_some()).count();
        &self.entries[..n]
    }

    pub fn fair_count(&self) -> usize {
        self.entries.len() - self.unfair().len()
    }

    /// Rank given to fair subgroups when ranks are compared across
    /// definitions: the position right after the last unfair tier.
    pub fn fair_rank(&self) -> usize {
        self.unfair().len() + 1
    }

    /// Largest rank tier, counting the fair tier if present.
    pub fn max_tier(&self) -> usize {
        if self.fair_count() > 0 {
            self.fair_rank()
        } else {
            self.unfair().last().and_then(|e| e.rank).unwrap_or(1)
        }
    }

    /// Rank of every subgroup, fair ones at [`RankedList::fair_rank`].
    pub fn effective_ranks(&self, subgroups: usize) -> Vec<usize> {
        let mut ranks = vec![self.fair_rank(); subgroups];
        for e in self.unfair() {
            ranks[e.subgroup] = e.rank.expect("unfair entries are ranked");
        }
        ranks
    }

    pub fn rank1(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().filter(|e| e.rank == Some(1)).map(|e| e.subgroup)
    }
}

/// Competition ranking ("1, 2, 2, 4") by unfairness, infinite first. Ties and
/// fair subgroups are ordered by `keys` (canonical predicate text).
pub fn rank_subgroups(definition: &str, outcomes: &[MetricOutcome], keys: &[String]) -> RankedList {
    let mut order: Vec<usize> = (0..outcomes.len()).collect();
    order.sort_by(|&a, &b| {
        outcomes[b]
            .unfairness
            .rank_key()
            .cmp(&outcomes[a].unfairness.rank_key())
            .then_with(|| keys[a].cmp(&keys[b]))
    });
    let mut entries = Vec::with_capacity(order.len());
    let mut prev: Option<(i64, usize)> = None;
    for (pos, &s) in order.iter().enumerate() {
        let u = outcomes[s].unfairness;
        let rank = if u == Unfairness::Fair {
            None
        } else {
            let key = u.rank_key();
            let r = match prev {
                Some((k, r)) if k == key => r,
                _ => pos + 1,
            };
            prev = Some((key, r));
            Some(r)
        };
        entries.push(RankedEntry { subgroup: s, rank });
    }
    RankedList {
        definition: definition.to_string(),
        entries,
    }
}

/// Nearest-rank percentile of a sorted, non-empty slice.
pub fn nearest_rank(sorted: &[f64], percentile: f64) -> f64 {
    let n = sorted.len();
    let rank = ((percentile / 100.0 * n as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

/// Budgets as percentiles of the per-subgroup cost for both protected
/// subgroups to reach 50% micro effectiveness.
pub fn derive_budgets(summaries: &[SubgroupSummary], percentiles: &[f64]) -> Result<Vec<f64>, AuditError> {
    if let Some(p) = percentiles.iter().find(|p| !(**p > 0.0 && **p < 100.0)) {
        return Err(AuditError::Budget(format!("percentile {p} is outside (0, 100)")));
    }
    let mut costs: Vec<f64> = summaries
        .iter()
        .filter_map(|s| {
            let c0 = s.ecd(Side::Zero, Viewpoint::Micro).inverse(0.5).finite()?;
            let c1 = s.ecd(Side::One, Viewpoint::Micro).inverse(0.5).finite()?;
            Some(c0.max(c1))
        })
        .collect();
    if costs.is_empty() {
        return Err(AuditError::Budget(
            "no subgroup reaches 50% micro effectiveness on both sides; give explicit budgets".into(),
        ));
    }
    costs.sort_by(f64::total_cmp);
    Ok(percentiles.iter().map(|&p| nearest_rank(&costs, p)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingAnalysisRow {
    pub definition: String,
    /// Subgroups tied at rank 1.
    pub rank1: usize,
    /// Size of the top-10% window, `ceil(0.1 * subgroups)`.
    pub window: usize,
    /// Bias direction counts among the unfair subgroups inside the window.
    pub against: [usize; 2],
}

/// Per definition: rank-1 ties and bias directions within the top 10% of
/// all subgroups (fair ones never enter the window).
pub fn ranking_analysis(
    lists: &[RankedList],
    outcomes: &[Vec<MetricOutcome>],
    subgroups: usize,
) -> Vec<RankingAnalysisRow> {
    let window = subgroups.div_ceil(10);
    lists
        .iter()
        .zip(outcomes)
        .map(|(list, outs)| {
            let mut against = [0, 0];
            for e in list.unfair().iter().take(window) {
                if let Some(side) = outs[e.subgroup].bias_against {
                    against[side.index()] += 1;
                }
            }
            RankingAnalysisRow {
                definition: list.definition.clone(),
                rank1: list.rank1().count(),
                window,
                against,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedRankings {
    pub definitions: Vec<String>,
    /// `cells[i][j]`: mean rank under `j` of the rank-1 subgroups of `i`,
    /// divided by the largest tier of `j`. Diagonal and undefined cells are null.
    pub cells: Vec<Vec<Option<f64>>>,
    /// Definitions with no rank-1 subgroup (their rows are empty).
    pub no_rank1: Vec<bool>,
}

pub fn aggregated_rankings(lists: &[RankedList], subgroups: usize) -> AggregatedRankings {
    let ranks: Vec<Vec<usize>> = lists.iter().map(|l| l.effective_ranks(subgroups)).collect();
    let tiers: Vec<usize> = lists.iter().map(RankedList::max_tier).collect();
    let mut cells = vec![vec![None; lists.len()]; lists.len()];
    let mut no_rank1 = vec![false; lists.len()];
    for (i, li) in lists.iter().enumerate() {
        let top: Vec<usize> = li.rank1().collect();
        if top.is_empty() {
            no_rank1[i] = true;
            continue;
        }
        for j in 0..lists.len() {
            if i == j {
                continue;
            }
            let mean = top.iter().map(|&s| ranks[j][s] as f64).sum::<f64>() / top.len() as f64;
            cells[i][j] = Some(mean / tiers[j] as f64);
        }
    }
    AggregatedRankings {
        definitions: lists.iter().map(|l| l.definition.clone()).collect(),
        cells,
        no_rank1,
    }
}
