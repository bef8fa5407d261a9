use std::fmt::Write as _;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ranking::{
    aggregated_rankings, derive_budgets, rank_subgroups, ranking_analysis, AggregatedRankings, RankedList,
    RankingAnalysisRow,
};
use super::{resolve_definitions, AuditConfig, AuditError, BudgetSpec, DefinitionSpec, Evaluation};
use crate::dataset::Dataset;
use crate::metrics::{ActionStat, Definition, MetricOutcome, Unfairness, Viewpoint};
use crate::schema::Side;

/// Versioned identifier of the structured report layout.
pub const REPORT_FORMAT: &str = "recourse-audit-report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub subgroup_support: f64,
    pub action_support: f64,
    pub definitions: Vec<String>,
    pub budgets: String,
    pub c_inf: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtectedInfo {
    pub feature: String,
    pub labels: [String; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub rows: usize,
    pub dropped_rows: usize,
    pub affected: [usize; 2],
    pub unaffected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningStats {
    pub subgroups: usize,
    /// Subgroups dropped because one protected side is empty.
    pub excluded: usize,
    pub actions: usize,
    pub valid_pairs: usize,
    /// Valid pairs whose action is infeasible for the subgroup.
    pub infeasible_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupRecord {
    pub predicate: String,
    pub sizes: [usize; 2],
    pub coverage: [f64; 2],
    /// Finite-cost valid actions ordered by cost.
    pub actions: Vec<ActionStat>,
    pub infeasible: usize,
}

impl SubgroupRecord {
    pub fn effectiveness(&self, stat: &ActionStat, side: Side) -> f64 {
        stat.effectiveness(side, self.sizes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefinitionRecord {
    pub subgroup: usize,
    pub rank: Option<usize>,
    pub outcome: MetricOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefinitionReport {
    pub id: String,
    pub label: String,
    pub definition: Definition,
    /// One record per subgroup, most unfair first, fair ones last.
    pub records: Vec<DefinitionRecord>,
}

impl DefinitionReport {
    pub fn ranked_list(&self) -> RankedList {
        RankedList {
            definition: self.id.clone(),
            entries: self
                .records
                .iter()
                .map(|r| super::RankedEntry {
                    subgroup: r.subgroup,
                    rank: r.rank,
                })
                .collect(),
        }
    }

    pub fn unfair(&self) -> impl Iterator<Item = &DefinitionRecord> {
        self.records.iter().filter(|r| r.rank.is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub format: String,
    pub config: ConfigEcho,
    pub protected: ProtectedInfo,
    pub population: Population,
    pub mining: MiningStats,
    pub c_inf: f64,
    /// `configured`, `derived` or `fallback`.
    pub c_inf_source: String,
    pub budgets: Vec<f64>,
    pub actions: Vec<String>,
    pub subgroups: Vec<SubgroupRecord>,
    pub definitions: Vec<DefinitionReport>,
    pub ranking_analysis: Vec<RankingAnalysisRow>,
    pub aggregated_rankings: AggregatedRankings,
}

pub(super) fn assemble(dataset: &Dataset, config: &AuditConfig, eval: &Evaluation) -> Result<AuditReport, AuditError> {
    let schema = dataset.schema();
    let summaries = &eval.summaries;

    let (c_inf, c_inf_source) = match config.c_inf {
        Some(c) => (c, "configured"),
        None => match summaries.iter().filter_map(|s| s.max_finite_cost()).reduce(f64::max) {
            Some(m) => (2.0 * m, "derived"),
            None => (1.0, "fallback"),
        },
    };
    let needs_budgets = config.definitions.iter().any(|d| matches!(d, DefinitionSpec::WithinBudget(_)));
    let budgets = match (&config.budgets, needs_budgets) {
        (_, false) => Vec::new(),
        (BudgetSpec::Percentiles(p), true) => derive_budgets(summaries, p)?,
        (BudgetSpec::Values(v), true) => v.clone(),
    };
    let definitions = resolve_definitions(&config.definitions, &budgets, c_inf);

    let keys: Vec<String> = eval.subgroups.iter().map(|s| s.predicate.render(schema)).collect();
    let outcomes: Vec<Vec<MetricOutcome>> = definitions
        .iter()
        .map(|d| summaries.par_iter().map(|s| d.evaluate(s)).collect())
        .collect();
    let lists: Vec<RankedList> = definitions
        .iter()
        .zip(&outcomes)
        .map(|(d, outs)| rank_subgroups(&d.id(), outs, &keys))
        .collect();
    let n = eval.subgroups.len();
    let analysis = ranking_analysis(&lists, &outcomes, n);
    let aggregated = aggregated_rankings(&lists, n);

    let reports = definitions
        .iter()
        .zip(&lists)
        .zip(&outcomes)
        .map(|((d, list), outs)| DefinitionReport {
            id: d.id(),
            label: d.label(),
            definition: *d,
            records: list
                .entries
                .iter()
                .map(|e| DefinitionRecord {
                    subgroup: e.subgroup,
                    rank: e.rank,
                    outcome: outs[e.subgroup].clone(),
                })
                .collect(),
        })
        .collect();

    let subgroups = eval
        .subgroups
        .iter()
        .zip(summaries)
        .zip(keys)
        .map(|((sg, sum), predicate)| SubgroupRecord {
            predicate,
            sizes: sum.sizes,
            coverage: sg.coverage,
            actions: sum.actions.clone(),
            infeasible: sum.infeasible,
        })
        .collect();

    Ok(AuditReport {
        format: REPORT_FORMAT.to_string(),
        config: ConfigEcho {
            subgroup_support: config.subgroup_support,
            action_support: config.action_support(),
            definitions: config.definitions.iter().map(DefinitionSpec::describe).collect(),
            budgets: config.budgets.describe(),
            c_inf: config.c_inf,
        },
        protected: ProtectedInfo {
            feature: schema.protected_name().to_string(),
            labels: [schema.side_label(Side::Zero).to_string(), schema.side_label(Side::One).to_string()],
        },
        population: Population {
            rows: dataset.len(),
            dropped_rows: dataset.dropped_rows(),
            affected: eval.affected,
            unaffected: eval.unaffected,
        },
        mining: MiningStats {
            subgroups: n,
            excluded: eval.excluded,
            actions: eval.actions.len(),
            valid_pairs: eval.valid_pairs,
            infeasible_pairs: summaries.iter().map(|s| s.infeasible).sum(),
        },
        c_inf,
        c_inf_source: c_inf_source.to_string(),
        budgets,
        actions: eval.actions.iter().map(|a| a.action.render(schema)).collect(),
        subgroups,
        definitions: reports,
        ranking_analysis: analysis,
        aggregated_rankings: aggregated,
    })
}

/// Actions shown for one protected side in a CSC: those that qualify under
/// threshold definitions, otherwise every finite-cost action. Ordered by
/// effectiveness descending, then action text.
pub fn displayed_actions<'a>(
    record: &'a SubgroupRecord,
    action_texts: &[String],
    definition: &Definition,
    outcome: &MetricOutcome,
    side: Side,
) -> Vec<&'a ActionStat> {
    let eff = |a: &ActionStat| record.effectiveness(a, side);
    let mut shown: Vec<&ActionStat> = match *definition {
        Definition::EqualChoice { phi }
        | Definition::CostOfEffectiveness {
            phi,
            viewpoint: Viewpoint::Macro,
        } => record.actions.iter().filter(|a| eff(a) >= phi).collect(),
        Definition::CostOfEffectiveness {
            viewpoint: Viewpoint::Micro,
            ..
        } => match outcome.scores[side.index()] {
            crate::metrics::Score::Real(c) => record.actions.iter().filter(|a| a.cost <= c).collect(),
            _ => Vec::new(),
        },
        Definition::EffectivenessWithinBudget { budget, .. } => {
            record.actions.iter().filter(|a| a.cost <= budget).collect()
        }
        _ => record.actions.iter().collect(),
    };
    shown.sort_by(|a, b| {
        eff(b)
            .total_cmp(&eff(a))
            .then_with(|| action_texts[a.action].cmp(&action_texts[b.action]))
    });
    shown
}

/// Comparative summary of one subgroup under one definition.
pub fn format_csc(
    record: &SubgroupRecord,
    action_texts: &[String],
    labels: &[String; 2],
    definition: &Definition,
    outcome: &MetricOutcome,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "If {}:", record.predicate);
    for side in Side::BOTH {
        let shown = displayed_actions(record, action_texts, definition, outcome, side);
        let mean = if shown.is_empty() {
            "n/a".to_string()
        } else {
            format!("{:.2}", shown.iter().map(|a| a.cost).sum::<f64>() / shown.len() as f64)
        };
        let _ = writeln!(
            out,
            "    Protected Subgroup = '{}', coverage {:.2}%, mean action cost {}",
            labels[side.index()],
            100.0 * record.coverage[side.index()],
            mean
        );
        if shown.is_empty() {
            out.push_str("        No recourses for this subgroup.\n");
        }
        for a in shown {
            let _ = writeln!(
                out,
                "        Make {} with effectiveness {:.2}%",
                action_texts[a.action],
                100.0 * record.effectiveness(a, side)
            );
        }
    }
    match outcome.bias_against {
        Some(side) if outcome.unfairness != Unfairness::Fair => {
            let _ = writeln!(
                out,
                "    Bias against '{}' due to {}. Unfairness score = {}.",
                labels[side.index()],
                definition.label(),
                outcome.unfairness
            );
        }
        _ => {
            let _ = writeln!(out, "    Fair under {}.", definition.label());
        }
    }
    if let Some(conf) = outcome.confidence {
        let _ = writeln!(
            out,
            "    KS threshold at alpha={}: {:.5} ({}).",
            conf.alpha,
            conf.threshold,
            if conf.fair_with_confidence {
                "fair with confidence"
            } else {
                "difference significant"
            }
        );
    }
    out
}

fn pad_table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| format!("{cell:<w$}", w = widths[c]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

impl AuditReport {
    pub fn definition(&self, id: &str) -> Option<&DefinitionReport> {
        self.definitions.iter().find(|d| d.id == id)
    }

    pub fn csc(&self, def: &DefinitionReport, record: &DefinitionRecord) -> String {
        format_csc(
            &self.subgroups[record.subgroup],
            &self.actions,
            &self.protected.labels,
            &def.definition,
            &record.outcome,
        )
    }

    /// The `top` most unfair CSCs of one definition, with rank headers.
    pub fn render_ranked(&self, def: &DefinitionReport, top: usize) -> String {
        let mut out = String::new();
        let unfair = def.unfair().count();
        let _ = writeln!(out, "== {} [{}] ==", def.label, def.id);
        if unfair == 0 {
            let _ = writeln!(out, "all subgroups fair under {}", def.label);
            return out;
        }
        let _ = writeln!(
            out,
            "{} unfair, {} fair, showing {}",
            unfair,
            def.records.len() - unfair,
            top.min(unfair)
        );
        for r in def.unfair().take(top) {
            let _ = writeln!(out, "\nRank {}", r.rank.expect("unfair records are ranked"));
            out.push_str(&self.csc(def, r));
        }
        out
    }

    pub fn render_ranking_analysis(&self) -> String {
        let [l0, l1] = &self.protected.labels;
        let mut rows = vec![vec![
            "definition".to_string(),
            "rank-1 ties".to_string(),
            "top-10% window".to_string(),
            format!("against '{l0}'"),
            format!("against '{l1}'"),
        ]];
        for (row, def) in self.ranking_analysis.iter().zip(&self.definitions) {
            rows.push(vec![
                def.label.clone(),
                row.rank1.to_string(),
                row.window.to_string(),
                row.against[0].to_string(),
                row.against[1].to_string(),
            ]);
        }
        pad_table(&rows)
    }

    pub fn render_aggregated(&self) -> String {
        let agg = &self.aggregated_rankings;
        let n = agg.definitions.len();
        let mut rows = vec![std::iter::once(String::new())
            .chain((1..=n).map(|j| format!("D{j}")))
            .collect::<Vec<_>>()];
        for (i, cells) in agg.cells.iter().enumerate() {
            let mut row = vec![format!("D{}", i + 1)];
            for (j, cell) in cells.iter().enumerate() {
                row.push(match cell {
                    _ if i == j => "-".to_string(),
                    Some(v) => format!("{v:.3}"),
                    None => "n/a".to_string(),
                });
            }
            rows.push(row);
        }
        let mut out = pad_table(&rows);
        for (i, def) in self.definitions.iter().enumerate() {
            let flag = if agg.no_rank1[i] { " (no rank-1 subgroup)" } else { "" };
            let _ = writeln!(out, "D{} = {}{}", i + 1, def.label, flag);
        }
        out
    }

    pub fn render_text(&self, top: usize) -> String {
        let mut out = String::new();
        let [l0, l1] = &self.protected.labels;
        let p = &self.population;
        let m = &self.mining;
        let _ = writeln!(out, "Recourse fairness audit ({})", self.format);
        let _ = writeln!(out, "Protected feature: {} (0 = '{l0}', 1 = '{l1}')", self.protected.feature);
        let _ = writeln!(
            out,
            "Population: {} rows ({} dropped); affected '{l0}' {}, '{l1}' {}; unaffected {}",
            p.rows, p.dropped_rows, p.affected[0], p.affected[1], p.unaffected
        );
        let _ = writeln!(
            out,
            "Subgroups: {} evaluated, {} excluded for an empty protected side",
            m.subgroups, m.excluded
        );
        let _ = writeln!(
            out,
            "Actions: {}; valid subgroup-action pairs {} ({} infeasible)",
            m.actions, m.valid_pairs, m.infeasible_pairs
        );
        let _ = writeln!(out, "c_inf = {} ({})", crate::metrics::trim_number(self.c_inf), self.c_inf_source);
        if !self.budgets.is_empty() {
            let b: Vec<String> = self.budgets.iter().map(|&b| crate::metrics::trim_number(b)).collect();
            match self.config.budgets.strip_prefix("percentile:") {
                Some(p) => writeln!(out, "Budgets: {} (percentiles {p})", b.join(", ")),
                None => writeln!(out, "Budgets: {}", b.join(", ")),
            }
            .ok();
        }
        out.push_str("Ranks use competition ranking (tied subgroups share a rank, the next rank skips); fair subgroups are unranked.\n");
        for def in &self.definitions {
            out.push('\n');
            out.push_str(&self.render_ranked(def, top));
        }
        out.push_str("\n== Ranking analysis ==\n");
        out.push_str(&self.render_ranking_analysis());
        out.push_str("\n== Aggregated rankings ==\n");
        out.push_str(&self.render_aggregated());
        out
    }

    pub fn write_json<W: Write>(&self, writer: W) -> serde_json::Result<()> {
        serde_json::to_writer(writer, self)
    }

    pub fn read_json<R: Read>(reader: R) -> serde_json::Result<Self> {
        serde_json::from_reader(reader)
    }
}
