use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{SubgroupSummary, Viewpoint};
use crate::recourse::CostValue;
use crate::schema::Side;

/// Real-valued scores closer than this are equal.
pub const FAIR_TOLERANCE: f64 = 1e-9;

/// A protected subgroup's difficulty score under one definition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Score {
    Real(f64),
    Count(usize),
    Infinite,
}

impl Score {
    fn from_cost(c: CostValue) -> Score {
        match c {
            CostValue::Finite(x) => Score::Real(x),
            CostValue::Infinite => Score::Infinite,
        }
    }

    fn as_f64(self) -> f64 {
        match self {
            Score::Real(x) => x,
            Score::Count(n) => n as f64,
            Score::Infinite => f64::INFINITY,
        }
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Score::Real(x) => f.write_str(&trim_number(*x)),
            Score::Count(n) => write!(f, "{n}"),
            Score::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Score {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Score::Real(x) => s.serialize_f64(*x),
            Score::Count(n) => s.serialize_u64(*n as u64),
            Score::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(u64),
            Real(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Int(n) => Ok(Score::Count(n as usize)),
            Repr::Real(x) => Ok(Score::Real(x)),
            Repr::Text(t) if t == "inf" => Ok(Score::Infinite),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad score `{t}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unfairness {
    Fair,
    Value(f64),
    Infinite,
}

impl Unfairness {
    pub fn is_fair(self) -> bool {
        self == Unfairness::Fair
    }

    /// Sort key: larger is more unfair. Values are quantized so that
    /// floating noise below the fairness tolerance cannot split a tie.
    pub fn rank_key(self) -> i64 {
        match self {
            Unfairness::Fair => i64::MIN,
            Unfairness::Value(x) => (x * 1e9).round() as i64,
            Unfairness::Infinite => i64::MAX,
        }
    }
}

/// Up to six decimals, trailing zeros dropped.
pub(crate) fn trim_number(x: f64) -> String {
    let s = format!("{x:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

impl fmt::Display for Unfairness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Unfairness::Fair => f.write_str("0"),
            Unfairness::Value(x) => f.write_str(&trim_number(*x)),
            Unfairness::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Unfairness {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Unfairness::Fair => s.serialize_str("fair"),
            Unfairness::Value(x) => s.serialize_f64(*x),
            Unfairness::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Unfairness {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(Unfairness::Value(x)),
            Repr::Text(t) if t == "fair" => Ok(Unfairness::Fair),
            Repr::Text(t) if t == "inf" => Ok(Unfairness::Infinite),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad unfairness `{t}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsConfidence {
    pub alpha: f64,
    pub threshold: f64,
    /// Statistic strictly below the threshold.
    pub fair_with_confidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricOutcome {
    pub scores: [Score; 2],
    pub unfairness: Unfairness,
    pub bias_against: Option<Side>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<KsConfidence>,
}

#[derive(Clone, Copy, PartialEq)]
enum Polarity {
    HigherIsBetter,
    LowerIsBetter,
}

fn compare(scores: [Score; 2], polarity: Polarity) -> MetricOutcome {
    let (a, b) = (scores[0], scores[1]);
    let unfairness = match (a, b) {
        (Score::Infinite, Score::Infinite) => Unfairness::Fair,
        (Score::Infinite, _) | (_, Score::Infinite) => Unfairness::Infinite,
        (Score::Count(x), Score::Count(y)) if x == y => Unfairness::Fair,
        (Score::Count(x), Score::Count(y)) => Unfairness::Value(x.abs_diff(y) as f64),
        _ => {
            let d = (a.as_f64() - b.as_f64()).abs();
            if d <= FAIR_TOLERANCE {
                Unfairness::Fair
            } else {
                Unfairness::Value(d)
            }
        }
    };
    let bias_against = if unfairness.is_fair() {
        None
    } else {
        let zero_worse = match polarity {
            Polarity::HigherIsBetter => a.as_f64() < b.as_f64(),
            Polarity::LowerIsBetter => a.as_f64() > b.as_f64(),
        };
        Some(if zero_worse { Side::Zero } else { Side::One })
    };
    MetricOutcome {
        scores,
        unfairness,
        bias_against,
        confidence: None,
    }
}

fn per_side<T>(f: impl Fn(Side) -> T) -> [T; 2] {
    [f(Side::Zero), f(Side::One)]
}

/// Same share of each protected subgroup can achieve recourse.
pub fn metric_equal_effectiveness(sub: &SubgroupSummary, viewpoint: Viewpoint) -> MetricOutcome {
    compare(
        per_side(|s| Score::Real(sub.ecd(s, viewpoint).total())),
        Polarity::HigherIsBetter,
    )
}

/// Same number of finite-cost actions with effectiveness at least `phi`.
pub fn metric_equal_choice(sub: &SubgroupSummary, phi: f64) -> MetricOutcome {
    compare(
        per_side(|s| Score::Count(sub.actions.iter().filter(|a| sub.effectiveness(a, s) >= phi).count())),
        Polarity::HigherIsBetter,
    )
}

/// Same share achieves recourse with actions costing at most `budget`.
pub fn metric_effectiveness_within_budget(sub: &SubgroupSummary, budget: f64, viewpoint: Viewpoint) -> MetricOutcome {
    compare(
        per_side(|s| Score::Real(sub.ecd(s, viewpoint).eval(budget))),
        Polarity::HigherIsBetter,
    )
}

/// Same minimum cost to reach aggregate effectiveness `phi`.
pub fn metric_cost_of_effectiveness(sub: &SubgroupSummary, phi: f64, viewpoint: Viewpoint) -> MetricOutcome {
    compare(
        per_side(|s| Score::from_cost(sub.ecd(s, viewpoint).inverse(phi))),
        Polarity::LowerIsBetter,
    )
}

/// `sqrt(-ln(alpha/2) (n0 + n1) / (2 n0 n1))`.
pub fn ks_threshold(alpha: f64, n0: usize, n1: usize) -> f64 {
    let (n0, n1) = (n0 as f64, n1 as f64);
    (-(alpha / 2.0).ln() * (n0 + n1) / (2.0 * n0 * n1)).sqrt()
}

/// Largest gap between the two ECDs, a two-sample KS statistic. Scores are
/// the two ECD values at the first cost where the gap peaks; bias is against
/// the side lower there.
pub fn metric_fair_tradeoff(sub: &SubgroupSummary, alpha: f64, viewpoint: Viewpoint) -> MetricOutcome {
    let [e0, e1] = per_side(|s| sub.ecd(s, viewpoint));
    let mut grid: Vec<f64> = std::iter::once(0.0).chain(e0.breakpoints()).chain(e1.breakpoints()).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut best: (f64, f64, f64) = (0.0, 0.0, 0.0);
    for &c in &grid {
        let (a, b) = (e0.eval(c), e1.eval(c));
        if (a - b).abs() > (best.0 - best.1).abs() {
            best = (a, b, c);
        }
    }
    let statistic = (best.0 - best.1).abs();
    let mut out = compare([Score::Real(best.0), Score::Real(best.1)], Polarity::HigherIsBetter);
    if out.unfairness != Unfairness::Fair {
        out.unfairness = Unfairness::Value(statistic);
    }
    let threshold = ks_threshold(alpha, sub.size(Side::Zero), sub.size(Side::One));
    out.confidence = Some(KsConfidence {
        alpha,
        threshold,
        fair_with_confidence: statistic < threshold,
    });
    out
}

/// Mean of each member's cheapest effective cost. Conditional: over members
/// with recourse only (infinite if there are none). Unconditional: members
/// without recourse count as `c_inf`.
pub fn metric_mean_recourse(sub: &SubgroupSummary, conditional: bool, c_inf: f64) -> MetricOutcome {
    compare(
        per_side(|s| {
            let (sum, count, size) = (sub.recourse_sum(s), sub.recourse_count(s), sub.size(s));
            if conditional {
                if count == 0 {
                    Score::Infinite
                } else {
                    Score::Real(sum / count as f64)
                }
            } else {
                Score::Real((sum + (size - count) as f64 * c_inf) / size as f64)
            }
        }),
        Polarity::LowerIsBetter,
    )
}

/// A fully parameterized fairness definition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Definition {
    EqualEffectiveness { viewpoint: Viewpoint },
    EqualChoice { phi: f64 },
    EffectivenessWithinBudget { budget: f64, viewpoint: Viewpoint },
    CostOfEffectiveness { phi: f64, viewpoint: Viewpoint },
    FairTradeOff { alpha: f64, viewpoint: Viewpoint },
    ConditionalMeanRecourse,
    MeanRecourse { c_inf: f64 },
}

impl Definition {
    pub fn evaluate(&self, sub: &SubgroupSummary) -> MetricOutcome {
        match *self {
            Definition::EqualEffectiveness { viewpoint } => metric_equal_effectiveness(sub, viewpoint),
            Definition::EqualChoice { phi } => metric_equal_choice(sub, phi),
            Definition::EffectivenessWithinBudget { budget, viewpoint } => {
                metric_effectiveness_within_budget(sub, budget, viewpoint)
            }
            Definition::CostOfEffectiveness { phi, viewpoint } => metric_cost_of_effectiveness(sub, phi, viewpoint),
            Definition::FairTradeOff { alpha, viewpoint } => metric_fair_tradeoff(sub, alpha, viewpoint),
            Definition::ConditionalMeanRecourse => metric_mean_recourse(sub, true, 0.0),
            Definition::MeanRecourse { c_inf } => metric_mean_recourse(sub, false, c_inf),
        }
    }

    /// Stable machine identifier, e.g. `cost-of-effectiveness:micro:0.7`.
    pub fn id(&self) -> String {
        match *self {
            Definition::EqualEffectiveness { viewpoint } => format!("equal-effectiveness:{}", viewpoint.as_str()),
            Definition::EqualChoice { phi } => format!("equal-choice:{phi}"),
            Definition::EffectivenessWithinBudget { budget, viewpoint } => {
                format!("effectiveness-within-budget:{}:{budget}", viewpoint.as_str())
            }
            Definition::CostOfEffectiveness { phi, viewpoint } => {
                format!("cost-of-effectiveness:{}:{phi}", viewpoint.as_str())
            }
            Definition::FairTradeOff { alpha, viewpoint } => format!("fair-tradeoff:{}:{alpha}", viewpoint.as_str()),
            Definition::ConditionalMeanRecourse => "conditional-mean-recourse".into(),
            Definition::MeanRecourse { c_inf } => format!("mean-recourse:{c_inf}"),
        }
    }

    /// Human-readable name with parameters.
    pub fn label(&self) -> String {
        match *self {
            Definition::EqualEffectiveness { viewpoint } => format!("Equal Effectiveness ({})", viewpoint.as_str()),
            Definition::EqualChoice { phi } => format!("Equal Choice for Recourse (phi={phi})"),
            Definition::EffectivenessWithinBudget { budget, viewpoint } => format!(
                "Equal Effectiveness within Budget ({}, c={})",
                viewpoint.as_str(),
                trim_number(budget)
            ),
            Definition::CostOfEffectiveness { phi, viewpoint } => {
                format!("Equal Cost of Effectiveness ({}, phi={phi})", viewpoint.as_str())
            }
            Definition::FairTradeOff { alpha, viewpoint } => {
                format!("Fair Effectiveness-Cost Trade-Off ({}, alpha={alpha})", viewpoint.as_str())
            }
            Definition::ConditionalMeanRecourse => "Equal Conditional Mean Recourse".into(),
            Definition::MeanRecourse { c_inf } => format!("Equal Mean Recourse (c_inf={})", trim_number(c_inf)),
        }
    }

    /// Whether scores are action counts (compared exactly).
    pub fn counts(&self) -> bool {
        matches!(self, Definition::EqualChoice { .. })
    }
}
