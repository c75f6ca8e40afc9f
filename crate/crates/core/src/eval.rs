//! Classification accuracy, filtered link-prediction ranking, and the
//! gate-trace category analysis.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoders::{score_unchecked, ScorerKind};
use crate::graph::{filtered_candidates, KnowledgeGraph, Slot, Triple};
use crate::tensor::DenseMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no records to summarize")]
    Empty,
    #[error("mask selects no nodes")]
    EmptyMask,
    #[error("triple {0:?} is outside the vocabulary")]
    OutOfVocabulary(Triple),
    #[error("gate trace does not cover entity {0}")]
    TraceMismatch(usize),
    #[error("prediction/label length mismatch: {0} vs {1}")]
    Length(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankRecord {
    pub triple: Triple,
    pub head_rank: usize,
    pub tail_rank: usize,
    /// Mean of the head and tail ranks.
    pub rank: f64,
}

/// Filtered rank of the answer in one slot: one plus the number of
/// surviving candidates scoring at least as high as the answer.
pub fn filtered_rank(kg: &KnowledgeGraph, t: &Triple, slot: Slot, score: &mut impl FnMut(&Triple) -> f64) -> usize {
    let cand = filtered_candidates(kg, t, slot);
    let target = score(t);
    let mut rank = 1;
    for (i, &e) in cand.entities.iter().enumerate() {
        if i == cand.answer {
            continue;
        }
        let c = match slot {
            Slot::Head => Triple::new(e, t.relation, t.tail),
            Slot::Tail => Triple::new(t.head, t.relation, e),
        };
        if score(&c) >= target {
            rank += 1;
        }
    }
    rank
}

/// Head and tail filtered ranks of `t` under an arbitrary scorer.
pub fn rank_triple(
    kg: &KnowledgeGraph,
    t: &Triple,
    mut score: impl FnMut(&Triple) -> f64,
) -> Result<RankRecord, EvalError> {
    if t.head >= kg.num_entities() || t.tail >= kg.num_entities() || t.relation >= kg.num_relations() {
        return Err(EvalError::OutOfVocabulary(*t));
    }
    let head_rank = filtered_rank(kg, t, Slot::Head, &mut score);
    let tail_rank = filtered_rank(kg, t, Slot::Tail, &mut score);
    Ok(RankRecord {
        triple: *t,
        head_rank,
        tail_rank,
        rank: (head_rank + tail_rank) as f64 / 2.0,
    })
}

/// Ranks every triple in `triples` using embedding tables and a scorer.
pub fn rank_with_embeddings(
    kg: &KnowledgeGraph,
    kind: ScorerKind,
    entities: &DenseMatrix,
    relations: &DenseMatrix,
    triples: &[Triple],
) -> Result<Vec<RankRecord>, EvalError> {
    triples
        .iter()
        .map(|t| {
            rank_triple(kg, t, |c| {
                score_unchecked(kind, entities.row(c.head), relations.row(c.relation), entities.row(c.tail))
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkMetrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub count: usize,
}

fn summarize_ranks(ranks: impl Iterator<Item = f64> + Clone) -> Result<LinkMetrics, EvalError> {
    let count = ranks.clone().count();
    if count == 0 {
        return Err(EvalError::Empty);
    }
    let n = count as f64;
    let hits = |k: f64| ranks.clone().filter(|&r| r <= k).count() as f64 / n;
    Ok(LinkMetrics {
        mrr: ranks.clone().map(|r| 1.0 / r).sum::<f64>() / n,
        hits1: hits(1.0),
        hits3: hits(3.0),
        hits10: hits(10.0),
        count,
    })
}

/// MRR and Hit@{1,3,10} over final ranks.
pub fn compute_metrics(records: &[RankRecord]) -> Result<LinkMetrics, EvalError> {
    summarize_ranks(records.iter().map(|r| r.rank))
}

/// Fraction of `mask` nodes whose prediction equals the label.
pub fn accuracy(predictions: &[usize], labels: &[usize], mask: &[usize]) -> Result<f64, EvalError> {
    if mask.is_empty() {
        return Err(EvalError::EmptyMask);
    }
    if predictions.len() != labels.len() {
        return Err(EvalError::Length(predictions.len(), labels.len()));
    }
    let hit = mask.iter().filter(|&&v| predictions[v] == labels[v]).count();
    Ok(hit as f64 / mask.len() as f64)
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn format_mean_std(values: &[f64]) -> String {
    let (m, s) = mean_std(values);
    format!("{m:.4}±{s:.4}")
}

/// Binary gate outputs, one row per layer transition and one entry per
/// node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateTrace {
    pub bits: Vec<Vec<u8>>,
}

impl GateTrace {
    pub fn layers(&self) -> usize {
        self.bits.len()
    }

    pub fn nodes(&self) -> usize {
        self.bits.first().map_or(0, Vec::len)
    }

    /// Number of layers at which node `v` passed its own representation
    /// into its message.
    pub fn total(&self, v: usize) -> Option<usize> {
        self.bits
            .iter()
            .map(|layer| layer.get(v).map(|&b| b as usize))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: usize,
    pub count: usize,
    pub percent: f64,
    pub mrr: f64,
    pub hits10: f64,
    pub hits3: f64,
    pub hits1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryTable {
    pub rows: Vec<CategoryRow>,
    /// Mean of `1 / atr_v` over all test entities.
    pub entity_mrr: f64,
    pub entities: usize,
}

impl CategoryTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("category,count,percent,MRR,H@10,H@3,H@1\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "C{},{},{:.4},{:.6},{:.6},{:.6},{:.6}",
                r.category, r.count, r.percent, r.mrr, r.hits10, r.hits3, r.hits1
            );
        }
        out
    }
}

/// Average final rank of the test triples containing each entity, ordered
/// by entity id.
pub fn average_triple_ranks(records: &[RankRecord]) -> Vec<(usize, f64)> {
    let mut acc: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
    for r in records {
        let t = r.triple;
        let ents: &[usize] = if t.head == t.tail { &[t.head][..] } else { &[t.head, t.tail][..] };
        for &e in ents {
            let slot = acc.entry(e).or_insert((0.0, 0));
            slot.0 += r.rank;
            slot.1 += 1;
        }
    }
    acc.into_iter().map(|(e, (s, c))| (e, s / c as f64)).collect()
}

/// Groups test entities by how many layers their gate was open and
/// summarizes `atr_v` per group. Categories run from 0 to the number of
/// traced layers; empty categories are omitted.
pub fn sfm_category_analysis(trace: &GateTrace, records: &[RankRecord]) -> Result<CategoryTable, EvalError> {
    let atr = average_triple_ranks(records);
    if atr.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); trace.layers() + 1];
    for &(e, rank) in &atr {
        let t = trace.total(e).ok_or(EvalError::TraceMismatch(e))?;
        groups[t].push(rank);
    }
    let total = atr.len() as f64;
    let mut rows = Vec::new();
    for (category, ranks) in groups.iter().enumerate() {
        if ranks.is_empty() {
            continue;
        }
        let m = summarize_ranks(ranks.iter().copied())?;
        rows.push(CategoryRow {
            category,
            count: ranks.len(),
            percent: 100.0 * ranks.len() as f64 / total,
            mrr: m.mrr,
            hits10: m.hits10,
            hits3: m.hits3,
            hits1: m.hits1,
        });
    }
    let entity_mrr = atr.iter().map(|(_, r)| 1.0 / r).sum::<f64>() / total;
    Ok(CategoryTable {
        rows,
        entity_mrr,
        entities: atr.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(rank: f64) -> RankRecord {
        RankRecord {
            triple: Triple::new(0, 0, 1),
            head_rank: 1,
            tail_rank: 1,
            rank,
        }
    }

    #[test]
    fn metric_identities() {
        let m = compute_metrics(&[record(1.0), record(2.0), record(4.0)]).unwrap();
        assert!((m.mrr - 0.583_333_333_333_333_3).abs() < 1e-12);
        assert!((m.hits1 - 1.0 / 3.0).abs() < 1e-12);
        assert!((m.hits3 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.hits10, 1.0);
        assert_eq!(compute_metrics(&[]).unwrap_err(), EvalError::Empty);
    }

    #[test]
    fn accuracy_extremes() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 2, 0], &[0, 1, 2], &[0, 1, 2]).unwrap(), 0.0);
        assert_eq!(accuracy(&[0], &[0], &[]).unwrap_err(), EvalError::EmptyMask);
    }

    #[test]
    fn atr_is_mean_over_triples() {
        let recs = [
            RankRecord {
                triple: Triple::new(0, 0, 1),
                head_rank: 2,
                tail_rank: 2,
                rank: 2.0,
            },
            RankRecord {
                triple: Triple::new(2, 0, 0),
                head_rank: 4,
                tail_rank: 4,
                rank: 4.0,
            },
        ];
        let atr = average_triple_ranks(&recs);
        assert_eq!(atr[0], (0, 3.0));
    }

    #[test]
    fn degenerate_trace_is_one_category() {
        let trace = GateTrace { bits: vec![vec![1; 3]; 5] };
        let table = sfm_category_analysis(&trace, &[record(2.0)]).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.rows[0].category, 5);
        assert_eq!(table.rows[0].percent, 100.0);
    }

    #[test]
    fn mean_std_values() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
        assert_eq!(format_mean_std(&[0.5]), "0.5000±0.0000");
    }
}
