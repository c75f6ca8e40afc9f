use crate::tensor::RngStream;

use super::{GraphError, Triple};

/// Positives with `k` corruptions each. `negatives[i*k..(i+1)*k]` belong to
/// `positives[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeBatch {
    pub positives: Vec<Triple>,
    pub negatives: Vec<Triple>,
    pub k: usize,
}

impl NegativeBatch {
    /// All triples (positives first) with labels 1 and 0.
    pub fn labeled(&self) -> (Vec<Triple>, Vec<f64>) {
        let mut triples = self.positives.clone();
        triples.extend_from_slice(&self.negatives);
        let mut labels = vec![1.0; self.positives.len()];
        labels.resize(triples.len(), 0.0);
        (triples, labels)
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Corrupts each positive `k` times: a fair coin picks head or tail, and the
/// replacement is uniform over the other `num_entities - 1` entities.
/// Known-true corruptions are not filtered out.
pub fn sample_negatives(
    positives: &[Triple],
    k: usize,
    num_entities: usize,
    rng: &mut RngStream,
) -> Result<NegativeBatch, GraphError> {
    if num_entities < 2 {
        return Err(GraphError::InvalidParams(format!(
            "negative sampling needs at least 2 entities, got {num_entities}"
        )));
    }
    if k == 0 {
        return Err(GraphError::InvalidParams("k must be >= 1".into()));
    }
    let mut negatives = Vec::with_capacity(positives.len() * k);
    for p in positives {
        for _ in 0..k {
            let replace_tail = rng.coin();
            let original = if replace_tail { p.tail } else { p.head };
            let mut e = rng.below(num_entities - 1);
            if e >= original {
                e += 1;
            }
            let mut t = *p;
            if replace_tail {
                t.tail = e;
            } else {
                t.head = e;
            }
            negatives.push(t);
        }
    }
    Ok(NegativeBatch {
        positives: positives.to_vec(),
        negatives,
        k,
    })
}
