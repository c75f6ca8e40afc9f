use std::collections::{HashMap, HashSet};

use super::{KnowledgeGraph, Slot, Triple};

/// Known-true completions over train ∪ valid ∪ test.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterIndex {
    tails: HashMap<(usize, usize), HashSet<usize>>,
    heads: HashMap<(usize, usize), HashSet<usize>>,
}

impl FilterIndex {
    pub fn build<'a>(triples: impl IntoIterator<Item = &'a Triple>) -> Self {
        let mut idx = Self::default();
        for t in triples {
            idx.tails.entry((t.head, t.relation)).or_default().insert(t.tail);
            idx.heads.entry((t.relation, t.tail)).or_default().insert(t.head);
        }
        idx
    }

    /// Whether `(head, relation, tail)` is a known triple.
    pub fn contains(&self, t: &Triple) -> bool {
        self.tails
            .get(&(t.head, t.relation))
            .is_some_and(|s| s.contains(&t.tail))
    }

    /// Whether substituting `entity` into `slot` of `t` yields a known triple.
    pub fn is_known(&self, t: &Triple, slot: Slot, entity: usize) -> bool {
        match slot {
            Slot::Tail => self
                .tails
                .get(&(t.head, t.relation))
                .is_some_and(|s| s.contains(&entity)),
            Slot::Head => self
                .heads
                .get(&(t.relation, t.tail))
                .is_some_and(|s| s.contains(&entity)),
        }
    }
}

/// Filtered candidate list for one ranking query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidates {
    /// Entity ids in increasing order.
    pub entities: Vec<usize>,
    /// Position of the true answer within `entities`.
    pub answer: usize,
}

/// All entities except those `e != answer` whose substitution into `slot`
/// gives a triple present in any split. The answer is always kept.
pub fn filtered_candidates(kg: &KnowledgeGraph, t: &Triple, slot: Slot) -> Candidates {
    let answer = match slot {
        Slot::Head => t.head,
        Slot::Tail => t.tail,
    };
    let mut entities = Vec::with_capacity(kg.num_entities());
    let mut pos = 0;
    for e in 0..kg.num_entities() {
        if e == answer {
            pos = entities.len();
            entities.push(e);
        } else if !kg.filter().is_known(t, slot, e) {
            entities.push(e);
        }
    }
    Candidates { entities, answer: pos }
}

#[cfg(test)]
mod tests {
    use super::super::Vocab;
    use super::*;

    fn kg(train: Vec<Triple>, test: Vec<Triple>) -> KnowledgeGraph {
        KnowledgeGraph::new(
            Vocab::from_names(["a", "b", "c"].map(String::from)),
            Vocab::from_names(["r"].map(String::from)),
            train,
            vec![],
            test,
        )
        .unwrap()
    }

    #[test]
    fn nothing_extra_filtered() {
        // train {(c,r,b)}, test {(a,r,b)}: tail query (a,r,?) keeps all 3.
        let g = kg(vec![Triple::new(2, 0, 1)], vec![Triple::new(0, 0, 1)]);
        let c = filtered_candidates(&g, &Triple::new(0, 0, 1), Slot::Tail);
        assert_eq!(c.entities, vec![0, 1, 2]);
        assert_eq!(c.entities[c.answer], 1);
    }

    #[test]
    fn known_alternative_is_removed() {
        let g = kg(
            vec![Triple::new(2, 0, 1), Triple::new(0, 0, 2)],
            vec![Triple::new(0, 0, 1)],
        );
        let c = filtered_candidates(&g, &Triple::new(0, 0, 1), Slot::Tail);
        assert_eq!(c.entities, vec![0, 1]);
        // Head query (?, r, b): c is a known head and gets removed.
        let h = filtered_candidates(&g, &Triple::new(0, 0, 1), Slot::Head);
        assert_eq!(h.entities, vec![0, 1]);
        assert_eq!(h.entities[h.answer], 0);
    }

    #[test]
    fn answer_kept_even_if_known() {
        let g = kg(vec![Triple::new(0, 0, 1)], vec![]);
        let c = filtered_candidates(&g, &Triple::new(0, 0, 1), Slot::Tail);
        assert!(c.entities.contains(&1));
    }
}
