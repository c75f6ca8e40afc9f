use std::collections::BTreeMap;
use std::sync::Arc;

use crate::graph::{Direction, MessageIndex};
use crate::tensor::DenseMatrix;

/// Messages sharing one relation and direction, with their R-GCN
/// normalization `1 / c_{v,r}`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RelationGroup {
    pub relation: usize,
    pub direction: Direction,
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    pub coef: DenseMatrix,
}

/// Messages sharing one direction.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct DirectionGroup {
    pub direction: Direction,
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    pub rel: Arc<[usize]>,
}

/// Index arrays derived once from a [`MessageIndex`] and shared by every
/// layer and forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphContext {
    pub messages: MessageIndex,
    pub(crate) inv_degree: DenseMatrix,
    pub(crate) relation_groups: Vec<RelationGroup>,
    pub(crate) direction_groups: Vec<DirectionGroup>,
    pub(crate) zeros: Arc<[usize]>,
}

pub(crate) fn direction_slot(d: Direction) -> usize {
    match d {
        Direction::In => 0,
        Direction::Out => 1,
    }
}

impl GraphContext {
    pub fn new(messages: MessageIndex) -> Self {
        let n = messages.num_nodes;
        let deg = messages.in_degree();
        let inv_degree = DenseMatrix::from_fn(n, 1, |i, _| if deg[i] > 0 { 1.0 / deg[i] as f64 } else { 0.0 });

        let mut by_rel: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        let mut by_dir: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for k in 0..messages.len() {
            let slot = direction_slot(messages.dir[k]);
            by_rel.entry((messages.rel[k], slot)).or_default().push(k);
            by_dir.entry(slot).or_default().push(k);
        }

        let relation_groups = by_rel
            .into_iter()
            .map(|((relation, _), ks)| {
                let mut count: BTreeMap<usize, usize> = BTreeMap::new();
                for &k in &ks {
                    *count.entry(messages.dst[k]).or_default() += 1;
                }
                let coef = DenseMatrix::from_fn(ks.len(), 1, |i, _| 1.0 / count[&messages.dst[ks[i]]] as f64);
                RelationGroup {
                    relation,
                    direction: messages.dir[ks[0]],
                    src: ks.iter().map(|&k| messages.src[k]).collect(),
                    dst: ks.iter().map(|&k| messages.dst[k]).collect(),
                    coef,
                }
            })
            .collect();
        let direction_groups = by_dir
            .into_values()
            .map(|ks| DirectionGroup {
                direction: messages.dir[ks[0]],
                src: ks.iter().map(|&k| messages.src[k]).collect(),
                dst: ks.iter().map(|&k| messages.dst[k]).collect(),
                rel: ks.iter().map(|&k| messages.rel[k]).collect(),
            })
            .collect();
        Self {
            inv_degree,
            relation_groups,
            direction_groups,
            zeros: Arc::from(vec![0usize; n]),
            messages,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.messages.num_nodes
    }
}
