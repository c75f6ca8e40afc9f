//! Desk-scale synthetic datasets.
//!
//! Node classification graphs come from a stochastic block model with
//! class-conditioned Gaussian features, where a chosen fraction of nodes get
//! class-independent features. Knowledge graphs come from entities placed on
//! rings with relations defined as ring offsets, so composed relations are
//! derivable from their parts.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{GraphError, HomogeneousGraph, KnowledgeGraph, Split, Triple, Vocab};
use crate::tensor::{rng::streams, DenseMatrix, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NcParams {
    pub nodes: usize,
    pub classes: usize,
    /// Expected fraction of edges joining same-class nodes.
    pub homophily: f64,
    /// Fraction of nodes whose features ignore their class.
    pub noise_fraction: f64,
    pub feature_dim: usize,
    pub avg_degree: f64,
    /// Standard deviation of the class means.
    pub signal: f64,
    /// Standard deviation of per-node feature noise.
    pub feature_noise: f64,
}

impl Default for NcParams {
    fn default() -> Self {
        Self {
            nodes: 600,
            classes: 4,
            homophily: 0.8,
            noise_fraction: 0.3,
            feature_dim: 16,
            avg_degree: 6.0,
            signal: 1.0,
            feature_noise: 1.0,
        }
    }
}

/// Synthetic node-classification graph plus the set of planted noisy nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticNc {
    pub graph: HomogeneousGraph,
    pub noisy: Vec<usize>,
}

pub fn gen_synthetic_nc(params: &NcParams, seed: u64) -> Result<SyntheticNc, GraphError> {
    let NcParams {
        nodes: n,
        classes,
        homophily,
        noise_fraction,
        feature_dim,
        avg_degree,
        signal,
        feature_noise,
    } = params.clone();
    if classes < 2 || n < classes {
        return Err(GraphError::InvalidParams(format!(
            "need classes >= 2 and nodes >= classes (nodes={n}, classes={classes})"
        )));
    }
    if !(0.0..=1.0).contains(&homophily) || !(0.0..=1.0).contains(&noise_fraction) {
        return Err(GraphError::InvalidParams("homophily and noise_fraction must lie in [0, 1]".into()));
    }
    if feature_dim == 0 || !(avg_degree > 0.0) || !(signal >= 0.0) || !(feature_noise >= 0.0) {
        return Err(GraphError::InvalidParams(
            "feature_dim, avg_degree must be positive; signal, feature_noise non-negative".into(),
        ));
    }
    let mut rng = RngStream::new(seed, streams::DATA);

    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);

    // Edge probabilities chosen so the expected edge count is n*avg_degree/2
    // with the requested share inside classes.
    let mut sizes = vec![0usize; classes];
    for &l in &labels {
        sizes[l] += 1;
    }
    let intra_pairs: f64 = sizes.iter().map(|&s| (s * s.saturating_sub(1) / 2) as f64).sum();
    let all_pairs = (n * (n - 1) / 2) as f64;
    let inter_pairs = all_pairs - intra_pairs;
    let target = n as f64 * avg_degree / 2.0;
    let p_in = if intra_pairs > 0.0 { (homophily * target / intra_pairs).min(1.0) } else { 0.0 };
    let p_out = if inter_pairs > 0.0 { ((1.0 - homophily) * target / inter_pairs).min(1.0) } else { 0.0 };
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let p = if labels[a] == labels[b] { p_in } else { p_out };
            if rng.uniform() < p {
                edges.push((a, b));
            }
        }
    }

    let means = DenseMatrix::from_fn(classes, feature_dim, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        signal * z
    });
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_noisy = (noise_fraction * n as f64).round() as usize;
    let mut noisy: Vec<usize> = order[..n_noisy].to_vec();
    noisy.sort_unstable();
    let mut is_noisy = vec![false; n];
    for &v in &noisy {
        is_noisy[v] = true;
    }
    let pure_sd = (signal * signal + feature_noise * feature_noise).sqrt();
    let mut features = DenseMatrix::zeros(n, feature_dim);
    for v in 0..n {
        for j in 0..feature_dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            let x = if is_noisy[v] {
                pure_sd * z
            } else {
                means.get(labels[v], j) + feature_noise * z
            };
            features.set(v, j, x);
        }
    }

    // Stratified 60/20/20.
    let mut splits = vec![None; n];
    for c in 0..classes {
        let mut members: Vec<usize> = (0..n).filter(|&v| labels[v] == c).collect();
        members.shuffle(&mut rng);
        let m = members.len();
        let n_train = (m as f64 * 0.6).round() as usize;
        let n_valid = (m as f64 * 0.2).round() as usize;
        for (i, &v) in members.iter().enumerate() {
            splits[v] = Some(if i < n_train {
                Split::Train
            } else if i < n_train + n_valid {
                Split::Valid
            } else {
                Split::Test
            });
        }
    }
    let graph = HomogeneousGraph::new(features, labels, classes, edges, &splits)?;
    Ok(SyntheticNc { graph, noisy })
}

/// How a relation maps an entity to its partner on the same ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationRule {
    /// Move `k` positions forward.
    Step(usize),
    /// Apply relation `a`, then relation `b` (both must be defined earlier).
    Compose(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KgParams {
    pub entities: usize,
    pub relations: usize,
    pub rings: usize,
    /// Extra uniformly random triples, as a fraction of the rule triples.
    pub noise: f64,
    /// One rule per relation; defaults to [`default_rules`].
    pub rules: Option<Vec<RelationRule>>,
}

impl Default for KgParams {
    fn default() -> Self {
        Self {
            entities: 120,
            relations: 4,
            rings: 1,
            noise: 0.0,
            rules: None,
        }
    }
}

/// `r0` is the successor; each later relation composes its predecessor with
/// `r0`, so `r_i` moves `i + 1` steps.
pub fn default_rules(relations: usize) -> Vec<RelationRule> {
    (0..relations)
        .map(|i| if i == 0 { RelationRule::Step(1) } else { RelationRule::Compose(i - 1, 0) })
        .collect()
}

fn rule_offsets(rules: &[RelationRule]) -> Result<Vec<usize>, GraphError> {
    let mut offsets: Vec<usize> = Vec::with_capacity(rules.len());
    for (i, rule) in rules.iter().enumerate() {
        offsets.push(match *rule {
            RelationRule::Step(k) => k,
            RelationRule::Compose(a, b) => {
                if a >= i || b >= i {
                    return Err(GraphError::InvalidParams(format!(
                        "rule {i} composes relations that are not defined before it"
                    )));
                }
                offsets[a] + offsets[b]
            }
        });
    }
    Ok(offsets)
}

pub fn gen_synthetic_kg(params: &KgParams, seed: u64) -> Result<KnowledgeGraph, GraphError> {
    let KgParams {
        entities: n,
        relations,
        rings,
        noise,
        ref rules,
    } = *params;
    if n < 10 || relations < 2 {
        return Err(GraphError::InvalidParams(format!(
            "need entities >= 10 and relations >= 2 (entities={n}, relations={relations})"
        )));
    }
    if rings == 0 || rings > n || !(noise >= 0.0) {
        return Err(GraphError::InvalidParams("rings must lie in 1..=entities and noise >= 0".into()));
    }
    let rules = rules.clone().unwrap_or_else(|| default_rules(relations));
    if rules.len() != relations {
        return Err(GraphError::InvalidParams(format!(
            "{} rules for {relations} relations",
            rules.len()
        )));
    }
    let offsets = rule_offsets(&rules)?;
    let mut rng = RngStream::new(seed, streams::DATA);

    // Entity e sits on ring e % rings at position e / rings.
    let ring_len = |ring: usize| (n - ring).div_ceil(rings);
    let mut set = BTreeSet::new();
    for e in 0..n {
        let (ring, pos) = (e % rings, e / rings);
        let len = ring_len(ring);
        for (r, &off) in offsets.iter().enumerate() {
            let target = ((pos + off) % len) * rings + ring;
            set.insert(Triple::new(e, r, target));
        }
    }
    let extra = (noise * set.len() as f64).round() as usize;
    let mut attempts = 0;
    let base = set.len();
    while set.len() < base + extra && attempts < 100 * (extra + 1) {
        attempts += 1;
        let (u, v) = (rng.below(n), rng.below(n));
        if u != v {
            set.insert(Triple::new(u, rng.below(relations), v));
        }
    }
    if set.len() < 10 {
        return Err(GraphError::InvalidParams(format!("rule set produced only {} triples", set.len())));
    }

    let mut all: Vec<Triple> = set.into_iter().collect();
    all.shuffle(&mut rng);
    let total = all.len();
    let mut seen_ent = vec![false; n];
    let mut seen_rel = vec![false; relations];
    let mut train = Vec::new();
    let mut rest = Vec::new();
    for t in all {
        if !seen_ent[t.head] || !seen_ent[t.tail] || !seen_rel[t.relation] {
            seen_ent[t.head] = true;
            seen_ent[t.tail] = true;
            seen_rel[t.relation] = true;
            train.push(t);
        } else {
            rest.push(t);
        }
    }
    let n_valid = ((total as f64) * 0.1).round().max(1.0) as usize;
    let n_test = n_valid;
    if rest.len() < n_valid + n_test {
        return Err(GraphError::InvalidParams(
            "too few triples left for valid/test after covering every entity in train".into(),
        ));
    }
    let n_train_extra = rest.len() - n_valid - n_test;
    let mut rest = rest.into_iter();
    train.extend(rest.by_ref().take(n_train_extra));
    let valid: Vec<Triple> = rest.by_ref().take(n_valid).collect();
    let test: Vec<Triple> = rest.collect();

    let entities = Vocab::from_names((0..n).map(|e| format!("e{e:04}")));
    let relation_vocab = Vocab::from_names((0..relations).map(|r| format!("r{r}")));
    KnowledgeGraph::new(entities, relation_vocab, train, valid, test)
}

#[derive(Serialize)]
struct Meta<'a, P: Serialize> {
    kind: &'a str,
    seed: u64,
    params: &'a P,
}

fn write_meta<P: Serialize>(dir: &Path, kind: &str, seed: u64, params: &P) -> Result<(), GraphError> {
    let meta = Meta { kind, seed, params };
    let mut body = serde_json::to_string_pretty(&meta).expect("meta serializes");
    body.push('\n');
    let path = dir.join("meta.json");
    std::fs::write(&path, body).map_err(|e| GraphError::io(&path, e))
}

/// Writes the graph files and `meta.json` for a node-classification dataset.
pub fn write_nc(dir: &Path, data: &SyntheticNc, params: &NcParams, seed: u64) -> Result<(), GraphError> {
    data.graph.save(dir)?;
    write_meta(dir, "nc", seed, params)
}

/// Writes the triple files and `meta.json` for a knowledge graph.
pub fn write_kg(dir: &Path, kg: &KnowledgeGraph, params: &KgParams, seed: u64) -> Result<(), GraphError> {
    kg.save(dir)?;
    write_meta(dir, "kg", seed, params)
}
