//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

pub mod gradients;

use selfgate::graph::{KnowledgeGraph, Triple, Vocab};
use selfgate::tensor::{DenseMatrix, Gradients, ParamStore, RngStream};

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
pub const FD_ABS_TOL: f64 = 1e-7;

/// Compares analytic gradients against central differences of `loss` for
/// every parameter entry. Returns the worst `(relative error, name, index)`
/// on failure.
pub fn check_gradients(
    store: &ParamStore,
    grads: &Gradients,
    mut loss: impl FnMut(&ParamStore) -> f64,
) -> Result<usize, String> {
    let mut checked = 0;
    for (id, name, value) in store.iter() {
        for i in 0..value.len() {
            let mut plus = store.clone();
            plus.get_mut(id).data_mut()[i] += FD_STEP;
            let mut minus = store.clone();
            minus.get_mut(id).data_mut()[i] -= FD_STEP;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
            let analytic = grads.get(id).data()[i];
            let diff = (numeric - analytic).abs();
            let scale = numeric.abs().max(analytic.abs());
            if diff > FD_ABS_TOL && diff / scale > FD_REL_TOL {
                return Err(format!(
                    "{name}[{i}]: analytic {analytic:e}, numeric {numeric:e}, rel err {:e}",
                    diff / scale
                ));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut RngStream) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| 2.0 * rng.uniform() - 1.0)
}

/// Random knowledge graph with unique triples; roughly 70/15/15 split with
/// a nonempty test split.
pub fn random_kg(entities: usize, relations: usize, triples: usize, rng: &mut RngStream) -> KnowledgeGraph {
    let mut set = std::collections::BTreeSet::new();
    let mut tries = 0;
    while set.len() < triples && tries < triples * 50 {
        set.insert(Triple::new(rng.below(entities), rng.below(relations), rng.below(entities)));
        tries += 1;
    }
    let mut all: Vec<Triple> = set.into_iter().collect();
    for i in (1..all.len()).rev() {
        all.swap(i, rng.below(i + 1));
    }
    let n_test = (all.len() * 15 / 100).max(1);
    let n_valid = all.len() * 15 / 100;
    let test = all.split_off(all.len() - n_test);
    let valid = all.split_off(all.len() - n_valid);
    KnowledgeGraph::new(
        Vocab::from_names((0..entities).map(|i| format!("e{i}"))),
        Vocab::from_names((0..relations).map(|i| format!("r{i}"))),
        all,
        valid,
        test,
    )
    .expect("valid random kg")
}

/// Brute-force filtered rank: score every entity in the slot, drop known
/// triples other than the answer, sort descending, and place the answer
/// after all candidates with an equal score.
pub fn brute_force_rank(kg: &KnowledgeGraph, t: &Triple, head_slot: bool, score: &dyn Fn(&Triple) -> f64) -> usize {
    let known: std::collections::HashSet<Triple> = kg.train.iter().chain(&kg.valid).chain(&kg.test).copied().collect();
    let mut scored: Vec<(f64, bool)> = Vec::new();
    for e in 0..kg.num_entities() {
        let c = if head_slot {
            Triple::new(e, t.relation, t.tail)
        } else {
            Triple::new(t.head, t.relation, e)
        };
        let is_answer = c == *t;
        if !is_answer && known.contains(&c) {
            continue;
        }
        scored.push((score(&c), is_answer));
    }
    // Descending by score; the answer sorts last among equals.
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    scored.iter().position(|&(_, ans)| ans).unwrap() + 1
}

/// Records `build` on a tape over `store`, back-propagates, and checks the
/// gradients against central differences of the same recording.
pub fn fd_check(
    store: &ParamStore,
    build: impl Fn(&mut selfgate::tensor::Tape<'_>) -> selfgate::tensor::Var,
) -> Result<(usize, Gradients), String> {
    let mut tape = selfgate::tensor::Tape::new(store);
    let loss = build(&mut tape);
    let grads = tape.backward(loss).map_err(|e| e.to_string())?;
    let checked = check_gradients(store, &grads, |s| {
        let mut t = selfgate::tensor::Tape::new(s);
        let l = build(&mut t);
        t.value(l).item().expect("scalar loss")
    })?;
    Ok((checked, grads))
}
