//! Self-filter: scores intermediate node representations with the task
//! decoder and turns the scores into per-node binary gates.

use std::sync::Arc;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoders::{score_triples, ClassifierHead, DecoderError, ScorerKind};
use crate::graph::{KnowledgeGraph, Triple};
use crate::tensor::{gumbel_softmax, DenseMatrix, ParamId, ParamStore, RngStream, Tape, TensorError, Var};

/// Quality assigned to entities without training triples.
pub const NEUTRAL_QUALITY: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum SfmError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("sampling cap must be at least 1")]
    Cap,
    #[error("no gate parameter for layer {0}")]
    Layer(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalPolicy {
    /// `g = 1` iff `w·qual ≥ 0`.
    Deterministic,
    /// Hard Gumbel sample, as in training.
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KgQualityMode {
    /// Mean of `σ(f)` over sampled triples.
    Sigmoid,
    /// Mean of raw scores.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NcQualityMode {
    /// Largest class probability.
    MaxProb,
    /// Probability of the true class on train nodes, largest probability
    /// elsewhere.
    TrueClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateMode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SfmConfig {
    pub temperature: f64,
    pub eval_policy: EvalPolicy,
    /// Stop gradients through the quality score.
    pub detach: bool,
    pub cap: usize,
    pub kg_mode: KgQualityMode,
    pub nc_mode: NcQualityMode,
    /// Straight-through one-hot gates; `false` keeps the soft sample.
    pub hard: bool,
    /// Initial value of every `w^(l)`.
    pub init_weight: f64,
}

impl Default for SfmConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            eval_policy: EvalPolicy::Deterministic,
            detach: false,
            cap: 32,
            kg_mode: KgQualityMode::Sigmoid,
            nc_mode: NcQualityMode::MaxProb,
            hard: true,
            init_weight: 1.0,
        }
    }
}

/// One learnable scalar `w^(l)` per layer transition plus the shared
/// sampling settings.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub weights: Vec<ParamId>,
    pub config: SfmConfig,
}

impl GateParams {
    pub fn init(store: &mut ParamStore, layers: usize, config: SfmConfig) -> Result<Self, SfmError> {
        if !(config.temperature > 0.0) || !config.temperature.is_finite() {
            return Err(SfmError::Temperature(config.temperature));
        }
        if config.cap == 0 {
            return Err(SfmError::Cap);
        }
        let weights = (0..layers)
            .map(|l| store.add(format!("gate.{l}.w"), DenseMatrix::scalar(config.init_weight)))
            .collect();
        Ok(Self { weights, config })
    }
}

/// Per-node quality for classification: decoder confidence on `h`.
/// `labels` holds the node labels and train mask used by
/// [`NcQualityMode::TrueClass`].
pub fn quality_nc(
    tape: &mut Tape<'_>,
    head: &ClassifierHead,
    h: Var,
    mode: NcQualityMode,
    labels: Option<(&[usize], &[usize])>,
) -> Result<Var, SfmError> {
    let z = head.logits(tape, h)?;
    let p = tape.softmax_rows(z)?;
    let best = tape.row_max(p)?;
    match (mode, labels) {
        (NcQualityMode::TrueClass, Some((labels, train))) => {
            let (n, classes) = tape.shape(p);
            let mut pick = DenseMatrix::zeros(n, classes);
            let mut other = DenseMatrix::filled(n, 1, 1.0);
            for &v in train {
                pick.set(v, labels[v], 1.0);
                other.set(v, 0, 0.0);
            }
            let pick = tape.constant(pick)?;
            let chosen = tape.mul(p, pick)?;
            let chosen = tape.row_sum(chosen)?;
            let other = tape.constant(other)?;
            let rest = tape.mul_rows(best, other)?;
            Ok(tape.add(chosen, rest)?)
        }
        _ => Ok(best),
    }
}

/// Triples used to score each entity: all of `ℰ_x` when it has at most
/// `cap` triples, otherwise `cap` drawn uniformly without replacement.
pub fn sample_quality_triples(kg: &KnowledgeGraph, cap: usize, rng: &mut RngStream) -> Vec<Vec<usize>> {
    (0..kg.num_entities())
        .map(|x| {
            let related = kg.related(x);
            if related.len() <= cap {
                related.to_vec()
            } else {
                sample(rng, related.len(), cap).into_iter().map(|i| related[i]).collect()
            }
        })
        .collect()
}

/// Per-entity quality for link prediction: mean decoder confidence over
/// (sampled) training triples containing the entity, scored with the given
/// layer's entity and relation representations.
#[allow(clippy::too_many_arguments)]
pub fn quality_kg(
    tape: &mut Tape<'_>,
    kind: ScorerKind,
    entities: Var,
    relations: Var,
    kg: &KnowledgeGraph,
    cap: usize,
    mode: KgQualityMode,
    rng: &mut RngStream,
) -> Result<Var, SfmError> {
    if cap == 0 {
        return Err(SfmError::Cap);
    }
    let n = kg.num_entities();
    let chosen = sample_quality_triples(kg, cap, rng);
    let mut triples: Vec<Triple> = Vec::new();
    let mut owner = Vec::new();
    let mut weight = Vec::new();
    let mut neutral = DenseMatrix::zeros(n, 1);
    for (x, idx) in chosen.iter().enumerate() {
        if idx.is_empty() {
            neutral.set(x, 0, NEUTRAL_QUALITY);
        }
        for &i in idx {
            triples.push(kg.train[i]);
            owner.push(x);
            weight.push(1.0 / idx.len() as f64);
        }
    }
    let neutral = tape.constant(neutral)?;
    if triples.is_empty() {
        return Ok(neutral);
    }
    let scores = score_triples(tape, kind, entities, relations, &triples)?;
    let conf = match mode {
        KgQualityMode::Sigmoid => tape.sigmoid(scores)?,
        KgQualityMode::Raw => scores,
    };
    let w = tape.constant(DenseMatrix::column(&weight))?;
    let weighted = tape.mul_rows(conf, w)?;
    let owner: Arc<[usize]> = owner.into();
    let mean = tape.segment_sum(weighted, owner, n)?;
    Ok(tape.add(mean, neutral)?)
}

/// Per-node gates for one layer transition (n×1, entries 0 or 1 unless
/// soft gates are configured).
///
/// Training samples a straight-through Gumbel-softmax over the logits
/// `(w·qual, 0)` and keeps the first category. Evaluation uses the sign
/// of `w·qual` or a fresh sample, depending on the policy.
pub fn gate(
    tape: &mut Tape<'_>,
    qual: Var,
    params: &GateParams,
    layer: usize,
    mode: GateMode,
    rng: &mut RngStream,
) -> Result<Var, SfmError> {
    let cfg = &params.config;
    if !(cfg.temperature > 0.0) {
        return Err(SfmError::Temperature(cfg.temperature));
    }
    let w = *params.weights.get(layer).ok_or(SfmError::Layer(layer))?;
    let qual = if cfg.detach { tape.detach(qual)? } else { qual };
    let wv = tape.param(w)?;
    let wq = tape.mul(qual, wv)?;
    if mode == GateMode::Eval && cfg.eval_policy == EvalPolicy::Deterministic {
        let g = tape.value(wq).map(|x| if x >= 0.0 { 1.0 } else { 0.0 });
        return Ok(tape.constant(g)?);
    }
    let spread = tape.constant(DenseMatrix::from_rows(&[vec![1.0, 0.0]]))?;
    let logits = tape.matmul(wq, spread)?;
    let hard = cfg.hard || mode == GateMode::Eval;
    let y = gumbel_softmax(tape, logits, cfg.temperature, hard, rng)?;
    let first = tape.constant(DenseMatrix::column(&[1.0, 0.0]))?;
    let g = tape.matmul(y, first)?;
    if mode == GateMode::Eval {
        let v = tape.value(g).clone();
        return Ok(tape.constant(v)?);
    }
    Ok(g)
}
