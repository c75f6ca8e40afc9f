//! Task heads: an MLP node classifier, TransE and DistMult triple scorers,
//! and the two training losses.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoders::xavier_uniform;
use crate::graph::Triple;
use crate::tensor::{DenseMatrix, ParamId, ParamStore, RngStream, Tape, TensorError, Var};

#[derive(Debug, Error, PartialEq)]
pub enum DecoderError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("dimension mismatch: {0} vs {1}")]
    Dim(usize, usize),
    #[error("label {0} is not 0 or 1")]
    NonBinaryLabel(f64),
    #[error("mask selects no nodes")]
    EmptyMask,
    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },
}

/// `relu(h W1 + b1) W2 + b2`, hidden width equal to the input width.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub dim: usize,
    pub classes: usize,
}

impl ClassifierHead {
    pub fn init(store: &mut ParamStore, prefix: &str, dim: usize, classes: usize, rng: &mut RngStream) -> Self {
        Self {
            w1: store.add(format!("{prefix}.w1"), xavier_uniform(dim, dim, rng)),
            b1: store.add(format!("{prefix}.b1"), DenseMatrix::zeros(1, dim)),
            w2: store.add(format!("{prefix}.w2"), xavier_uniform(dim, classes, rng)),
            b2: store.add(format!("{prefix}.b2"), DenseMatrix::zeros(1, classes)),
            dim,
            classes,
        }
    }

    /// Unnormalized class scores, one row per node.
    pub fn logits(&self, tape: &mut Tape<'_>, h: Var) -> Result<Var, DecoderError> {
        let (n, d) = tape.shape(h);
        if d != self.dim {
            return Err(DecoderError::Dim(d, self.dim));
        }
        let rows: Arc<[usize]> = Arc::from(vec![0usize; n]);
        let w1 = tape.param(self.w1)?;
        let b1 = tape.param(self.b1)?;
        let w2 = tape.param(self.w2)?;
        let b2 = tape.param(self.b2)?;
        let z = tape.matmul(h, w1)?;
        let b = tape.gather_rows(b1, rows.clone())?;
        let z = tape.add(z, b)?;
        let z = tape.relu(z)?;
        let z = tape.matmul(z, w2)?;
        let b = tape.gather_rows(b2, rows)?;
        Ok(tape.add(z, b)?)
    }
}

/// Class distribution per node.
pub fn classify(tape: &mut Tape<'_>, head: &ClassifierHead, h: Var) -> Result<Var, DecoderError> {
    let z = head.logits(tape, h)?;
    Ok(tape.softmax_rows(z)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    /// `-‖h_u + h_r - h_v‖₂`
    Transe,
    /// `Σ_i u_i r_i v_i`
    Distmult,
}

/// Plain-value triple score.
pub fn score_triple(kind: ScorerKind, hu: &[f64], hr: &[f64], hv: &[f64]) -> Result<f64, DecoderError> {
    if hu.len() != hr.len() {
        return Err(DecoderError::Dim(hu.len(), hr.len()));
    }
    if hu.len() != hv.len() {
        return Err(DecoderError::Dim(hu.len(), hv.len()));
    }
    Ok(score_unchecked(kind, hu, hr, hv))
}

#[inline]
pub(crate) fn score_unchecked(kind: ScorerKind, hu: &[f64], hr: &[f64], hv: &[f64]) -> f64 {
    match kind {
        ScorerKind::Transe => {
            let sq: f64 = hu.iter().zip(hr).zip(hv).map(|((u, r), v)| (u + r - v) * (u + r - v)).sum();
            -sq.sqrt()
        }
        ScorerKind::Distmult => hu.iter().zip(hr).zip(hv).map(|((u, r), v)| u * r * v).sum(),
    }
}

/// Recorded scores for a batch of triples (m×1), reading entity rows from
/// `entities` and relation rows from `relations`.
pub fn score_triples(
    tape: &mut Tape<'_>,
    kind: ScorerKind,
    entities: Var,
    relations: Var,
    triples: &[Triple],
) -> Result<Var, DecoderError> {
    let (de, dr) = (tape.shape(entities).1, tape.shape(relations).1);
    if de != dr {
        return Err(DecoderError::Dim(de, dr));
    }
    let heads: Arc<[usize]> = triples.iter().map(|t| t.head).collect();
    let rels: Arc<[usize]> = triples.iter().map(|t| t.relation).collect();
    let tails: Arc<[usize]> = triples.iter().map(|t| t.tail).collect();
    let u = tape.gather_rows(entities, heads)?;
    let r = tape.gather_rows(relations, rels)?;
    let v = tape.gather_rows(entities, tails)?;
    match kind {
        ScorerKind::Transe => {
            let s = tape.add(u, r)?;
            let diff = tape.sub(s, v)?;
            let norm = tape.l2_norm_rows(diff)?;
            Ok(tape.scale(norm, -1.0)?)
        }
        ScorerKind::Distmult => {
            let ur = tape.mul(u, r)?;
            let urv = tape.mul(ur, v)?;
            Ok(tape.row_sum(urv)?)
        }
    }
}

/// Mean binary cross-entropy between `sigmoid(scores)` and `labels`.
pub fn bce_loss(tape: &mut Tape<'_>, scores: Var, labels: &[f64]) -> Result<Var, DecoderError> {
    if let Some(&bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(DecoderError::NonBinaryLabel(bad));
    }
    Ok(tape.bce_with_logits(scores, labels)?)
}

/// Mean negative log-probability of the true class over masked nodes,
/// computed from logits.
pub fn ce_loss(tape: &mut Tape<'_>, logits: Var, labels: &[usize], mask: &[usize]) -> Result<Var, DecoderError> {
    if mask.is_empty() {
        return Err(DecoderError::EmptyMask);
    }
    let (n, classes) = tape.shape(logits);
    if labels.len() != n {
        return Err(DecoderError::Dim(labels.len(), n));
    }
    let mut pick = DenseMatrix::zeros(mask.len(), classes);
    for (i, &v) in mask.iter().enumerate() {
        let label = labels[v];
        if label >= classes {
            return Err(DecoderError::LabelRange { label, classes });
        }
        pick.set(i, label, 1.0);
    }
    let logp = tape.log_softmax_rows(logits)?;
    let rows = tape.gather_rows(logp, mask.iter().copied().collect())?;
    let pick = tape.constant(pick)?;
    let chosen = tape.mul(rows, pick)?;
    let total = tape.sum(chosen)?;
    Ok(tape.scale(total, -1.0 / mask.len() as f64)?)
}
