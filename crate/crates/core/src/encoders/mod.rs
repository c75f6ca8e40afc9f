//! Message-passing layers and the dual node/message propagation that wraps
//! them.
//!
//! Every layer is split into a neighbor aggregation and a combine step
//! (self term plus aggregate, then activation). The dual update computes the
//! aggregate once from the message stream and combines it twice: with the
//! raw node representations for the new node stream, and with the gated
//! node representations for the new message stream.

mod compgcn;
mod context;
mod dual;
mod init;
mod mean;
mod rgcn;

pub use compgcn::{compgcn_layer, CompGcnLayer};
pub use context::GraphContext;
pub use dual::{dual_propagate, DualState};
pub use init::{init_representations, xavier_uniform, InitMode, InputParams};
pub use mean::{homo_mean_layer, MeanLayer};
pub use rgcn::{rgcn_layer, RgcnLayer};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{ParamStore, RngStream, Tape, TensorError, Var};

#[derive(Debug, Error, PartialEq)]
pub enum EncoderError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("gate length {gates} does not match node count {nodes}")]
    GateLength { gates: usize, nodes: usize },
    #[error("layer needs relation representations")]
    MissingRelations,
    #[error("missing weight for relation {0}")]
    MissingRelation(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape<'_>, x: Var) -> Result<Var, TensorError> {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
            Activation::Identity => Ok(x),
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }
}

/// Entity-relation composition used by CompGCN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Composition {
    Subtraction,
    Multiplication,
}

impl Composition {
    pub fn apply(self, tape: &mut Tape<'_>, entity: Var, relation: Var) -> Result<Var, TensorError> {
        match self {
            Composition::Subtraction => tape.sub(entity, relation),
            Composition::Multiplication => tape.mul(entity, relation),
        }
    }

    pub fn eval(self, e: f64, r: f64) -> f64 {
        match self {
            Composition::Subtraction => e - r,
            Composition::Multiplication => e * r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Mean,
    Rgcn,
    Compgcn,
}

/// Parameters of one layer `θ_l`.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Mean(MeanLayer),
    Rgcn(RgcnLayer),
    CompGcn(CompGcnLayer),
}

/// Output of one layer application.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerOutput {
    pub nodes: Var,
    pub relations: Option<Var>,
}

impl LayerParams {
    /// Registers fresh parameters for a layer in `store` under `prefix`.
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        kind: EncoderKind,
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        num_relations: usize,
        activation: Activation,
        composition: Composition,
        rng: &mut RngStream,
    ) -> Self {
        match kind {
            EncoderKind::Mean => LayerParams::Mean(MeanLayer::init(store, prefix, d_in, d_out, activation, rng)),
            EncoderKind::Rgcn => LayerParams::Rgcn(RgcnLayer::init(
                store,
                prefix,
                d_in,
                d_out,
                num_relations,
                activation,
                rng,
            )),
            EncoderKind::Compgcn => LayerParams::CompGcn(CompGcnLayer::init(
                store,
                prefix,
                d_in,
                d_out,
                composition,
                activation,
                rng,
            )),
        }
    }

    /// Pre-activation neighbor term computed from `neigh`.
    pub fn aggregate(
        &self,
        tape: &mut Tape<'_>,
        ctx: &GraphContext,
        neigh: Var,
        relations: Option<Var>,
    ) -> Result<Var, EncoderError> {
        match self {
            LayerParams::Mean(l) => l.aggregate(tape, ctx, neigh),
            LayerParams::Rgcn(l) => l.aggregate(tape, ctx, neigh),
            LayerParams::CompGcn(l) => l.aggregate(tape, ctx, neigh, relations.ok_or(EncoderError::MissingRelations)?),
        }
    }

    /// Adds the self term to `aggregate` and applies the activation.
    pub fn combine(&self, tape: &mut Tape<'_>, ctx: &GraphContext, self_repr: Var, aggregate: Var) -> Result<Var, EncoderError> {
        match self {
            LayerParams::Mean(l) => l.combine(tape, self_repr, aggregate),
            LayerParams::Rgcn(l) => l.combine(tape, self_repr, aggregate),
            LayerParams::CompGcn(l) => l.combine(tape, ctx, self_repr, aggregate),
        }
    }

    /// Next-layer relation representations, for encoders that update them.
    pub fn update_relations(&self, tape: &mut Tape<'_>, relations: Option<Var>) -> Result<Option<Var>, EncoderError> {
        match self {
            LayerParams::CompGcn(l) => {
                let r = relations.ok_or(EncoderError::MissingRelations)?;
                Ok(Some(l.update_relations(tape, r)?))
            }
            _ => Ok(relations),
        }
    }

    /// Single-stream application `f_G(self; neighbors)`.
    pub fn apply(
        &self,
        tape: &mut Tape<'_>,
        ctx: &GraphContext,
        self_repr: Var,
        neigh: Var,
        relations: Option<Var>,
    ) -> Result<LayerOutput, EncoderError> {
        let agg = self.aggregate(tape, ctx, neigh, relations)?;
        let nodes = self.combine(tape, ctx, self_repr, agg)?;
        let relations = self.update_relations(tape, relations)?;
        Ok(LayerOutput { nodes, relations })
    }

    pub fn activation(&self) -> Activation {
        match self {
            LayerParams::Mean(l) => l.activation,
            LayerParams::Rgcn(l) => l.activation,
            LayerParams::CompGcn(l) => l.activation,
        }
    }
}
