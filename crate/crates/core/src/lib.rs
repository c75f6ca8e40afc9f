//! Graph neural networks with separate node and message representations
//! and a decoder-driven self-filter gate.
//!
//! The crate contains a small reverse-mode autodiff engine ([`tensor`]),
//! graph data and synthetic generators ([`graph`]), message-passing
//! encoders ([`encoders`]), the self-filter ([`sfm`]), task heads
//! ([`decoders`]), training ([`trainer`]) and evaluation ([`eval`]).

pub mod decoders;
pub mod encoders;
pub mod eval;
pub mod graph;
pub mod sfm;
pub mod tensor;
pub mod trainer;

pub use decoders::{ClassifierHead, ScorerKind};
pub use encoders::{Activation, Composition, DualState, EncoderKind, GraphContext, LayerParams};
pub use eval::{CategoryTable, GateTrace, LinkMetrics, RankRecord};
pub use graph::{HomogeneousGraph, KnowledgeGraph, Triple};
pub use sfm::{GateMode, GateParams, SfmConfig};
pub use tensor::{DenseMatrix, ParamStore, RngStream, Tape, TensorError};
pub use trainer::{Checkpoint, Model, RunConfig, Task, TaskData, TrainError, Variant};
