use std::path::Path;

use crate::decoders::{score_triples, ClassifierHead, ScorerKind};
use crate::encoders::{
    dual_propagate, init_representations, DualState, EncoderKind, GraphContext, InitMode, InputParams, LayerParams,
};
use crate::eval::GateTrace;
use crate::graph::{load_homogeneous, load_kg, HomogeneousGraph, KnowledgeGraph, Triple};
use crate::sfm::{gate, quality_kg, quality_nc, GateMode, GateParams};
use crate::tensor::rng::streams;
use crate::tensor::{DenseMatrix, ParamStore, RngStream, Tape, Var};

use super::{RunConfig, Task, TrainError, Variant};

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Nc(HomogeneousGraph),
    Kg(KnowledgeGraph),
}

impl Dataset {
    pub fn load(path: &Path, task: Task) -> Result<Self, TrainError> {
        Ok(match task {
            Task::NodeClassification => Dataset::Nc(load_homogeneous(path)?),
            Task::LinkPrediction => Dataset::Kg(load_kg(path)?),
        })
    }

    pub fn task(&self) -> Task {
        match self {
            Dataset::Nc(_) => Task::NodeClassification,
            Dataset::Kg(_) => Task::LinkPrediction,
        }
    }

    pub fn num_nodes(&self) -> usize {
        match self {
            Dataset::Nc(g) => g.num_nodes(),
            Dataset::Kg(kg) => kg.num_entities(),
        }
    }
}

/// A dataset together with its propagation indexes.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub dataset: Dataset,
    pub ctx: GraphContext,
}

impl TaskData {
    pub fn new(dataset: Dataset) -> Self {
        let messages = match &dataset {
            Dataset::Nc(g) => g.messages(),
            Dataset::Kg(kg) => kg.messages().clone(),
        };
        Self {
            ctx: GraphContext::new(messages),
            dataset,
        }
    }

    pub fn load(path: &Path, task: Task) -> Result<Self, TrainError> {
        Ok(Self::new(Dataset::load(path, task)?))
    }

    pub fn kg(&self) -> Option<&KnowledgeGraph> {
        match &self.dataset {
            Dataset::Kg(kg) => Some(kg),
            Dataset::Nc(_) => None,
        }
    }

    pub fn nc(&self) -> Option<&HomogeneousGraph> {
        match &self.dataset {
            Dataset::Nc(g) => Some(g),
            Dataset::Kg(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Classifier(ClassifierHead),
    Scorer(ScorerKind),
}

/// Randomness consumed by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardRng {
    pub gumbel: RngStream,
    pub quality: RngStream,
}

impl ForwardRng {
    pub fn new(seed: u64) -> Self {
        Self {
            gumbel: RngStream::new(seed, streams::GUMBEL),
            quality: RngStream::new(seed, streams::QUALITY),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Final node stream `H^(L)`.
    pub nodes: Var,
    /// Relation representations handed to the scorer.
    pub relations: Option<Var>,
    /// Gate vectors per layer transition (empty for the base variant).
    pub gates: Vec<Var>,
    /// States `0..=L`.
    pub states: Vec<DualState>,
}

/// Encoder stack, optional self-filter and task head over one parameter
/// store.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: RunConfig,
    pub store: ParamStore,
    pub input: InputParams,
    pub layers: Vec<LayerParams>,
    pub gates: Option<GateParams>,
    pub head: Head,
}

impl Model {
    /// Fresh parameters drawn from the config seed.
    pub fn new(config: &RunConfig, data: &TaskData) -> Result<Self, TrainError> {
        config.validate()?;
        if config.task != data.dataset.task() {
            return Err(TrainError::Mismatch(format!(
                "config task {:?} does not match the loaded dataset",
                config.task
            )));
        }
        let mc = &config.model;
        let d = mc.dim;
        let mut rng = RngStream::new(config.seed, streams::INIT);
        let mut store = ParamStore::new();
        let (mode, relation_table, layer_relations) = match &data.dataset {
            Dataset::Nc(g) => (
                InitMode::Projection {
                    feature_dim: g.feature_dim(),
                },
                usize::from(mc.encoder == EncoderKind::Compgcn),
                1,
            ),
            Dataset::Kg(kg) => (
                InitMode::Embedding {
                    entities: kg.num_entities(),
                },
                kg.num_relations(),
                kg.num_relations(),
            ),
        };
        let input = InputParams::init(&mut store, mode, d, relation_table, &mut rng);
        let layers = (0..mc.layers)
            .map(|l| {
                LayerParams::init(
                    mc.encoder,
                    &mut store,
                    &format!("layer.{l}"),
                    d,
                    d,
                    layer_relations,
                    mc.activation(),
                    mc.composition,
                    &mut rng,
                )
            })
            .collect();
        let gates = match config.variant {
            Variant::Base => None,
            Variant::Sfgnn => Some(GateParams::init(&mut store, mc.layers, config.sfm)?),
        };
        let head = match &data.dataset {
            Dataset::Nc(g) => Head::Classifier(ClassifierHead::init(&mut store, "head", d, g.num_classes, &mut rng)),
            Dataset::Kg(_) => Head::Scorer(mc.scorer),
        };
        Ok(Self {
            config: config.clone(),
            store,
            input,
            layers,
            gates,
            head,
        })
    }

    /// Per-node quality of the representations in `state`.
    fn quality(
        &self,
        tape: &mut Tape<'_>,
        data: &TaskData,
        state: &DualState,
        rng: &mut RngStream,
    ) -> Result<Var, TrainError> {
        let sfm = &self.config.sfm;
        match (&self.head, &data.dataset) {
            (Head::Classifier(head), Dataset::Nc(g)) => {
                Ok(quality_nc(tape, head, state.h, sfm.nc_mode, Some((&g.labels, &g.train)))?)
            }
            (Head::Scorer(kind), Dataset::Kg(kg)) => {
                let r = state
                    .r
                    .ok_or_else(|| TrainError::Mismatch("link prediction needs relation representations".into()))?;
                Ok(quality_kg(tape, *kind, state.h, r, kg, sfm.cap, sfm.kg_mode, rng)?)
            }
            _ => Err(TrainError::Mismatch("head does not match dataset".into())),
        }
    }

    /// Full-graph forward through all layers.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        data: &TaskData,
        mode: GateMode,
        rng: &mut ForwardRng,
    ) -> Result<ForwardOutput, TrainError> {
        let features = data.nc().map(|g| &g.features);
        let mut state = init_representations(tape, &self.input, features)?;
        let mut states = vec![state];
        let mut gates = Vec::new();
        let n = data.dataset.num_nodes();
        for (l, layer) in self.layers.iter().enumerate() {
            let g = match (&self.gates, self.config.debug.pin_gates) {
                (None, _) => None,
                (Some(_), Some(pin)) => Some(tape.constant(DenseMatrix::filled(n, 1, pin))?),
                (Some(params), None) => {
                    let q = self.quality(tape, data, &state, &mut rng.quality)?;
                    Some(gate(tape, q, params, l, mode, &mut rng.gumbel)?)
                }
            };
            gates.extend(g);
            state = dual_propagate(tape, layer, &data.ctx, state, g)?;
            states.push(state);
        }
        Ok(ForwardOutput {
            nodes: state.h,
            relations: state.r,
            gates,
            states,
        })
    }

    /// Class logits (classification) on a finished forward pass.
    pub fn logits(&self, tape: &mut Tape<'_>, out: &ForwardOutput) -> Result<Var, TrainError> {
        match &self.head {
            Head::Classifier(head) => Ok(head.logits(tape, out.nodes)?),
            Head::Scorer(_) => Err(TrainError::Mismatch("scorer head has no class logits".into())),
        }
    }

    /// Triple scores (link prediction) on a finished forward pass.
    pub fn scores(&self, tape: &mut Tape<'_>, out: &ForwardOutput, triples: &[Triple]) -> Result<Var, TrainError> {
        match &self.head {
            Head::Scorer(kind) => {
                let r = out
                    .relations
                    .ok_or_else(|| TrainError::Mismatch("no relation representations".into()))?;
                Ok(score_triples(tape, *kind, out.nodes, r, triples)?)
            }
            Head::Classifier(_) => Err(TrainError::Mismatch("classifier head cannot score triples".into())),
        }
    }

    /// Evaluation-mode forward with fixed randomness. Returns final node
    /// values, relation values and the gate trace (sfgnn only).
    pub fn inference(&self, data: &TaskData) -> Result<Inference, TrainError> {
        let mut tape = Tape::new(&self.store);
        let mut rng = ForwardRng::new(self.config.seed ^ EVAL_SEED_MASK);
        let out = self.forward(&mut tape, data, GateMode::Eval, &mut rng)?;
        let predictions = match &self.head {
            Head::Classifier(_) => {
                let z = self.logits(&mut tape, &out)?;
                Some(tape.value(z).argmax_rows())
            }
            Head::Scorer(_) => None,
        };
        let trace = self.gates.as_ref().map(|_| GateTrace {
            bits: out
                .gates
                .iter()
                .map(|&g| tape.value(g).data().iter().map(|&x| u8::from(x >= 0.5)).collect())
                .collect(),
        });
        Ok(Inference {
            nodes: tape.value(out.nodes).clone(),
            relations: out.relations.map(|r| tape.value(r).clone()),
            predictions,
            trace,
        })
    }

    /// Copies parameter values by name from `store`, checking shapes.
    pub fn load_params(&mut self, store: &ParamStore) -> Result<(), TrainError> {
        if store.len() != self.store.len() {
            return Err(TrainError::Mismatch(format!(
                "checkpoint has {} parameters, model has {}",
                store.len(),
                self.store.len()
            )));
        }
        for (id, name, value) in store.iter() {
            if self.store.name(id) != name {
                return Err(TrainError::Mismatch(format!(
                    "parameter {} is `{name}` in the checkpoint but `{}` in the model",
                    id.0,
                    self.store.name(id)
                )));
            }
            if self.store.get(id).shape() != value.shape() {
                return Err(TrainError::Mismatch(format!("parameter `{name}` has a different shape")));
            }
            *self.store.get_mut(id) = value.clone();
        }
        Ok(())
    }
}

/// Keeps evaluation randomness apart from the training streams.
const EVAL_SEED_MASK: u64 = 0x5eed_e7a1_0000_0000;

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub nodes: DenseMatrix,
    pub relations: Option<DenseMatrix>,
    pub predictions: Option<Vec<usize>>,
    pub trace: Option<GateTrace>,
}
