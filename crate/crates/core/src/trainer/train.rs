use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Checkpoint, Dataset, ForwardRng, Model, RunConfig, TaskData, TrainError};
use crate::decoders::{bce_loss, ce_loss};
use crate::eval::{accuracy, compute_metrics, rank_with_embeddings, LinkMetrics, RankRecord};
use crate::graph::{sample_negatives, Split, Triple};
use crate::sfm::GateMode;
use crate::tensor::rng::streams;
use crate::tensor::{linear_decay_lr, Adam, AdamConfig, ParamStore, RngStream, Tape};

/// One line of the metric log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub valid_metric: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model holding the best-validation parameters.
    pub model: Model,
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
}

/// Metrics on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub link: Option<LinkMetrics>,
}

impl EvalReport {
    /// Accuracy for classification, MRR for link prediction.
    pub fn primary(&self) -> f64 {
        self.accuracy.or(self.link.map(|m| m.mrr)).unwrap_or(f64::NAN)
    }
}

fn split_triples(data: &TaskData, split: Split) -> &[Triple] {
    match (&data.dataset, split) {
        (Dataset::Kg(kg), Split::Train) => &kg.train,
        (Dataset::Kg(kg), Split::Valid) => &kg.valid,
        (Dataset::Kg(kg), Split::Test) => &kg.test,
        _ => &[],
    }
}

/// Filtered rank records for a link-prediction split.
pub fn link_records(model: &Model, data: &TaskData, split: Split) -> Result<Vec<RankRecord>, TrainError> {
    let kg = data
        .kg()
        .ok_or_else(|| TrainError::Mismatch("ranking needs a knowledge graph".into()))?;
    let kind = match model.head {
        super::Head::Scorer(kind) => kind,
        super::Head::Classifier(_) => return Err(TrainError::Mismatch("classifier head cannot rank".into())),
    };
    let inf = model.inference(data)?;
    let rel = inf
        .relations
        .ok_or_else(|| TrainError::Mismatch("no relation representations".into()))?;
    Ok(rank_with_embeddings(kg, kind, &inf.nodes, &rel, split_triples(data, split))?)
}

/// Evaluation-mode metrics on `split`.
pub fn evaluate(model: &Model, data: &TaskData, split: Split) -> Result<EvalReport, TrainError> {
    match &data.dataset {
        Dataset::Nc(g) => {
            let inf = model.inference(data)?;
            let pred = inf
                .predictions
                .ok_or_else(|| TrainError::Mismatch("scorer head cannot classify".into()))?;
            let mask = match split {
                Split::Train => &g.train,
                Split::Valid => &g.valid,
                Split::Test => &g.test,
            };
            Ok(EvalReport {
                split,
                accuracy: Some(accuracy(&pred, &g.labels, mask)?),
                link: None,
            })
        }
        Dataset::Kg(_) => {
            let records = link_records(model, data, split)?;
            Ok(EvalReport {
                split,
                accuracy: None,
                link: Some(compute_metrics(&records)?),
            })
        }
    }
}

struct Streams {
    forward: ForwardRng,
    negatives: RngStream,
    shuffle: RngStream,
}

impl Streams {
    fn states(&self) -> Vec<crate::tensor::RngState> {
        vec![
            self.forward.gumbel.state(),
            self.forward.quality.state(),
            self.negatives.state(),
            self.shuffle.state(),
        ]
    }
}

/// One optimizer step; returns the loss.
fn step(
    model: &mut Model,
    adam: &mut Adam,
    data: &TaskData,
    batch: Option<(&[Triple], &[f64])>,
    lr: f64,
    rng: &mut ForwardRng,
) -> Result<f64, TrainError> {
    let (loss, mut grads) = {
        let mut tape = Tape::new(&model.store);
        let out = model.forward(&mut tape, data, GateMode::Train, rng)?;
        let loss = match (&data.dataset, batch) {
            (Dataset::Nc(g), _) => {
                let z = model.logits(&mut tape, &out)?;
                ce_loss(&mut tape, z, &g.labels, &g.train)?
            }
            (Dataset::Kg(_), Some((triples, labels))) => {
                let s = model.scores(&mut tape, &out, triples)?;
                bce_loss(&mut tape, s, labels)?
            }
            (Dataset::Kg(_), None) => return Err(TrainError::Mismatch("link prediction step needs a batch".into())),
        };
        let value = tape.value(loss).item().expect("scalar loss");
        (value, tape.backward(loss)?)
    };
    grads.clip_global_norm(model.config.train.clip_norm);
    adam.step(&mut model.store, &grads, lr)?;
    Ok(loss)
}

fn snapshot(model: &Model, params: ParamStore, epoch: usize, best: f64, streams: &Streams) -> Checkpoint {
    Checkpoint {
        config: model.config.clone(),
        params,
        epoch,
        best_metric: best,
        rng: streams.states(),
        gate_trace: None,
    }
}

/// Trains from fresh parameters and returns the epoch with the best
/// validation metric (ties keep the earlier epoch).
pub fn train(config: &RunConfig, data: &TaskData) -> Result<TrainOutcome, TrainError> {
    let mut model = Model::new(config, data)?;
    let tc = config.train.clone();
    let mut adam = Adam::new(&model.store, AdamConfig::default());
    let mut streams = Streams {
        forward: ForwardRng::new(config.seed),
        negatives: RngStream::new(config.seed, streams::NEGATIVES),
        shuffle: RngStream::new(config.seed, streams::SHUFFLE),
    };
    let train_triples: Vec<Triple> = data.kg().map(|kg| kg.train.clone()).unwrap_or_default();
    if data.kg().is_some() && train_triples.is_empty() {
        return Err(TrainError::Mismatch("knowledge graph has no training triples".into()));
    }
    let steps_per_epoch = match &data.dataset {
        Dataset::Nc(_) => 1,
        Dataset::Kg(_) => train_triples.len().div_ceil(tc.batch_size),
    };
    let total_steps = tc.epochs * steps_per_epoch;
    let valid_empty = match &data.dataset {
        Dataset::Nc(g) => g.valid.is_empty(),
        Dataset::Kg(kg) => kg.valid.is_empty(),
    };

    let mut log = Vec::with_capacity(tc.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut global_step = 0;
    let mut order: Vec<usize> = (0..train_triples.len()).collect();
    for epoch in 1..=tc.epochs {
        let last_good = model.store.clone();
        let lr_start = linear_decay_lr(global_step, total_steps, tc.lr)?;
        let epoch_result: Result<f64, TrainError> = (|| {
            let mut total = 0.0;
            match &data.dataset {
                Dataset::Nc(_) => {
                    let lr = linear_decay_lr(global_step, total_steps, tc.lr)?;
                    total += step(&mut model, &mut adam, data, None, lr, &mut streams.forward)?;
                    global_step += 1;
                }
                Dataset::Kg(kg) => {
                    order.shuffle(&mut streams.shuffle);
                    for chunk in order.chunks(tc.batch_size) {
                        let positives: Vec<Triple> = chunk.iter().map(|&i| train_triples[i]).collect();
                        let batch =
                            sample_negatives(&positives, tc.negatives, kg.num_entities(), &mut streams.negatives)?;
                        let (triples, labels) = batch.labeled();
                        let lr = linear_decay_lr(global_step, total_steps, tc.lr)?;
                        total += step(
                            &mut model,
                            &mut adam,
                            data,
                            Some((&triples, &labels)),
                            lr,
                            &mut streams.forward,
                        )?;
                        global_step += 1;
                    }
                }
            }
            Ok(total / steps_per_epoch as f64)
        })();
        let loss = match epoch_result {
            Ok(l) => l,
            Err(e) if e.is_non_finite() => {
                let (metric, prev) = best.as_ref().map_or((f64::NAN, 0), |b| (b.0, b.1));
                return Err(TrainError::Divergence {
                    epoch,
                    checkpoint: Box::new(snapshot(&model, last_good, prev.max(epoch - 1), metric, &streams)),
                    log,
                });
            }
            Err(e) => return Err(e),
        };
        let valid_metric = if valid_empty {
            f64::NAN
        } else {
            evaluate(&model, data, Split::Valid)?.primary()
        };
        let improved = match &best {
            None => true,
            Some((b, _, _)) => valid_metric > *b || (b.is_nan() && valid_empty),
        };
        if improved {
            best = Some((valid_metric, epoch, model.store.clone()));
        }
        log.push(EpochRecord {
            epoch,
            loss,
            valid_metric,
            lr: lr_start,
        });
    }

    let (best_metric, best_epoch, params) = best.expect("at least one epoch");
    model.store = params;
    let trace = model.inference(data)?.trace;
    let mut checkpoint = snapshot(&model, model.store.clone(), best_epoch, best_metric, &streams);
    checkpoint.gate_trace = trace;
    Ok(TrainOutcome { model, checkpoint, log })
}

/// Rebuilds a model from a checkpoint over `data`.
pub fn restore(checkpoint: &Checkpoint, data: &TaskData) -> Result<Model, TrainError> {
    let mut model = Model::new(&checkpoint.config, data)?;
    model.load_params(&checkpoint.params)?;
    Ok(model)
}
