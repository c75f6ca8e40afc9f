//! Finite-difference gradient checks for every tape op, each encoder layer
//! and full two-layer models.

use std::sync::Arc;

use selfgate::decoders::{bce_loss, ce_loss, ClassifierHead, ScorerKind};
use selfgate::encoders::{Activation, Composition, EncoderKind, GraphContext, LayerParams};
use selfgate::graph::{HomogeneousGraph, Split, Triple};
use selfgate::sfm::GateMode;
use selfgate::tensor::rng::streams;
use selfgate::tensor::{
    gumbel_noise, gumbel_softmax_with_noise, DenseMatrix, ParamStore, RngStream, Tape, TensorError, Var,
};
use selfgate::trainer::{Dataset, ForwardRng, Model, RunConfig, Task, TaskData, Variant};
use super::{fd_check, random_kg, random_matrix};

type Op = dyn Fn(&mut Tape<'_>, &[Var]) -> Result<Var, TensorError>;

/// Checks `sum(op(inputs) ⊙ W)` for a fixed random `W`.
fn check_op(name: &str, inputs: Vec<DenseMatrix>, op: &Op) {
    let mut store = ParamStore::new();
    let ids: Vec<_> = inputs
        .into_iter()
        .enumerate()
        .map(|(i, m)| store.add(format!("x{i}"), m))
        .collect();
    let out_shape = {
        let mut tape = Tape::new(&store);
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(id).unwrap()).collect();
        let out = op(&mut tape, &vars).unwrap();
        tape.shape(out)
    };
    let weights = random_matrix(out_shape.0, out_shape.1, &mut RngStream::new(99, 0));
    fd_check(&store, |tape| {
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(id).unwrap()).collect();
        let out = op(tape, &vars).unwrap();
        let w = tape.constant(weights.clone()).unwrap();
        let prod = tape.mul(out, w).unwrap();
        tape.sum(prod).unwrap()
    })
    .unwrap_or_else(|e| panic!("{name}: {e}"));
}

fn rng() -> RngStream {
    RngStream::new(7, 0)
}

fn away_from_zero(rows: usize, cols: usize, rng: &mut RngStream) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| {
        let m = 0.1 + 0.9 * rng.uniform();
        if rng.coin() {
            m
        } else {
            -m
        }
    })
}

pub fn sum_of_matmul_matches_finite_differences() {
    let mut r = rng();
    let a = random_matrix(3, 4, &mut r);
    let b = random_matrix(4, 2, &mut r);
    let mut store = ParamStore::new();
    let ia = store.add("a", a);
    let ib = store.add("b", b);
    let (checked, _) = fd_check(&store, |t| {
        let (a, b) = (t.param(ia).unwrap(), t.param(ib).unwrap());
        let p = t.matmul(a, b).unwrap();
        t.sum(p).unwrap()
    })
    .unwrap();
    assert_eq!(checked, 12 + 8);
}

pub fn linear_algebra_ops() {
    let mut r = rng();
    check_op("matmul", vec![random_matrix(3, 4, &mut r), random_matrix(4, 2, &mut r)], &|t, v| {
        t.matmul(v[0], v[1])
    });
    check_op("transpose", vec![random_matrix(3, 4, &mut r)], &|t, v| t.transpose(v[0]));
    check_op("scale", vec![random_matrix(3, 4, &mut r)], &|t, v| t.scale(v[0], -2.5));
}

pub fn elementwise_ops() {
    let mut r = rng();
    for (name, op) in [
        ("add", (|t, v| t.add(v[0], v[1])) as fn(&mut Tape<'_>, &[Var]) -> _),
        ("sub", |t, v| t.sub(v[0], v[1])),
        ("mul", |t, v| t.mul(v[0], v[1])),
    ] {
        check_op(name, vec![random_matrix(3, 2, &mut r), random_matrix(3, 2, &mut r)], &op);
        check_op(
            &format!("{name} scalar right"),
            vec![random_matrix(3, 2, &mut r), random_matrix(1, 1, &mut r)],
            &op,
        );
        check_op(
            &format!("{name} scalar left"),
            vec![random_matrix(1, 1, &mut r), random_matrix(3, 2, &mut r)],
            &op,
        );
    }
    check_op("mul_rows", vec![random_matrix(4, 3, &mut r), random_matrix(4, 1, &mut r)], &|t, v| {
        t.mul_rows(v[0], v[1])
    });
}

pub fn indexing_ops() {
    let mut r = rng();
    let idx: Arc<[usize]> = Arc::from(vec![2, 0, 2, 1, 3]);
    check_op("gather_rows", vec![random_matrix(4, 3, &mut r)], &move |t, v| {
        t.gather_rows(v[0], idx.clone())
    });
    let seg: Arc<[usize]> = Arc::from(vec![1, 0, 1, 3, 1]);
    check_op("segment_sum", vec![random_matrix(5, 2, &mut r)], &move |t, v| {
        t.segment_sum(v[0], seg.clone(), 4)
    });
    check_op(
        "concat_rows",
        vec![random_matrix(2, 3, &mut r), random_matrix(1, 3, &mut r), random_matrix(3, 3, &mut r)],
        &|t, v| t.concat_rows(v),
    );
}

pub fn nonlinear_ops() {
    let mut r = rng();
    check_op("sigmoid", vec![random_matrix(3, 3, &mut r)], &|t, v| t.sigmoid(v[0]));
    check_op("tanh", vec![random_matrix(3, 3, &mut r)], &|t, v| t.tanh(v[0]));
    check_op("relu", vec![away_from_zero(3, 3, &mut r)], &|t, v| t.relu(v[0]));
    let positive = DenseMatrix::from_fn(3, 3, |_, _| 0.5 + r.uniform());
    check_op("log", vec![positive], &|t, v| t.log(v[0]));
    check_op("softmax_rows", vec![random_matrix(3, 4, &mut r)], &|t, v| t.softmax_rows(v[0]));
    check_op("log_softmax_rows", vec![random_matrix(3, 4, &mut r)], &|t, v| {
        t.log_softmax_rows(v[0])
    });
    check_op("l2_norm_rows", vec![away_from_zero(4, 3, &mut r)], &|t, v| t.l2_norm_rows(v[0]));
}

pub fn reduction_ops() {
    let mut r = rng();
    check_op("mean", vec![random_matrix(3, 4, &mut r)], &|t, v| t.mean(v[0]));
    check_op("sum", vec![random_matrix(3, 4, &mut r)], &|t, v| t.sum(v[0]));
    check_op("row_sum", vec![random_matrix(3, 4, &mut r)], &|t, v| t.row_sum(v[0]));
    let distinct = DenseMatrix::from_fn(3, 4, |i, j| ((i * 7 + j * 3) % 11) as f64 * 0.1 + r.uniform() * 0.01);
    check_op("row_max", vec![distinct], &|t, v| t.row_max(v[0]));
}

pub fn bce_with_logits_gradient() {
    let mut r = rng();
    let labels = [1.0, 0.0, 0.0, 1.0, 1.0];
    check_op("bce_with_logits", vec![random_matrix(5, 1, &mut r)], &move |t, v| {
        t.bce_with_logits(v[0], &labels)
    });
}

pub fn soft_gumbel_with_fixed_noise() {
    let mut r = rng();
    let noise = gumbel_noise(4, 2, &mut RngStream::new(5, streams::GUMBEL));
    check_op("gumbel_softmax soft", vec![random_matrix(4, 2, &mut r)], &move |t, v| {
        gumbel_softmax_with_noise(t, v[0], &noise, 0.7, false)
    });
}

pub fn classifier_with_cross_entropy() {
    let mut store = ParamStore::new();
    let mut r = RngStream::new(3, streams::INIT);
    let head = ClassifierHead::init(&mut store, "head", 4, 3, &mut r);
    // Biases start at zero; move them off so every relu unit is exercised.
    *store.get_mut(head.b1) = random_matrix(1, 4, &mut r);
    let h = store.add("h", random_matrix(6, 4, &mut r));
    let labels = [0, 2, 1, 1, 0, 2];
    let mask = [0, 1, 3, 5];
    fd_check(&store, |t| {
        let hv = t.param(h).unwrap();
        let z = head.logits(t, hv).unwrap();
        ce_loss(t, z, &labels, &mask).unwrap()
    })
    .unwrap();
}

fn check_layer(kind: EncoderKind, composition: Composition, activation: Activation) {
    let mut r = RngStream::new(11, 0);
    let kg = random_kg(7, 2, 14, &mut r);
    let ctx = GraphContext::new(kg.messages().clone());
    let mut store = ParamStore::new();
    let layer = LayerParams::init(kind, &mut store, "l", 3, 4, 2, activation, composition, &mut r);
    let h = store.add("h", random_matrix(7, 3, &mut r));
    let m = store.add("m", random_matrix(7, 3, &mut r));
    let rel = store.add("r", random_matrix(2, 3, &mut r));
    let w_nodes = random_matrix(7, 4, &mut r);
    let w_rel = random_matrix(2, 4, &mut r);
    fd_check(&store, |t| {
        let (hv, mv, rv) = (t.param(h).unwrap(), t.param(m).unwrap(), t.param(rel).unwrap());
        let out = layer.apply(t, &ctx, hv, mv, Some(rv)).unwrap();
        let w = t.constant(w_nodes.clone()).unwrap();
        let p = t.mul(out.nodes, w).unwrap();
        let mut loss = t.sum(p).unwrap();
        if let Some(r2) = out.relations {
            if r2 != rv {
                let w = t.constant(w_rel.clone()).unwrap();
                let p = t.mul(r2, w).unwrap();
                let s2 = t.sum(p).unwrap();
                loss = t.add(loss, s2).unwrap();
            }
        }
        loss
    })
    .unwrap_or_else(|e| panic!("{kind:?}/{composition:?}: {e}"));
}

pub fn encoder_layers() {
    check_layer(EncoderKind::Mean, Composition::Subtraction, Activation::Tanh);
    check_layer(EncoderKind::Rgcn, Composition::Subtraction, Activation::Tanh);
    check_layer(EncoderKind::Compgcn, Composition::Subtraction, Activation::Tanh);
    check_layer(EncoderKind::Compgcn, Composition::Multiplication, Activation::Tanh);
}

/// Loss of a full model with soft gates; randomness is replayed from the
/// same seed on every evaluation.
fn check_model(config: RunConfig, data: TaskData, batch: Vec<Triple>, labels: Vec<f64>) {
    let model = Model::new(&config, &data).unwrap();
    let (checked, grads) = fd_check(&model.store, |tape| {
        let mut rng = ForwardRng::new(5);
        let out = model.forward(tape, &data, GateMode::Train, &mut rng).unwrap();
        match &data.dataset {
            Dataset::Nc(g) => {
                let z = model.logits(tape, &out).unwrap();
                ce_loss(tape, z, &g.labels, &g.train).unwrap()
            }
            Dataset::Kg(_) => {
                let s = model.scores(tape, &out, &batch).unwrap();
                bce_loss(tape, s, &labels).unwrap()
            }
        }
    })
    .unwrap();
    let w0 = model.gates.as_ref().unwrap().weights[0];
    assert!(grads.get(w0).data()[0].abs() > 0.0, "gate weight gets no gradient");
    assert!(checked > 50);
}

fn soft_sfgnn(task: Task, encoder: EncoderKind) -> RunConfig {
    let mut c = RunConfig {
        task,
        variant: Variant::Sfgnn,
        seed: 2,
        ..RunConfig::default()
    };
    c.model.encoder = encoder;
    c.model.layers = 2;
    c.model.dim = 4;
    c.sfm.hard = false;
    c.sfm.init_weight = 0.3;
    c
}

pub fn two_layer_sfgnn_link_prediction() {
    let mut r = RngStream::new(21, 0);
    let kg = random_kg(8, 2, 18, &mut r);
    let batch = vec![kg.train[0], kg.train[1], Triple::new(0, 1, 5), Triple::new(3, 0, 2)];
    let labels = vec![1.0, 1.0, 0.0, 0.0];
    let data = TaskData::new(Dataset::Kg(kg));
    for (encoder, scorer) in [
        (EncoderKind::Compgcn, ScorerKind::Distmult),
        (EncoderKind::Rgcn, ScorerKind::Transe),
    ] {
        let mut c = soft_sfgnn(Task::LinkPrediction, encoder);
        c.model.scorer = scorer;
        check_model(c, data.clone(), batch.clone(), labels.clone());
    }
}

pub fn two_layer_sfgnn_node_classification() {
    let mut r = RngStream::new(8, 0);
    let n = 9;
    let features = random_matrix(n, 3, &mut r);
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 8), (0, 4), (2, 7)];
    let splits: Vec<Option<Split>> = (0..n)
        .map(|i| Some(if i < 5 { Split::Train } else if i < 7 { Split::Valid } else { Split::Test }))
        .collect();
    let g = HomogeneousGraph::new(features, labels, 3, edges, &splits).unwrap();
    let data = TaskData::new(Dataset::Nc(g));
    let mut c = soft_sfgnn(Task::NodeClassification, EncoderKind::Mean);
    c.model.activation = Some(Activation::Tanh);
    check_model(c, data, Vec::new(), Vec::new());
}
