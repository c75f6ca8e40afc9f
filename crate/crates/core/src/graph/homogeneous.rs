use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{read_to_string, Direction, GraphError, MessageIndex};
use crate::tensor::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// Single-relation labeled graph for node classification.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneousGraph {
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// Undirected edges as `(min, max)` pairs, sorted and deduplicated.
    pub edges: Vec<(usize, usize)>,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl HomogeneousGraph {
    /// Validates the parts and normalizes the edge list.
    pub fn new(
        features: DenseMatrix,
        labels: Vec<usize>,
        num_classes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        splits: &[Option<Split>],
    ) -> Result<Self, GraphError> {
        let n = features.rows();
        if labels.len() != n || splits.len() != n {
            return Err(GraphError::InvalidParams(format!(
                "{} feature rows, {} labels, {} split entries",
                n,
                labels.len(),
                splits.len()
            )));
        }
        if !features.is_finite() {
            return Err(GraphError::InvalidParams("non-finite feature value".into()));
        }
        for (node, &label) in labels.iter().enumerate() {
            if label >= num_classes {
                return Err(GraphError::LabelOutOfRange {
                    node,
                    label,
                    classes: num_classes,
                });
            }
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            for x in [a, b] {
                if x >= n {
                    return Err(GraphError::OutOfRange {
                        what: "node id",
                        index: x,
                        limit: n,
                    });
                }
            }
            set.insert((a.min(b), a.max(b)));
        }
        let pick = |s: Split| -> Vec<usize> { (0..n).filter(|&i| splits[i] == Some(s)).collect() };
        let (train, valid, test) = (pick(Split::Train), pick(Split::Valid), pick(Split::Test));
        for (name, s) in [("train", &train), ("valid", &valid), ("test", &test)] {
            if s.is_empty() {
                return Err(GraphError::EmptySplit(name));
            }
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            edges: set.into_iter().collect(),
            train,
            valid,
            test,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn split_of(&self, node: usize) -> Option<Split> {
        if self.train.binary_search(&node).is_ok() {
            Some(Split::Train)
        } else if self.valid.binary_search(&node).is_ok() {
            Some(Split::Valid)
        } else if self.test.binary_search(&node).is_ok() {
            Some(Split::Test)
        } else {
            None
        }
    }

    /// One message per edge direction; a self-loop contributes one message.
    pub fn messages(&self) -> MessageIndex {
        let (mut src, mut dst) = (Vec::new(), Vec::new());
        for &(a, b) in &self.edges {
            src.push(a);
            dst.push(b);
            if a != b {
                src.push(b);
                dst.push(a);
            }
        }
        let m = src.len();
        MessageIndex {
            num_nodes: self.num_nodes(),
            src: Arc::from(src),
            dst: Arc::from(dst),
            rel: Arc::from(vec![0; m]),
            dir: Arc::from(vec![Direction::In; m]),
        }
    }

    /// Writes `nodes.tsv`, `edges.tsv` and `splits.tsv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), GraphError> {
        std::fs::create_dir_all(dir).map_err(|e| GraphError::io(dir, e))?;
        let mut nodes = String::new();
        for v in 0..self.num_nodes() {
            let feats: Vec<String> = self.features.row(v).iter().map(|x| format!("{x:?}")).collect();
            let _ = writeln!(nodes, "{v}\t{}\t{}", self.labels[v], feats.join(","));
        }
        let mut edges = String::new();
        for (a, b) in &self.edges {
            let _ = writeln!(edges, "{a}\t{b}");
        }
        let mut splits = String::new();
        for v in 0..self.num_nodes() {
            if let Some(s) = self.split_of(v) {
                let _ = writeln!(splits, "{v}\t{}", s.as_str());
            }
        }
        for (name, body) in [("nodes.tsv", nodes), ("edges.tsv", edges), ("splits.tsv", splits)] {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| GraphError::io(&path, e))?;
        }
        Ok(())
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn parse_usize(path: &Path, line: usize, field: &str, what: &str) -> Result<usize, GraphError> {
    field.trim().parse().map_err(|_| GraphError::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("invalid {what} `{field}`"),
    })
}

/// Loads a homogeneous graph from explicit files. `num_classes` bounds the
/// labels when given; otherwise it is one past the largest label.
pub fn load_homogeneous_files(
    nodes_path: &Path,
    edges_path: &Path,
    splits_path: &Path,
    num_classes: Option<usize>,
) -> Result<HomogeneousGraph, GraphError> {
    let parse_err = |path: &Path, line, message: String| GraphError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let text = read_to_string(nodes_path)?;
    let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    let mut dim = None;
    for (line, l) in data_lines(&text) {
        let parts: Vec<&str> = l.split('\t').collect();
        if parts.len() != 3 {
            return Err(parse_err(nodes_path, line, format!("expected 3 fields, got {}", parts.len())));
        }
        let id = parse_usize(nodes_path, line, parts[0], "node id")?;
        let label = parse_usize(nodes_path, line, parts[1], "label")?;
        let feats = parts[2]
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| parse_err(nodes_path, line, "invalid feature value".into()))?;
        match dim {
            None => dim = Some(feats.len()),
            Some(d) if d != feats.len() => {
                return Err(parse_err(
                    nodes_path,
                    line,
                    format!("row arity mismatch: {} features, expected {d}", feats.len()),
                ))
            }
            _ => {}
        }
        rows.push((id, label, feats));
    }
    let n = rows.len();
    let dim = dim.unwrap_or(0);
    let mut features = DenseMatrix::zeros(n, dim);
    let mut labels = vec![0; n];
    let mut seen = vec![false; n];
    for (id, label, feats) in rows {
        if id >= n || seen[id] {
            return Err(GraphError::OutOfRange {
                what: "node id",
                index: id,
                limit: n,
            });
        }
        seen[id] = true;
        labels[id] = label;
        features.row_mut(id).copy_from_slice(&feats);
    }

    let text = read_to_string(edges_path)?;
    let mut edges = Vec::new();
    for (line, l) in data_lines(&text) {
        let parts: Vec<&str> = l.split('\t').collect();
        if parts.len() != 2 {
            return Err(parse_err(edges_path, line, format!("expected 2 fields, got {}", parts.len())));
        }
        edges.push((
            parse_usize(edges_path, line, parts[0], "node id")?,
            parse_usize(edges_path, line, parts[1], "node id")?,
        ));
    }

    let text = read_to_string(splits_path)?;
    let mut splits = vec![None; n];
    for (line, l) in data_lines(&text) {
        let parts: Vec<&str> = l.split('\t').collect();
        if parts.len() != 2 {
            return Err(parse_err(splits_path, line, format!("expected 2 fields, got {}", parts.len())));
        }
        let id = parse_usize(splits_path, line, parts[0], "node id")?;
        if id >= n {
            return Err(GraphError::OutOfRange {
                what: "node id",
                index: id,
                limit: n,
            });
        }
        splits[id] = Some(match parts[1].trim() {
            "train" => Split::Train,
            "valid" => Split::Valid,
            "test" => Split::Test,
            other => return Err(parse_err(splits_path, line, format!("unknown split `{other}`"))),
        });
    }

    let num_classes = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    HomogeneousGraph::new(features, labels, num_classes, edges, &splits)
}

/// Loads `nodes.tsv`, `edges.tsv` and `splits.tsv` from `dir`. The class
/// count comes from `meta.json` (`params.classes`) when present.
pub fn load_homogeneous(dir: impl AsRef<Path>) -> Result<HomogeneousGraph, GraphError> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let classes = if meta_path.exists() {
        let text = read_to_string(&meta_path)?;
        let meta: serde_json::Value = serde_json::from_str(&text).map_err(|e| GraphError::Parse {
            path: meta_path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        meta.pointer("/params/classes").and_then(|v| v.as_u64()).map(|c| c as usize)
    } else {
        None
    };
    load_homogeneous_files(
        &dir.join("nodes.tsv"),
        &dir.join("edges.tsv"),
        &dir.join("splits.tsv"),
        classes,
    )
}
