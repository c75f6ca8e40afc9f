use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use super::{read_to_string, Direction, FilterIndex, GraphError, MessageIndex, Triple};

/// Insertion-ordered string vocabulary.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names(names: impl IntoIterator<Item = String>) -> Self {
        let mut v = Self::new();
        for n in names {
            v.intern(&n);
        }
        v
    }

    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), self.names.len() - 1);
        self.names.len() - 1
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// One entry of `N_v`: neighbor `node` connected by `relation`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Neighbor {
    pub node: usize,
    pub relation: usize,
    pub direction: Direction,
}

/// Entity/relation vocabularies, triple splits and the indexes derived from
/// them. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    pub entities: Vocab,
    pub relations: Vocab,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    neighbors: Vec<Vec<Neighbor>>,
    related: Vec<Vec<usize>>,
    filter: FilterIndex,
    messages: MessageIndex,
}

impl KnowledgeGraph {
    /// Validates the splits and builds every index. Vocabularies must cover
    /// all triple components.
    pub fn new(
        entities: Vocab,
        relations: Vocab,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self, GraphError> {
        let (ne, nr) = (entities.len(), relations.len());
        for t in train.iter().chain(&valid).chain(&test) {
            for (what, index, limit) in [("entity", t.head, ne), ("relation", t.relation, nr), ("entity", t.tail, ne)] {
                if index >= limit {
                    return Err(GraphError::OutOfRange { what, index, limit });
                }
            }
        }
        let sets: Vec<HashSet<Triple>> = [&train, &valid, &test]
            .iter()
            .map(|s| s.iter().copied().collect())
            .collect();
        for (i, a) in sets.iter().enumerate() {
            for b in &sets[i + 1..] {
                if let Some(t) = a.iter().filter(|t| b.contains(t)).min() {
                    return Err(GraphError::SplitOverlap(*t));
                }
            }
        }

        let mut neighbors = vec![Vec::new(); ne];
        let mut related = vec![Vec::new(); ne];
        let (mut src, mut dst, mut rel, mut dir) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (i, t) in train.iter().enumerate() {
            neighbors[t.tail].push(Neighbor {
                node: t.head,
                relation: t.relation,
                direction: Direction::In,
            });
            neighbors[t.head].push(Neighbor {
                node: t.tail,
                relation: t.relation,
                direction: Direction::Out,
            });
            related[t.head].push(i);
            if t.tail != t.head {
                related[t.tail].push(i);
            }
            src.extend([t.head, t.tail]);
            dst.extend([t.tail, t.head]);
            rel.extend([t.relation, t.relation]);
            dir.extend([Direction::In, Direction::Out]);
        }
        let filter = FilterIndex::build(train.iter().chain(&valid).chain(&test));
        let messages = MessageIndex {
            num_nodes: ne,
            src: Arc::from(src),
            dst: Arc::from(dst),
            rel: Arc::from(rel),
            dir: Arc::from(dir),
        };
        Ok(Self {
            entities,
            relations,
            train,
            valid,
            test,
            neighbors,
            related,
            filter,
            messages,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    /// `N_v`: train-edge neighbors of `v` in both directions.
    pub fn neighbors(&self, v: usize) -> &[Neighbor] {
        &self.neighbors[v]
    }

    /// `ℰ_x`: indexes into `train` of triples with `x` as head or tail.
    pub fn related(&self, x: usize) -> &[usize] {
        &self.related[x]
    }

    pub fn filter(&self) -> &FilterIndex {
        &self.filter
    }

    pub fn messages(&self) -> &MessageIndex {
        &self.messages
    }

    /// Writes `train.txt`, `valid.txt` and `test.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), GraphError> {
        std::fs::create_dir_all(dir).map_err(|e| GraphError::io(dir, e))?;
        for (name, split) in [("train.txt", &self.train), ("valid.txt", &self.valid), ("test.txt", &self.test)] {
            let mut out = String::new();
            for t in split {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}",
                    self.entities.name(t.head),
                    self.relations.name(t.relation),
                    self.entities.name(t.tail)
                );
            }
            let path = dir.join(name);
            std::fs::write(&path, out).map_err(|e| GraphError::io(&path, e))?;
        }
        Ok(())
    }
}

fn parse_triples(path: &Path, entities: &mut Vocab, relations: &mut Vocab) -> Result<Vec<Triple>, GraphError> {
    let text = read_to_string(path)?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 || parts.iter().any(|p| p.is_empty()) {
            return Err(GraphError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected `head<TAB>relation<TAB>tail`, got {} field(s)", parts.len()),
            });
        }
        let head = entities.intern(parts[0]);
        let relation = relations.intern(parts[1]);
        let tail = entities.intern(parts[2]);
        out.push(Triple { head, relation, tail });
    }
    Ok(out)
}

/// Loads `train.txt`, `valid.txt` and `test.txt` from `dir`. Vocabularies
/// are the union of all splits in first-appearance order.
pub fn load_kg(dir: impl AsRef<Path>) -> Result<KnowledgeGraph, GraphError> {
    let dir = dir.as_ref();
    let mut entities = Vocab::new();
    let mut relations = Vocab::new();
    let train = parse_triples(&dir.join("train.txt"), &mut entities, &mut relations)?;
    let valid = parse_triples(&dir.join("valid.txt"), &mut entities, &mut relations)?;
    let test = parse_triples(&dir.join("test.txt"), &mut entities, &mut relations)?;
    KnowledgeGraph::new(entities, relations, train, valid, test)
}
