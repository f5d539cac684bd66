//! Multi-relational directed graph storage: interned vocabulary, per-edge
//! records with training flags and provenance, and a CSR index over each
//! node's incoming edges (the message-passing neighborhood).
//!
//! Graphs are built through [`GraphBuilder`] and are immutable after
//! indexing, apart from [`KnowledgeGraph::mark_adjacency_only`] which only
//! flips training flags and never touches the index.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

pub type EntityId = usize;
pub type RelationId = usize;
pub type EdgeId = usize;

/// Bijective mapping between names and dense ids for entities and relations.
/// Ids are assigned contiguously from 0 in first-seen order.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    entity_names: Vec<String>,
    entity_ids: HashMap<String, EntityId>,
    relation_names: Vec<String>,
    relation_ids: HashMap<String, RelationId>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern_entity(&mut self, name: &str) -> EntityId {
        if let Some(&id) = self.entity_ids.get(name) {
            return id;
        }
        let id = self.entity_names.len();
        self.entity_names.push(name.to_string());
        self.entity_ids.insert(name.to_string(), id);
        id
    }

    pub fn intern_relation(&mut self, name: &str) -> RelationId {
        if let Some(&id) = self.relation_ids.get(name) {
            return id;
        }
        let id = self.relation_names.len();
        self.relation_names.push(name.to_string());
        self.relation_ids.insert(name.to_string(), id);
        id
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entity_ids.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relation_ids.get(name).copied()
    }

    pub fn entity_name(&self, id: EntityId) -> Option<&str> {
        self.entity_names.get(id).map(|s| s.as_str())
    }

    pub fn relation_name(&self, id: RelationId) -> Option<&str> {
        self.relation_names.get(id).map(|s| s.as_str())
    }

    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }
}

/// A (subject, relation, object) fact with interned ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
}

impl Triple {
    pub fn new(subject: EntityId, relation: RelationId, object: EntityId) -> Self {
        Triple {
            subject,
            relation,
            object,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// Message direction of an edge record relative to its stored triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Message flows subject -> object under the original relation.
    Forward,
    /// Synthetic mirror: message flows object -> subject under the
    /// relation's inverse copy (relation id + |R|).
    Inverse,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Inverse => "inverse",
        }
    }
}

/// One adjacency entry. Inverse records mirror a forward record with the
/// message direction swapped; both carry their own attention scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRecord {
    pub id: EdgeId,
    /// Original triple, always in forward orientation.
    pub triple: Triple,
    pub direction: Direction,
    /// Eligible as a positive training example.
    pub train_target: bool,
    /// Present in message passing but excluded from the positive pool.
    pub adjacency_only: bool,
    pub provenance: Option<String>,
}

impl EdgeRecord {
    /// Node the message originates from.
    pub fn source(&self) -> EntityId {
        match self.direction {
            Direction::Forward => self.triple.subject,
            Direction::Inverse => self.triple.object,
        }
    }

    /// Node the message is delivered to.
    pub fn dest(&self) -> EntityId {
        match self.direction {
            Direction::Forward => self.triple.object,
            Direction::Inverse => self.triple.subject,
        }
    }

    /// Relation id in the encoder space: forward edges keep the original id,
    /// inverse copies are shifted by the number of relations.
    pub fn encoder_relation(&self, num_relations: usize) -> usize {
        match self.direction {
            Direction::Forward => self.triple.relation,
            Direction::Inverse => self.triple.relation + num_relations,
        }
    }
}

/// Per-file load statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub lines: usize,
    pub triples: usize,
    pub duplicates: usize,
}

#[derive(Debug, Clone)]
struct PendingEdge {
    triple: Triple,
    adjacency_only: bool,
    provenance: Option<String>,
}

/// Accumulates triples across files and splits, then freezes them into an
/// indexed [`KnowledgeGraph`].
#[derive(Debug, Clone, Default)]
pub struct GraphBuilder {
    vocab: Vocabulary,
    train: Vec<PendingEdge>,
    train_seen: HashSet<Triple>,
    valid: Vec<Triple>,
    valid_seen: HashSet<Triple>,
    test: Vec<Triple>,
    test_seen: HashSet<Triple>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts from an existing vocabulary so that derived graphs keep the
    /// same entity and relation ids.
    pub fn with_vocab(vocab: Vocabulary) -> Self {
        GraphBuilder {
            vocab,
            ..Self::default()
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub(crate) fn vocab_mut(&mut self) -> &mut Vocabulary {
        &mut self.vocab
    }

    /// Loads a tab-separated `head<TAB>relation<TAB>tail` file into the given
    /// split. Duplicate triples within a split collapse to one and are
    /// counted in the report.
    pub fn load_triples(&mut self, path: &Path, split: Split) -> Result<LoadReport> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        self.read_triples(BufReader::new(file), split, &path.display().to_string())
    }

    /// Same as [`load_triples`](Self::load_triples) but from any reader;
    /// `origin` labels parse errors.
    pub fn read_triples<R: BufRead>(
        &mut self,
        reader: R,
        split: Split,
        origin: &str,
    ) -> Result<LoadReport> {
        let mut report = LoadReport::default();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::Io {
                path: origin.to_string(),
                source: e,
            })?;
            if line.is_empty() {
                continue;
            }
            report.lines += 1;
            let mut fields = line.split('\t');
            let (head, rel, tail) = match (fields.next(), fields.next(), fields.next()) {
                (Some(h), Some(r), Some(t)) if fields.next().is_none() => (h, r, t),
                _ => {
                    return Err(Error::Parse {
                        path: origin.to_string(),
                        line: idx + 1,
                        message: format!(
                            "expected 3 tab-separated fields, got {}",
                            line.split('\t').count()
                        ),
                    })
                }
            };
            if self.add_named(head, rel, tail, split) {
                report.triples += 1;
            } else {
                report.duplicates += 1;
            }
        }
        Ok(report)
    }

    /// Interns names and records the triple. Returns false for a duplicate.
    pub fn add_named(&mut self, head: &str, relation: &str, tail: &str, split: Split) -> bool {
        let s = self.vocab.intern_entity(head);
        let r = self.vocab.intern_relation(relation);
        let o = self.vocab.intern_entity(tail);
        self.add_triple(Triple::new(s, r, o), split)
    }

    pub fn add_triple(&mut self, triple: Triple, split: Split) -> bool {
        self.add_train_edge(triple, split, false, None)
    }

    /// Records a train-split triple with explicit flags/provenance, or a
    /// plain valid/test triple (flags apply to the train split only).
    pub fn add_train_edge(
        &mut self,
        triple: Triple,
        split: Split,
        adjacency_only: bool,
        provenance: Option<&str>,
    ) -> bool {
        match split {
            Split::Train => {
                if !self.train_seen.insert(triple) {
                    return false;
                }
                self.train.push(PendingEdge {
                    triple,
                    adjacency_only,
                    provenance: provenance.map(str::to_string),
                });
                true
            }
            Split::Valid => self.valid_seen.insert(triple) && {
                self.valid.push(triple);
                true
            },
            Split::Test => self.test_seen.insert(triple) && {
                self.test.push(triple);
                true
            },
        }
    }

    /// Freezes the builder into an indexed graph. With `add_inverse`, every
    /// forward edge also yields an inverse record under the relation's
    /// shifted id, exactly doubling the record count.
    pub fn build(self, add_inverse: bool) -> KnowledgeGraph {
        let n_forward = self.train.len();
        let mut edges = Vec::with_capacity(if add_inverse { 2 * n_forward } else { n_forward });
        for (i, pe) in self.train.iter().enumerate() {
            edges.push(EdgeRecord {
                id: i,
                triple: pe.triple,
                direction: Direction::Forward,
                train_target: !pe.adjacency_only,
                adjacency_only: pe.adjacency_only,
                provenance: pe.provenance.clone(),
            });
        }
        if add_inverse {
            for (i, pe) in self.train.iter().enumerate() {
                edges.push(EdgeRecord {
                    id: n_forward + i,
                    // Inverse copies are never positive examples themselves;
                    // the decoder scores original-orientation triples only.
                    triple: pe.triple,
                    direction: Direction::Inverse,
                    train_target: false,
                    adjacency_only: pe.adjacency_only,
                    provenance: pe.provenance.clone(),
                });
            }
        }
        let train = self.train.iter().map(|p| p.triple).collect();
        let mut kg = KnowledgeGraph {
            vocab: self.vocab,
            edges,
            n_forward,
            add_inverse,
            in_offsets: Vec::new(),
            in_edges: Vec::new(),
            train,
            valid: self.valid,
            test: self.test,
        };
        kg.build_index();
        kg
    }
}

/// Indexed multi-relational graph: vocabulary, edge records, CSR incoming
/// index, and split assignments.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    vocab: Vocabulary,
    edges: Vec<EdgeRecord>,
    n_forward: usize,
    add_inverse: bool,
    // CSR over destination node: incoming edge ids for node i live at
    // in_edges[in_offsets[i]..in_offsets[i + 1]], ascending by edge id.
    in_offsets: Vec<usize>,
    in_edges: Vec<EdgeId>,
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
}

impl KnowledgeGraph {
    fn build_index(&mut self) {
        let n = self.vocab.num_entities();
        let mut counts = vec![0usize; n + 1];
        for rec in &self.edges {
            counts[rec.dest() + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut in_edges = vec![0; self.edges.len()];
        for rec in &self.edges {
            let d = rec.dest();
            in_edges[fill[d]] = rec.id;
            fill[d] += 1;
        }
        self.in_offsets = counts;
        self.in_edges = in_edges;
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn num_entities(&self) -> usize {
        self.vocab.num_entities()
    }

    pub fn num_relations(&self) -> usize {
        self.vocab.num_relations()
    }

    /// Size of the relation space the encoder sees (doubled when inverse
    /// augmentation is on).
    pub fn num_encoder_relations(&self) -> usize {
        if self.add_inverse {
            2 * self.vocab.num_relations()
        } else {
            self.vocab.num_relations()
        }
    }

    pub fn add_inverse(&self) -> bool {
        self.add_inverse
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_forward_edges(&self) -> usize {
        self.n_forward
    }

    pub fn edges(&self) -> &[EdgeRecord] {
        &self.edges
    }

    pub fn forward_edges(&self) -> &[EdgeRecord] {
        &self.edges[..self.n_forward]
    }

    pub fn edge(&self, id: EdgeId) -> Option<&EdgeRecord> {
        self.edges.get(id)
    }

    /// Id of the inverse copy of a forward edge, when inverse augmentation
    /// is on.
    pub fn inverse_id(&self, forward: EdgeId) -> Option<EdgeId> {
        if self.add_inverse && forward < self.n_forward {
            Some(forward + self.n_forward)
        } else {
            None
        }
    }

    /// Incoming edge ids of a node, ascending.
    pub fn incoming(&self, node: EntityId) -> &[EdgeId] {
        &self.in_edges[self.in_offsets[node]..self.in_offsets[node + 1]]
    }

    pub fn in_degree(&self, node: EntityId) -> usize {
        self.in_offsets[node + 1] - self.in_offsets[node]
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// Forward edges eligible as positive training examples.
    pub fn positive_edges(&self) -> impl Iterator<Item = &EdgeRecord> {
        self.forward_edges().iter().filter(|e| e.train_target)
    }

    pub fn num_positive_edges(&self) -> usize {
        self.positive_edges().count()
    }

    /// Flags the given forward edges (and their inverse copies) as
    /// adjacency-only: kept in the incoming index, dropped from the
    /// positive pool.
    pub fn mark_adjacency_only(&mut self, ids: &[EdgeId]) -> Result<()> {
        for &id in ids {
            if id >= self.n_forward {
                return Err(Error::UnknownEdge(id));
            }
        }
        for &id in ids {
            self.edges[id].train_target = false;
            self.edges[id].adjacency_only = true;
            if let Some(inv) = self.inverse_id(id) {
                self.edges[inv].train_target = false;
                self.edges[inv].adjacency_only = true;
            }
        }
        Ok(())
    }

    /// All triples across train/valid/test; the filter set for ranking
    /// evaluation.
    pub fn known_triples(&self) -> HashSet<Triple> {
        let mut known =
            HashSet::with_capacity(self.train.len() + self.valid.len() + self.test.len());
        known.extend(self.train.iter().copied());
        known.extend(self.valid.iter().copied());
        known.extend(self.test.iter().copied());
        known
    }

    /// Map from forward triple to its edge id.
    pub fn forward_edge_ids(&self) -> HashMap<Triple, EdgeId> {
        self.forward_edges()
            .iter()
            .map(|e| (e.triple, e.id))
            .collect()
    }
}
