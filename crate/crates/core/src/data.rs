//! Triple files, id dictionaries, splits and the filter index.
//!
//! A triple file is UTF-8 text with one `head<TAB>relation<TAB>tail` per
//! line, no header, LF or CRLF line endings.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer-encoded `(head, relation, tail)` fact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub const fn new(head: usize, relation: usize, tail: usize) -> Self {
        Triple {
            head,
            relation,
            tail,
        }
    }
}

/// Bidirectional label ↔ dense id map, ids assigned in first-seen order.
#[derive(Debug, Clone, Default)]
pub struct Dictionary {
    labels: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Dictionary {
    pub fn intern(&mut self, label: &str) -> usize {
        if let Some(&id) = self.ids.get(label) {
            return id;
        }
        let id = self.labels.len();
        self.labels.push(label.to_owned());
        self.ids.insert(label.to_owned(), id);
        id
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.ids.get(label).copied()
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

/// A link-prediction query with one side left open.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Query {
    /// `(?, relation, tail)`
    Head { relation: usize, tail: usize },
    /// `(head, relation, ?)`
    Tail { head: usize, relation: usize },
}

/// Known true triples, keyed for both query directions.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    heads: HashMap<(usize, usize), Vec<usize>>,
    tails: HashMap<(usize, usize), Vec<usize>>,
    all: HashSet<Triple>,
}

impl FilterIndex {
    pub fn from_triples<'a>(triples: impl IntoIterator<Item = &'a Triple>) -> Self {
        let mut idx = FilterIndex::default();
        for &t in triples {
            if idx.all.insert(t) {
                idx.heads.entry((t.relation, t.tail)).or_default().push(t.head);
                idx.tails.entry((t.head, t.relation)).or_default().push(t.tail);
            }
        }
        for v in idx.heads.values_mut().chain(idx.tails.values_mut()) {
            v.sort_unstable();
        }
        idx
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.all.contains(t)
    }

    pub fn len(&self) -> usize {
        self.all.len()
    }

    pub fn is_empty(&self) -> bool {
        self.all.is_empty()
    }

    /// Known heads `h` with `(h, relation, tail)` in the index, sorted.
    pub fn heads(&self, relation: usize, tail: usize) -> &[usize] {
        self.heads.get(&(relation, tail)).map_or(&[], Vec::as_slice)
    }

    /// Known tails `t` with `(head, relation, t)` in the index, sorted.
    pub fn tails(&self, head: usize, relation: usize) -> &[usize] {
        self.tails.get(&(head, relation)).map_or(&[], Vec::as_slice)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_entities: usize,
    pub n_relations: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
}

impl DatasetStats {
    pub fn as_array(&self) -> [usize; 5] {
        [
            self.n_entities,
            self.n_relations,
            self.n_train,
            self.n_valid,
            self.n_test,
        ]
    }
}

/// Entity/relation dictionaries, the three splits and the filter index.
/// Immutable after construction.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    pub entities: Dictionary,
    pub relations: Dictionary,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    filter: FilterIndex,
    train_filter: FilterIndex,
    warnings: Vec<String>,
}

impl KnowledgeGraph {
    /// Builds a graph from already-encoded triples. Dictionaries get the
    /// synthetic labels `e<id>` / `r<id>`.
    pub fn from_triples(
        n_entities: usize,
        n_relations: usize,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        let mut entities = Dictionary::default();
        let mut relations = Dictionary::default();
        for e in 0..n_entities {
            entities.intern(&format!("e{e}"));
        }
        for r in 0..n_relations {
            relations.intern(&format!("r{r}"));
        }
        for t in train.iter().chain(&valid).chain(&test) {
            check_triple(t, n_entities, n_relations)?;
        }
        Ok(Self::assemble(entities, relations, train, valid, test, Vec::new()))
    }

    fn assemble(
        entities: Dictionary,
        relations: Dictionary,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
        warnings: Vec<String>,
    ) -> Self {
        let filter = FilterIndex::from_triples(train.iter().chain(&valid).chain(&test));
        let train_filter = FilterIndex::from_triples(&train);
        KnowledgeGraph {
            entities,
            relations,
            train,
            valid,
            test,
            filter,
            train_filter,
            warnings,
        }
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// Index over train ∪ valid ∪ test.
    pub fn filter_index(&self) -> &FilterIndex {
        &self.filter
    }

    /// Index over the training split only.
    pub fn train_index(&self) -> &FilterIndex {
        &self.train_filter
    }

    /// Load-time warnings, e.g. entities that never occur in training.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            n_entities: self.n_entities(),
            n_relations: self.n_relations(),
            n_train: self.train.len(),
            n_valid: self.valid.len(),
            n_test: self.test.len(),
        }
    }

    pub fn check_triple(&self, t: &Triple) -> Result<()> {
        check_triple(t, self.n_entities(), self.n_relations())
    }

    /// Entities that complete `query` into a known triple, minus `gold`.
    pub fn filtered_candidates(&self, query: Query, gold: usize) -> Result<Vec<usize>> {
        let (ne, nr) = (self.n_entities(), self.n_relations());
        let known = match query {
            Query::Head { relation, tail } => {
                check_triple(&Triple::new(gold, relation, tail), ne, nr)?;
                self.filter.heads(relation, tail)
            }
            Query::Tail { head, relation } => {
                check_triple(&Triple::new(head, relation, gold), ne, nr)?;
                self.filter.tails(head, relation)
            }
        };
        Ok(known.iter().copied().filter(|&e| e != gold).collect())
    }
}

fn check_triple(t: &Triple, n_entities: usize, n_relations: usize) -> Result<()> {
    for (what, id, size) in [
        ("entity", t.head, n_entities),
        ("relation", t.relation, n_relations),
        ("entity", t.tail, n_entities),
    ] {
        if id >= size {
            return Err(Error::OutOfRange { what, id, size });
        }
    }
    Ok(())
}

pub fn stats(kg: &KnowledgeGraph) -> DatasetStats {
    kg.stats()
}

type RawTriple = (String, String, String);

fn read_triples(path: &Path) -> Result<Vec<RawTriple>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.split('\n').enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        if fields.len() != 3 {
            return Err(parse_err(format!(
                "expected 3 tab-separated fields, found {}",
                fields.len()
            )));
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(parse_err("empty field".into()));
        }
        out.push((fields[0].to_owned(), fields[1].to_owned(), fields[2].to_owned()));
    }
    Ok(out)
}

/// Loads the three split files. Dictionaries are built over the union in
/// train → valid → test first-seen order; split order follows the files.
pub fn load_knowledge_graph(
    train_path: impl AsRef<Path>,
    valid_path: impl AsRef<Path>,
    test_path: impl AsRef<Path>,
) -> Result<KnowledgeGraph> {
    let train_path = train_path.as_ref();
    let raw_train = read_triples(train_path)?;
    if raw_train.is_empty() {
        return Err(Error::EmptyTrain(train_path.to_path_buf()));
    }
    let raw_valid = read_triples(valid_path.as_ref())?;
    let raw_test = read_triples(test_path.as_ref())?;

    let mut entities = Dictionary::default();
    let mut relations = Dictionary::default();
    let encode = |raw: &[RawTriple], entities: &mut Dictionary, relations: &mut Dictionary| -> Vec<Triple> {
        raw.iter()
            .map(|(h, r, t)| {
                let head = entities.intern(h);
                let relation = relations.intern(r);
                let tail = entities.intern(t);
                Triple::new(head, relation, tail)
            })
            .collect()
    };
    let train = encode(&raw_train, &mut entities, &mut relations);
    let (n_train_entities, n_train_relations) = (entities.len(), relations.len());
    let valid = encode(&raw_valid, &mut entities, &mut relations);
    let test = encode(&raw_test, &mut entities, &mut relations);

    let mut warnings = Vec::new();
    let unseen_entities = entities.len() - n_train_entities;
    if unseen_entities > 0 {
        warnings.push(format!(
            "{unseen_entities} entities appear only in validation/test splits"
        ));
    }
    let unseen_relations = relations.len() - n_train_relations;
    if unseen_relations > 0 {
        warnings.push(format!(
            "{unseen_relations} relations appear only in validation/test splits"
        ));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(KnowledgeGraph::assemble(
        entities, relations, train, valid, test, warnings,
    ))
}
