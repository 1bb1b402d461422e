//! Triple store for GraIL-style inductive splits: directed multigraph
//! with forward/inverse adjacency, per-node incident-relation token
//! sets, filtered negative sampling, and a binary graph cache.
//!
//! Incoming relations are encoded as `r + num_relations`, so a node's
//! neighbor token set distinguishes direction and the relation
//! embedding table has `2 * num_relations` rows.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed line, expected `head<TAB>relation<TAB>tail`")]
    MalformedLine { path: PathBuf, line: usize },
    #[error("{path}:{line}: unknown relation `{name}` (relation vocabulary is frozen)")]
    UnknownRelation {
        path: PathBuf,
        line: usize,
        name: String,
    },
    #[error("node {node} out of range, graph has {num_entities} entities")]
    NodeOutOfRange { node: usize, num_entities: usize },
    #[error("graph cache: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triple {
    pub head: usize,
    pub rel: usize,
    pub tail: usize,
}

/// String -> id dictionary with stable first-seen ordering.
#[derive(Debug, Clone, Default)]
pub struct IdDict {
    map: HashMap<String, usize>,
    names: Vec<String>,
    frozen: bool,
}

impl IdDict {
    pub fn new() -> Self {
        IdDict::default()
    }

    /// Id of `name`, inserting it unless the dictionary is frozen.
    pub fn intern(&mut self, name: &str) -> Option<usize> {
        if let Some(&id) = self.map.get(name) {
            return Some(id);
        }
        if self.frozen {
            return None;
        }
        let id = self.names.len();
        self.map.insert(name.to_string(), id);
        self.names.push(name.to_string());
        Some(id)
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.map.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }
}

/// Entity and relation dictionaries built during ingestion.
#[derive(Debug, Clone, Default)]
pub struct Dicts {
    pub entities: IdDict,
    pub relations: IdDict,
}

/// Parse a `head<TAB>relation<TAB>tail` file, extending the dictionaries.
/// Ids follow first-seen order, so ingestion is reproducible.
pub fn load_triples(path: &Path, dicts: &mut Dicts) -> Result<Vec<Triple>, KgError> {
    let file = File::open(path).map_err(|source| KgError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut triples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| KgError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (h, r, t) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(h), Some(r), Some(t), None) if !h.is_empty() && !r.is_empty() && !t.is_empty() => {
                (h, r, t)
            }
            _ => {
                return Err(KgError::MalformedLine {
                    path: path.to_path_buf(),
                    line: idx + 1,
                })
            }
        };
        let head = dicts.entities.intern(h).ok_or_else(|| KgError::Cache(
            format!("entity dictionary frozen, unknown `{h}` at {}:{}", path.display(), idx + 1),
        ))?;
        let rel = dicts
            .relations
            .intern(r)
            .ok_or_else(|| KgError::UnknownRelation {
                path: path.to_path_buf(),
                line: idx + 1,
                name: r.to_string(),
            })?;
        let tail = dicts.entities.intern(t).ok_or_else(|| KgError::Cache(
            format!("entity dictionary frozen, unknown `{t}` at {}:{}", path.display(), idx + 1),
        ))?;
        triples.push(Triple { head, rel, tail });
    }
    Ok(triples)
}

/// Immutable directed multigraph with inverse bookkeeping.
#[derive(Debug, Clone)]
pub struct KGraph {
    num_entities: usize,
    num_relations: usize,
    triples: Vec<Triple>,
    /// Per node: outgoing (relation, tail) pairs.
    out_adj: Vec<Vec<(usize, usize)>>,
    /// Per node: incoming (relation, head) pairs.
    in_adj: Vec<Vec<(usize, usize)>>,
    /// Per node: sorted set of directed relation tokens
    /// ({r for outgoing} + {r + num_relations for incoming}).
    neighbor_rels: Vec<Vec<usize>>,
    triple_set: HashSet<Triple>,
}

impl KGraph {
    pub fn from_triples(num_entities: usize, num_relations: usize, triples: Vec<Triple>) -> Self {
        let mut out_adj = vec![Vec::new(); num_entities];
        let mut in_adj = vec![Vec::new(); num_entities];
        let mut tokens: Vec<HashSet<usize>> = vec![HashSet::new(); num_entities];
        for t in &triples {
            out_adj[t.head].push((t.rel, t.tail));
            in_adj[t.tail].push((t.rel, t.head));
            tokens[t.head].insert(t.rel);
            tokens[t.tail].insert(t.rel + num_relations);
        }
        let neighbor_rels = tokens
            .into_iter()
            .map(|s| {
                let mut v: Vec<usize> = s.into_iter().collect();
                v.sort_unstable();
                v
            })
            .collect();
        let triple_set = triples.iter().copied().collect();
        KGraph {
            num_entities,
            num_relations,
            triples,
            out_adj,
            in_adj,
            neighbor_rels,
            triple_set,
        }
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn out_edges(&self, node: usize) -> &[(usize, usize)] {
        &self.out_adj[node]
    }

    pub fn in_edges(&self, node: usize) -> &[(usize, usize)] {
        &self.in_adj[node]
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triple_set.contains(t)
    }

    /// Undirected neighbors of `node`, with multiplicity.
    pub fn undirected_neighbors<'a>(&'a self, node: usize) -> impl Iterator<Item = usize> + 'a {
        self.out_adj[node]
            .iter()
            .map(|&(_, t)| t)
            .chain(self.in_adj[node].iter().map(|&(_, h)| h))
    }

    /// Complete set of directed relation tokens incident to `node` in
    /// the full graph: outgoing relations as-is, incoming offset by
    /// `num_relations`. Always computed here, never from a subgraph.
    pub fn neighboring_relations(&self, node: usize) -> Result<&[usize], KgError> {
        if node >= self.num_entities {
            return Err(KgError::NodeOutOfRange {
                node,
                num_entities: self.num_entities,
            });
        }
        Ok(&self.neighbor_rels[node])
    }

    /// Does `head` keep an outgoing edge under `rel` after removing
    /// every copy of (head, rel, excluded_tail)?
    pub fn has_other_out_edge(&self, head: usize, rel: usize, excluded_tail: usize) -> bool {
        self.out_adj[head]
            .iter()
            .any(|&(r, t)| r == rel && t != excluded_tail)
    }

    /// Does `tail` keep an incoming edge under `rel` after removing
    /// every copy of (excluded_head, rel, tail)?
    pub fn has_other_in_edge(&self, tail: usize, rel: usize, excluded_head: usize) -> bool {
        self.in_adj[tail]
            .iter()
            .any(|&(r, h)| r == rel && h != excluded_head)
    }
}

/// Exact counts of distinct relations, distinct nodes, and triples.
pub fn stats(g: &KGraph) -> (usize, usize, usize) {
    let mut rels = HashSet::new();
    let mut nodes = HashSet::new();
    for t in g.triples() {
        rels.insert(t.rel);
        nodes.insert(t.head);
        nodes.insert(t.tail);
    }
    (rels.len(), nodes.len(), g.triples().len())
}

/// Corrupt the head or tail of `t` uniformly. Resamples while the draw
/// is a known positive of `g` (or equals `t`), accepting after 100
/// attempts; the result always differs from `t` when the graph has at
/// least two entities.
pub fn negative_sample<R: Rng>(t: &Triple, g: &KGraph, rng: &mut R) -> Triple {
    let n = g.num_entities();
    if n < 2 {
        log::warn!("negative_sample on a graph with {n} entities, returning the input triple");
        return *t;
    }
    let mut fallback = None;
    for _ in 0..100 {
        let corrupt_head = rng.gen_bool(0.5);
        let replacement = rng.gen_range(0..n);
        let cand = if corrupt_head {
            Triple {
                head: replacement,
                ..*t
            }
        } else {
            Triple {
                tail: replacement,
                ..*t
            }
        };
        if cand == *t {
            continue;
        }
        if !g.contains(&cand) {
            return cand;
        }
        fallback = Some(cand);
    }
    if let Some(cand) = fallback {
        return cand;
    }
    // Everything drawn was the input itself; force a differing entity.
    loop {
        let corrupt_head = rng.gen_bool(0.5);
        let replacement = rng.gen_range(0..n);
        let cand = if corrupt_head {
            Triple {
                head: replacement,
                ..*t
            }
        } else {
            Triple {
                tail: replacement,
                ..*t
            }
        };
        if cand != *t {
            return cand;
        }
    }
}

/// One inductive benchmark version: the training graph plus a
/// test-time graph over a disjoint entity vocabulary.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train_graph: KGraph,
    pub test_graph: KGraph,
    /// Held-out positives scored against the training graph.
    pub valid_triples: Vec<Triple>,
    /// Held-out positives scored against the test graph.
    pub test_triples: Vec<Triple>,
    pub rel_names: Vec<String>,
    pub train_entity_names: Vec<String>,
    pub test_entity_names: Vec<String>,
}

/// Load `<root>/<name>` (train.txt, valid.txt) and `<root>/<name>_ind`
/// (train.txt as the disjoint test graph, test.txt as test positives).
///
/// The relation vocabulary freezes after the training file; the test
/// side gets a fresh entity dictionary. `merge_valid` folds valid.txt
/// triples into the training graph for message passing (off by
/// default: the training graph is train.txt alone).
pub fn load_dataset(root: &Path, name: &str, merge_valid: bool) -> Result<DatasetSplit, KgError> {
    let train_dir = root.join(name);
    let ind_dir = root.join(format!("{name}_ind"));

    let mut dicts = Dicts::default();
    let train_triples = load_triples(&train_dir.join("train.txt"), &mut dicts)?;
    dicts.relations.freeze();
    let valid_triples = load_triples(&train_dir.join("valid.txt"), &mut dicts)?;
    let mut graph_triples = train_triples;
    if merge_valid {
        graph_triples.extend_from_slice(&valid_triples);
    }
    let train_graph = KGraph::from_triples(
        dicts.entities.len(),
        dicts.relations.len(),
        graph_triples,
    );
    let rel_names = dicts.relations.names().to_vec();
    let train_entity_names = dicts.entities.names().to_vec();

    let mut test_dicts = Dicts {
        entities: IdDict::new(),
        relations: dicts.relations,
    };
    let test_graph_triples = load_triples(&ind_dir.join("train.txt"), &mut test_dicts)?;
    let test_triples = load_triples(&ind_dir.join("test.txt"), &mut test_dicts)?;
    let test_graph = KGraph::from_triples(
        test_dicts.entities.len(),
        test_dicts.relations.len(),
        test_graph_triples,
    );

    Ok(DatasetSplit {
        train_graph,
        test_graph,
        valid_triples,
        test_triples,
        rel_names,
        train_entity_names,
        test_entity_names: test_dicts.entities.names().to_vec(),
    })
}

const CACHE_MAGIC: &[u8; 8] = b"SNRIKG01";

/// Write a binary cache of a graph (layout in the repo README).
pub fn write_graph_cache(path: &Path, g: &KGraph) -> Result<(), KgError> {
    let io_err = |source| KgError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(io_err);
    write(CACHE_MAGIC)?;
    write(&(g.num_entities as u64).to_le_bytes())?;
    write(&(g.num_relations as u64).to_le_bytes())?;
    write(&(g.triples.len() as u64).to_le_bytes())?;
    for t in &g.triples {
        write(&(t.head as u64).to_le_bytes())?;
        write(&(t.rel as u64).to_le_bytes())?;
        write(&(t.tail as u64).to_le_bytes())?;
    }
    w.flush().map_err(io_err)
}

pub fn read_graph_cache(path: &Path) -> Result<KGraph, KgError> {
    let io_err = |source| KgError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut r = BufReader::new(File::open(path).map_err(io_err)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != CACHE_MAGIC {
        return Err(KgError::Cache(format!(
            "bad magic in {}, not a graph cache",
            path.display()
        )));
    }
    let read_u64 = move |r: &mut BufReader<File>| -> Result<u64, KgError> {
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf).map_err(|source| KgError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(u64::from_le_bytes(buf))
    };
    let num_entities = read_u64(&mut r)? as usize;
    let num_relations = read_u64(&mut r)? as usize;
    let n = read_u64(&mut r)? as usize;
    let mut triples = Vec::with_capacity(n);
    for _ in 0..n {
        triples.push(Triple {
            head: read_u64(&mut r)? as usize,
            rel: read_u64(&mut r)? as usize,
            tail: read_u64(&mut r)? as usize,
        });
    }
    Ok(KGraph::from_triples(num_entities, num_relations, triples))
}
