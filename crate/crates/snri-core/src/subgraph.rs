//! Enclosing-subgraph extraction around a target pair.
//!
//! The subgraph is induced on the intersection of the k-hop undirected
//! neighborhoods of the two target nodes (the GraIL convention; the
//! directed multigraph is treated as undirected for reachability).
//! Nodes whose in-subgraph distance to either target exceeds k are
//! pruned, then nodes left with degree zero are dropped, and distances
//! are recomputed within what remains, clamped to k+1. The target pair
//! is always kept, even when disconnected.

use std::collections::{HashMap, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::kg::{KGraph, Triple};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subgraph {
    /// Local id -> global entity id, ascending.
    pub nodes: Vec<usize>,
    /// Directed edges in local ids, in canonical (head, rel, tail) order.
    pub edges: Vec<Triple>,
    pub head_local: usize,
    pub tail_local: usize,
    pub hops: usize,
    /// Shortest distance to the target head within the pruned subgraph,
    /// clamped to hops + 1. Same for the tail.
    pub dist_to_head: Vec<usize>,
    pub dist_to_tail: Vec<usize>,
    /// Per node: complete directed relation tokens, copied from the
    /// full graph (never recomputed on the subgraph).
    pub neighbor_rels: Vec<Vec<usize>>,
}

impl Subgraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn global_id(&self, local: usize) -> usize {
        self.nodes[local]
    }

    /// Reorder local ids so nodes ascend by global id and edges sort by
    /// (head, rel, tail). Encoders call this so that any relabeling of
    /// local ids produces bit-identical results.
    pub fn canonicalize(&self) -> Subgraph {
        let mut order: Vec<usize> = (0..self.nodes.len()).collect();
        order.sort_by_key(|&l| self.nodes[l]);
        let mut remap = vec![0usize; self.nodes.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = new;
        }
        let nodes = order.iter().map(|&l| self.nodes[l]).collect();
        let mut edges: Vec<Triple> = self
            .edges
            .iter()
            .map(|e| Triple {
                head: remap[e.head],
                rel: e.rel,
                tail: remap[e.tail],
            })
            .collect();
        edges.sort_unstable_by_key(|e| (e.head, e.rel, e.tail));
        Subgraph {
            nodes,
            edges,
            head_local: remap[self.head_local],
            tail_local: remap[self.tail_local],
            hops: self.hops,
            dist_to_head: order.iter().map(|&l| self.dist_to_head[l]).collect(),
            dist_to_tail: order.iter().map(|&l| self.dist_to_tail[l]).collect(),
            neighbor_rels: order.iter().map(|&l| self.neighbor_rels[l].clone()).collect(),
        }
    }

    /// Edge-list text dump with label annotations, for debugging and
    /// case studies.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# nodes={} edges={} hops={} target=({},{})\n",
            self.nodes.len(),
            self.edges.len(),
            self.hops,
            self.nodes[self.head_local],
            self.nodes[self.tail_local],
        ));
        for (l, &g) in self.nodes.iter().enumerate() {
            out.push_str(&format!(
                "node {g} d_u={} d_v={}\n",
                self.dist_to_head[l], self.dist_to_tail[l]
            ));
        }
        for e in &self.edges {
            out.push_str(&format!(
                "edge {} {} {}\n",
                self.nodes[e.head], e.rel, self.nodes[e.tail]
            ));
        }
        out
    }
}

/// Undirected BFS distances from `node`, up to `limit` hops. Includes
/// the start node at distance 0.
pub fn k_hop_neighbors(g: &KGraph, node: usize, limit: usize) -> HashMap<usize, usize> {
    assert!(node < g.num_entities(), "node {node} out of range");
    let mut dist = HashMap::new();
    dist.insert(node, 0usize);
    let mut queue = VecDeque::new();
    queue.push_back(node);
    while let Some(cur) = queue.pop_front() {
        let d = dist[&cur];
        if d == limit {
            continue;
        }
        for nb in g.undirected_neighbors(cur) {
            dist.entry(nb).or_insert_with(|| {
                queue.push_back(nb);
                d + 1
            });
        }
    }
    dist
}

/// BFS within a local edge list (undirected), `None` = unreachable.
fn local_distances(n: usize, edges: &[Triple], start: usize) -> Vec<Option<usize>> {
    let mut adj = vec![Vec::new(); n];
    for e in edges {
        adj[e.head].push(e.tail);
        adj[e.tail].push(e.head);
    }
    let mut dist = vec![None; n];
    dist[start] = Some(0);
    let mut queue = VecDeque::new();
    queue.push_back(start);
    while let Some(cur) = queue.pop_front() {
        let d = dist[cur].unwrap();
        for &nb in &adj[cur] {
            if dist[nb].is_none() {
                dist[nb] = Some(d + 1);
                queue.push_back(nb);
            }
        }
    }
    dist
}

fn induced_edges(
    g: &KGraph,
    locals: &HashMap<usize, usize>,
    drop_target: Option<(usize, usize, usize)>,
) -> Vec<Triple> {
    let mut edges = Vec::new();
    let mut globals: Vec<usize> = locals.keys().copied().collect();
    globals.sort_unstable();
    for &gh in &globals {
        for &(rel, gt) in g.out_edges(gh) {
            if let Some(&lt) = locals.get(&gt) {
                if drop_target == Some((gh, rel, gt)) {
                    continue;
                }
                edges.push(Triple {
                    head: locals[&gh],
                    rel,
                    tail: lt,
                });
            }
        }
    }
    edges.sort_unstable_by_key(|e| (e.head, e.rel, e.tail));
    edges
}

/// Extract the enclosing subgraph around (head, tail) with `hops`-hop
/// neighborhoods. `drop_target` removes every copy of the edge
/// (head, r, tail) so the scored fact never leaks into its own subgraph.
pub fn extract_enclosing(
    g: &KGraph,
    head: usize,
    tail: usize,
    hops: usize,
    drop_target: Option<usize>,
) -> Subgraph {
    extract_enclosing_capped(g, head, tail, hops, drop_target, None, 0)
}

/// [`extract_enclosing`] with an optional node-count cap: when the
/// pruned subgraph exceeds `max_nodes`, non-target nodes are dropped
/// uniformly with the given seed before final labeling.
pub fn extract_enclosing_capped(
    g: &KGraph,
    head: usize,
    tail: usize,
    hops: usize,
    drop_target: Option<usize>,
    max_nodes: Option<usize>,
    cap_seed: u64,
) -> Subgraph {
    assert!(hops >= 1, "hops must be at least 1");
    if head == tail {
        log::warn!("extracting subgraph for a self-pair ({head}, {head})");
        return finish(g, vec![head], Vec::new(), head, tail, hops);
    }

    let from_head = k_hop_neighbors(g, head, hops);
    let from_tail = k_hop_neighbors(g, tail, hops);
    let mut keep: Vec<usize> = from_head
        .keys()
        .filter(|n| from_tail.contains_key(n))
        .copied()
        .collect();
    for t in [head, tail] {
        if !keep.contains(&t) {
            keep.push(t);
        }
    }
    keep.sort_unstable();

    let drop = drop_target.map(|r| (head, r, tail));
    let mut locals: HashMap<usize, usize> =
        keep.iter().enumerate().map(|(l, &n)| (n, l)).collect();
    let mut edges = induced_edges(g, &locals, drop);

    // Distance filter within the induced subgraph.
    let du = local_distances(keep.len(), &edges, locals[&head]);
    let dv = local_distances(keep.len(), &edges, locals[&tail]);
    let within = |d: &Option<usize>| matches!(d, Some(x) if *x <= hops);
    let mut kept: Vec<usize> = keep
        .iter()
        .enumerate()
        .filter(|&(l, &n)| n == head || n == tail || (within(&du[l]) && within(&dv[l])))
        .map(|(_, &n)| n)
        .collect();

    // Drop non-target nodes left isolated by the filter.
    locals = kept.iter().enumerate().map(|(l, &n)| (n, l)).collect();
    edges = induced_edges(g, &locals, drop);
    let mut degree = vec![0usize; kept.len()];
    for e in &edges {
        degree[e.head] += 1;
        degree[e.tail] += 1;
    }
    kept = kept
        .iter()
        .enumerate()
        .filter(|&(l, &n)| n == head || n == tail || degree[l] > 0)
        .map(|(_, &n)| n)
        .collect();

    if let Some(cap) = max_nodes {
        if kept.len() > cap {
            let mut others: Vec<usize> = kept
                .iter()
                .copied()
                .filter(|&n| n != head && n != tail)
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(cap_seed);
            others.shuffle(&mut rng);
            others.truncate(cap.saturating_sub(2));
            others.extend([head, tail]);
            others.sort_unstable();
            kept = others;
        }
    }

    locals = kept.iter().enumerate().map(|(l, &n)| (n, l)).collect();
    edges = induced_edges(g, &locals, drop);
    finish(g, kept, edges, head, tail, hops)
}

fn finish(
    g: &KGraph,
    nodes: Vec<usize>,
    edges: Vec<Triple>,
    head: usize,
    tail: usize,
    hops: usize,
) -> Subgraph {
    let locals: HashMap<usize, usize> = nodes.iter().enumerate().map(|(l, &n)| (n, l)).collect();
    let head_local = locals[&head];
    let tail_local = locals[&tail];
    let clamp = |d: Option<usize>| d.map_or(hops + 1, |x| x.min(hops + 1));
    let dist_to_head = local_distances(nodes.len(), &edges, head_local)
        .into_iter()
        .map(clamp)
        .collect();
    let dist_to_tail = local_distances(nodes.len(), &edges, tail_local)
        .into_iter()
        .map(clamp)
        .collect();
    let neighbor_rels = nodes
        .iter()
        .map(|&n| {
            g.neighboring_relations(n)
                .expect("subgraph node within graph")
                .to_vec()
        })
        .collect();
    Subgraph {
        nodes,
        edges,
        head_local,
        tail_local,
        hops,
        dist_to_head,
        dist_to_tail,
        neighbor_rels,
    }
}

/// Double-radius positional feature: one-hot(distance to head) then
/// one-hot(distance to tail), each of length hops + 2. Exactly two ones.
pub fn positional_onehot(sg: &Subgraph, local: usize) -> Vec<f64> {
    let half = sg.hops + 2;
    let mut v = vec![0.0; 2 * half];
    v[sg.dist_to_head[local]] = 1.0;
    v[half + sg.dist_to_tail[local]] = 1.0;
    v
}

const CACHE_MAGIC: &[u8; 8] = b"SNRISG01";

/// Binary cache of pre-extracted subgraphs (little-endian u64 fields),
/// used to skip re-extraction across training runs.
pub fn write_subgraph_cache(path: &std::path::Path, sgs: &[Subgraph]) -> std::io::Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let put = |w: &mut std::io::BufWriter<std::fs::File>, v: usize| {
        w.write_all(&(v as u64).to_le_bytes())
    };
    w.write_all(CACHE_MAGIC)?;
    put(&mut w, sgs.len())?;
    for sg in sgs {
        put(&mut w, sg.hops)?;
        put(&mut w, sg.head_local)?;
        put(&mut w, sg.tail_local)?;
        put(&mut w, sg.nodes.len())?;
        for &n in &sg.nodes {
            put(&mut w, n)?;
        }
        for &d in sg.dist_to_head.iter().chain(&sg.dist_to_tail) {
            put(&mut w, d)?;
        }
        for tokens in &sg.neighbor_rels {
            put(&mut w, tokens.len())?;
            for &t in tokens {
                put(&mut w, t)?;
            }
        }
        put(&mut w, sg.edges.len())?;
        for e in &sg.edges {
            put(&mut w, e.head)?;
            put(&mut w, e.rel)?;
            put(&mut w, e.tail)?;
        }
    }
    w.flush()
}

pub fn read_subgraph_cache(path: &std::path::Path) -> std::io::Result<Vec<Subgraph>> {
    use std::io::Read;
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "bad magic in subgraph cache",
        ));
    }
    let get = move |r: &mut std::io::BufReader<std::fs::File>| -> std::io::Result<usize> {
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf)?;
        Ok(u64::from_le_bytes(buf) as usize)
    };
    let count = get(&mut r)?;
    let mut sgs = Vec::with_capacity(count);
    for _ in 0..count {
        let hops = get(&mut r)?;
        let head_local = get(&mut r)?;
        let tail_local = get(&mut r)?;
        let n = get(&mut r)?;
        let mut nodes = Vec::with_capacity(n);
        for _ in 0..n {
            nodes.push(get(&mut r)?);
        }
        let mut dist_to_head = Vec::with_capacity(n);
        for _ in 0..n {
            dist_to_head.push(get(&mut r)?);
        }
        let mut dist_to_tail = Vec::with_capacity(n);
        for _ in 0..n {
            dist_to_tail.push(get(&mut r)?);
        }
        let mut neighbor_rels = Vec::with_capacity(n);
        for _ in 0..n {
            let len = get(&mut r)?;
            let mut tokens = Vec::with_capacity(len);
            for _ in 0..len {
                tokens.push(get(&mut r)?);
            }
            neighbor_rels.push(tokens);
        }
        let n_edges = get(&mut r)?;
        let mut edges = Vec::with_capacity(n_edges);
        for _ in 0..n_edges {
            edges.push(Triple {
                head: get(&mut r)?,
                rel: get(&mut r)?,
                tail: get(&mut r)?,
            });
        }
        sgs.push(Subgraph {
            nodes,
            edges,
            head_local,
            tail_local,
            hops,
            dist_to_head,
            dist_to_tail,
            neighbor_rels,
        });
    }
    Ok(sgs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::KGraph;

    fn graph(triples: &[(usize, usize, usize)], n_ent: usize, n_rel: usize) -> KGraph {
        KGraph::from_triples(
            n_ent,
            n_rel,
            triples
                .iter()
                .map(|&(head, rel, tail)| Triple { head, rel, tail })
                .collect(),
        )
    }

    #[test]
    fn khop_on_a_path_graph() {
        // a -> b -> c as 0 -> 1 -> 2
        let g = graph(&[(0, 0, 1), (1, 0, 2)], 3, 1);
        let from_b = k_hop_neighbors(&g, 1, 1);
        assert_eq!(from_b.len(), 3);
        assert_eq!(from_b[&1], 0);
        assert_eq!(from_b[&0], 1);
        assert_eq!(from_b[&2], 1);

        let from_a = k_hop_neighbors(&g, 0, 2);
        assert_eq!(from_a[&0], 0);
        assert_eq!(from_a[&1], 1);
        assert_eq!(from_a[&2], 2);
    }

    #[test]
    fn triangle_with_direct_edge() {
        // u - x - v plus u - v, k = 2
        let g = graph(&[(0, 0, 1), (1, 0, 2), (0, 1, 2)], 3, 2);
        let sg = extract_enclosing(&g, 0, 2, 2, None);
        assert_eq!(sg.nodes, vec![0, 1, 2]);
        let x = sg.nodes.iter().position(|&n| n == 1).unwrap();
        assert_eq!((sg.dist_to_head[x], sg.dist_to_tail[x]), (1, 1));
        assert_eq!(sg.dist_to_head[sg.head_local], 0);
        assert_eq!(sg.dist_to_tail[sg.tail_local], 0);
    }

    #[test]
    fn disconnected_targets_give_two_node_subgraph() {
        let g = graph(&[(0, 0, 1), (2, 0, 3)], 4, 1);
        let sg = extract_enclosing(&g, 0, 3, 3, None);
        assert_eq!(sg.nodes, vec![0, 3]);
        assert!(sg.edges.is_empty());
        assert_eq!(sg.dist_to_tail[sg.head_local], 4); // k + 1 clamp
        assert_eq!(sg.dist_to_head[sg.head_local], 0);
    }

    #[test]
    fn target_edge_is_dropped_during_training_extraction() {
        let g = graph(&[(0, 0, 1), (1, 0, 2), (0, 1, 2)], 3, 2);
        let sg = extract_enclosing(&g, 0, 2, 2, Some(1));
        assert!(sg
            .edges
            .iter()
            .all(|e| !(sg.nodes[e.head] == 0 && e.rel == 1 && sg.nodes[e.tail] == 2)));
        // distance u -> v is now via x
        assert_eq!(sg.dist_to_tail[sg.head_local], 2);
    }

    #[test]
    fn positional_onehot_layout() {
        // k = 3, (d_u, d_v) = (1, 2) -> ones at 1 and 5 + 2 = 7 of 10
        let g = graph(&[(0, 0, 1), (1, 0, 2), (2, 0, 3)], 4, 1);
        let sg = extract_enclosing(&g, 0, 3, 3, None);
        let n1 = sg.nodes.iter().position(|&n| n == 1).unwrap();
        let v = positional_onehot(&sg, n1);
        assert_eq!(v.len(), 10);
        let ones: Vec<usize> = v
            .iter()
            .enumerate()
            .filter(|(_, x)| **x == 1.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(ones, vec![1, 7]);
        assert_eq!(v.iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn extraction_is_pure() {
        let g = graph(
            &[(0, 0, 1), (1, 1, 2), (2, 0, 3), (0, 1, 3), (3, 0, 4), (4, 1, 0)],
            5,
            2,
        );
        let a = extract_enclosing(&g, 0, 3, 2, Some(1));
        let b = extract_enclosing(&g, 0, 3, 2, Some(1));
        assert_eq!(a, b);
    }

    #[test]
    fn self_pair_returns_degenerate_subgraph() {
        let g = graph(&[(0, 0, 1)], 2, 1);
        let sg = extract_enclosing(&g, 0, 0, 3, None);
        assert_eq!(sg.nodes, vec![0]);
        assert_eq!(sg.head_local, sg.tail_local);
        assert_eq!(sg.dist_to_head, vec![0]);
    }

    #[test]
    fn node_cap_keeps_targets() {
        // star around 0 plus chain to 9
        let mut triples = vec![];
        for i in 1..8 {
            triples.push((0, 0, i));
            triples.push((i, 0, 9));
        }
        let g = graph(&triples, 10, 1);
        let sg = extract_enclosing_capped(&g, 0, 9, 2, None, Some(4), 11);
        assert_eq!(sg.num_nodes(), 4);
        assert!(sg.nodes.contains(&0) && sg.nodes.contains(&9));
        let sg2 = extract_enclosing_capped(&g, 0, 9, 2, None, Some(4), 11);
        assert_eq!(sg, sg2);
    }

    #[test]
    fn canonicalize_restores_sorted_order() {
        let g = graph(&[(0, 0, 1), (1, 0, 2), (0, 1, 2)], 3, 2);
        let sg = extract_enclosing(&g, 0, 2, 2, None);
        // scramble local ids: reverse the node order
        let n = sg.nodes.len();
        let remap: Vec<usize> = (0..n).rev().collect();
        let scrambled = Subgraph {
            nodes: remap.iter().map(|&l| sg.nodes[l]).collect(),
            edges: sg
                .edges
                .iter()
                .map(|e| Triple {
                    head: n - 1 - e.head,
                    rel: e.rel,
                    tail: n - 1 - e.tail,
                })
                .collect(),
            head_local: n - 1 - sg.head_local,
            tail_local: n - 1 - sg.tail_local,
            hops: sg.hops,
            dist_to_head: remap.iter().map(|&l| sg.dist_to_head[l]).collect(),
            dist_to_tail: remap.iter().map(|&l| sg.dist_to_tail[l]).collect(),
            neighbor_rels: remap.iter().map(|&l| sg.neighbor_rels[l].clone()).collect(),
        };
        assert_eq!(scrambled.canonicalize(), sg);
    }
}
