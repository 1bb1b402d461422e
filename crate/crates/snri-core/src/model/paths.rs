//! Relation paths bridging the target pair: (r_u, r_t, r_v) with r_u
//! drawn from the head's full-graph relation tokens and r_v from the
//! tail's. They carry signal even when the enclosing subgraph has no
//! connecting structure at all.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::kg::{KGraph, Triple};

/// One relation path across the target pair. Endpoints are directed
/// relation tokens (incoming offset by |R|); a missing endpoint means
/// the corresponding target node has no incident relations, and the
/// encoder consumes the shorter sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RelationPath {
    pub from_head: Option<usize>,
    pub target: usize,
    pub from_tail: Option<usize>,
}

impl RelationPath {
    /// Render with relation names; tokens at or past |R| print as the
    /// inverse direction. The target relation sits in the middle.
    pub fn render(&self, rel_names: &[String], num_relations: usize) -> String {
        let token = |t: usize| {
            if t >= num_relations {
                format!("~{}", rel_names[t - num_relations])
            } else {
                rel_names[t].clone()
            }
        };
        let mut parts = Vec::new();
        if let Some(r) = self.from_head {
            parts.push(token(r));
        }
        parts.push(rel_names[self.target].clone());
        if let Some(r) = self.from_tail {
            parts.push(token(r));
        }
        format!("({})", parts.join(", "))
    }
}

/// Enumerate the paths for a target triple from the FULL graph's
/// neighbor token sets. With `guard_target_tokens` (training), the
/// tokens that exist solely because of the target edge itself are
/// removed first. The set is capped at `max_paths` by seeded uniform
/// sampling; surviving paths keep their canonical enumeration order.
pub fn enumerate_paths(
    g: &KGraph,
    target: &Triple,
    guard_target_tokens: bool,
    max_paths: usize,
    seed: u64,
) -> Vec<RelationPath> {
    let n_rel = g.num_relations();
    let head_tokens = filtered_tokens(g, target.head, |tok| {
        !(guard_target_tokens
            && tok == target.rel
            && !g.has_other_out_edge(target.head, target.rel, target.tail))
    });
    let tail_tokens = filtered_tokens(g, target.tail, |tok| {
        !(guard_target_tokens
            && tok == target.rel + n_rel
            && !g.has_other_in_edge(target.tail, target.rel, target.head))
    });

    let mut paths = Vec::new();
    match (head_tokens.is_empty(), tail_tokens.is_empty()) {
        (true, true) => paths.push(RelationPath {
            from_head: None,
            target: target.rel,
            from_tail: None,
        }),
        (true, false) => {
            for &rv in &tail_tokens {
                paths.push(RelationPath {
                    from_head: None,
                    target: target.rel,
                    from_tail: Some(rv),
                });
            }
        }
        (false, true) => {
            for &ru in &head_tokens {
                paths.push(RelationPath {
                    from_head: Some(ru),
                    target: target.rel,
                    from_tail: None,
                });
            }
        }
        (false, false) => {
            for &ru in &head_tokens {
                for &rv in &tail_tokens {
                    paths.push(RelationPath {
                        from_head: Some(ru),
                        target: target.rel,
                        from_tail: Some(rv),
                    });
                }
            }
        }
    }

    if paths.len() > max_paths {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen = rand::seq::index::sample(&mut rng, paths.len(), max_paths).into_vec();
        chosen.sort_unstable();
        paths = chosen.into_iter().map(|i| paths[i].clone()).collect();
    }
    paths
}

fn filtered_tokens(g: &KGraph, node: usize, keep: impl Fn(usize) -> bool) -> Vec<usize> {
    g.neighboring_relations(node)
        .expect("target node within graph")
        .iter()
        .copied()
        .filter(|&t| keep(t))
        .collect()
}
