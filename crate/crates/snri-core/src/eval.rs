//! Evaluation protocol: AUC-PR over balanced positives/negatives,
//! Hits@10 against sampled candidate negatives, Hits@10 bucketed by
//! subgraph density, and path-importance tables.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{negative_sample, KGraph, Triple};
use crate::model::{AblationFlags, Model, ModelError, RelationPath};
use crate::tensor::fnv1a64;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot compute a metric over empty score lists")]
    EmptyScores,
    #[error("unknown relation `{name}`; valid relations: {valid}")]
    UnknownRelation { name: String, valid: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Average precision over pooled scores: sort by (score desc,
/// positive-first on ties), accumulate precision@k at every positive.
pub fn auc_pr(pos_scores: &[f64], neg_scores: &[f64]) -> Result<f64, EvalError> {
    if pos_scores.is_empty() || neg_scores.is_empty() {
        return Err(EvalError::EmptyScores);
    }
    let mut items: Vec<(f64, bool)> = pos_scores
        .iter()
        .map(|&s| (s, true))
        .chain(neg_scores.iter().map(|&s| (s, false)))
        .collect();
    items.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
    let total_pos = pos_scores.len() as f64;
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (k, (_, is_pos)) in items.iter().enumerate() {
        if *is_pos {
            hits += 1;
            let precision = hits as f64 / (k + 1) as f64;
            ap += precision / total_pos;
        }
    }
    Ok(ap)
}

/// Pessimistic rank of the positive among candidate negatives: ties
/// count against it. 1-based.
pub fn rank_among(pos_score: f64, candidate_scores: &[f64]) -> usize {
    let above = candidate_scores.iter().filter(|&&s| s > pos_score).count();
    let tied = candidate_scores.iter().filter(|&&s| s == pos_score).count();
    1 + above + tied
}

/// Hit iff the positive ranks within `cutoff` of its candidate set.
pub fn hits_at(pos_score: f64, candidate_scores: &[f64], cutoff: usize) -> bool {
    rank_among(pos_score, candidate_scores) <= cutoff
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BucketStat {
    pub label: String,
    pub count: usize,
    pub hits: usize,
    /// None when the bucket is empty.
    pub rate: Option<f64>,
}

/// Split per-triple hits into three buckets by subgraph node count:
/// <= bounds.0, bounds.0+1 ..= bounds.1, > bounds.1.
pub fn density_buckets(records: &[(usize, bool)], bounds: (usize, usize)) -> Vec<BucketStat> {
    let (lo, hi) = bounds;
    let labels = [
        format!("<={lo} nodes"),
        format!("{}-{hi} nodes", lo + 1),
        format!(">{hi} nodes"),
    ];
    let mut counts = [0usize; 3];
    let mut hit_counts = [0usize; 3];
    for &(nodes, hit) in records {
        let b = if nodes <= lo {
            0
        } else if nodes <= hi {
            1
        } else {
            2
        };
        counts[b] += 1;
        if hit {
            hit_counts[b] += 1;
        }
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(b, label)| BucketStat {
            label,
            count: counts[b],
            hits: hit_counts[b],
            rate: if counts[b] > 0 {
                Some(hit_counts[b] as f64 / counts[b] as f64)
            } else {
                None
            },
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathTableRow {
    pub path: String,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathTable {
    pub relation: String,
    pub rows: Vec<PathTableRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TripleOutcome {
    pub head: String,
    pub rel: String,
    pub tail: String,
    pub pos_score: f64,
    pub rank: usize,
    pub hit: bool,
    pub subgraph_nodes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc_pr: f64,
    pub hits_at_10: f64,
    pub num_triples: usize,
    pub num_candidates: usize,
    pub bucket_bounds: (usize, usize),
    pub buckets: Vec<BucketStat>,
    pub path_tables: Vec<PathTable>,
    pub per_triple: Vec<TripleOutcome>,
}

impl EvalReport {
    /// Aligned text rendering of the headline metrics and bucket table.
    pub fn text_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "triples: {}   candidates/triple: {}\n",
            self.num_triples, self.num_candidates
        ));
        out.push_str(&format!(
            "AUC-PR : {:>8.4}\nHits@10: {:>8.4}\n",
            self.auc_pr, self.hits_at_10
        ));
        out.push_str(&format!(
            "\ndensity buckets (bounds {:?}, node counts after pruning):\n",
            self.bucket_bounds
        ));
        out.push_str(&format!(
            "  {:<14} {:>8} {:>8} {:>10}\n",
            "bucket", "count", "hits", "hits@10"
        ));
        for b in &self.buckets {
            let rate = b.rate.map_or("     -".to_string(), |r| format!("{r:.4}"));
            out.push_str(&format!(
                "  {:<14} {:>8} {:>8} {:>10}\n",
                b.label, b.count, b.hits, rate
            ));
        }
        if !self.path_tables.is_empty() {
            out.push_str("\npath importance (mean attention mass):\n");
            for table in &self.path_tables {
                for (i, row) in table.rows.iter().enumerate() {
                    let rel = if i == 0 { table.relation.as_str() } else { "" };
                    out.push_str(&format!(
                        "  {:<24} {:<48} {:>6.3}\n",
                        rel, row.path, row.weight
                    ));
                }
            }
        }
        out
    }

    /// CSV of per-triple ranks for external plotting.
    pub fn ranks_csv(&self) -> String {
        let mut out = String::from("head,relation,tail,score,rank,hit,subgraph_nodes\n");
        for t in &self.per_triple {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                t.head, t.rel, t.tail, t.pos_score, t.rank, t.hit as u8, t.subgraph_nodes
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Candidate negatives per positive for the ranking metric.
    pub num_candidates: usize,
    pub hits_cutoff: usize,
    pub bucket_bounds: (usize, usize),
    pub seed: u64,
    /// Collect per-path attention weights for the importance tables.
    pub collect_paths: bool,
    /// Limit path tables to these relation names (all when empty).
    pub path_relations: Vec<String>,
    /// Rows per relation in the path tables.
    pub paths_top_n: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            num_candidates: 50,
            hits_cutoff: 10,
            bucket_bounds: (3, 10),
            seed: 0,
            collect_paths: false,
            path_relations: Vec::new(),
            paths_top_n: 2,
        }
    }
}

struct PerTriple {
    pos_score: f64,
    paired_neg_score: f64,
    rank: usize,
    hit: bool,
    subgraph_nodes: usize,
    paths: Vec<(RelationPath, f64)>,
}

/// Score every positive once for AUC-PR (against one paired negative)
/// and once against `num_candidates` sampled negatives for Hits@10.
/// Scoring parallelizes over triples; negatives are seeded per triple
/// index so results do not depend on thread scheduling.
pub fn evaluate(
    model: &Model,
    flags: AblationFlags,
    graph: &KGraph,
    positives: &[Triple],
    rel_names: &[String],
    entity_names: &[String],
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    if positives.is_empty() {
        return Err(EvalError::EmptyScores);
    }
    if !opts.path_relations.is_empty() {
        for name in &opts.path_relations {
            if !rel_names.contains(name) {
                return Err(EvalError::UnknownRelation {
                    name: name.clone(),
                    valid: rel_names.join(", "),
                });
            }
        }
    }

    let results: Result<Vec<PerTriple>, EvalError> = positives
        .par_iter()
        .enumerate()
        .map(|(idx, t)| {
            let mut seed_bytes = Vec::with_capacity(24);
            seed_bytes.extend_from_slice(&opts.seed.to_le_bytes());
            seed_bytes.extend_from_slice(b"eval-neg");
            seed_bytes.extend_from_slice(&(idx as u64).to_le_bytes());
            let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(&seed_bytes));

            let subgraph_nodes = model.extract(graph, t, false).num_nodes();
            let want_paths = opts.collect_paths
                && (opts.path_relations.is_empty()
                    || opts.path_relations.contains(&rel_names[t.rel]));
            let (pos_score, paths) = if want_paths {
                model.score_with_paths(graph, t, flags, false, opts.seed)?
            } else {
                (
                    model.score_one(graph, t, flags, false, opts.seed)?,
                    Vec::new(),
                )
            };

            let paired = negative_sample(t, graph, &mut rng);
            let paired_neg_score = model.score_one(graph, &paired, flags, false, opts.seed)?;

            let mut candidate_scores = Vec::with_capacity(opts.num_candidates);
            for _ in 0..opts.num_candidates {
                let neg = negative_sample(t, graph, &mut rng);
                candidate_scores.push(model.score_one(graph, &neg, flags, false, opts.seed)?);
            }
            let rank = rank_among(pos_score, &candidate_scores);
            Ok(PerTriple {
                pos_score,
                paired_neg_score,
                rank,
                hit: rank <= opts.hits_cutoff,
                subgraph_nodes,
                paths,
            })
        })
        .collect();
    let results = results?;

    let pos_scores: Vec<f64> = results.iter().map(|r| r.pos_score).collect();
    let neg_scores: Vec<f64> = results.iter().map(|r| r.paired_neg_score).collect();
    let auc = auc_pr(&pos_scores, &neg_scores)?;
    let hits = results.iter().filter(|r| r.hit).count() as f64 / results.len() as f64;

    let density_records: Vec<(usize, bool)> = results
        .iter()
        .map(|r| (r.subgraph_nodes, r.hit))
        .collect();
    let buckets = density_buckets(&density_records, opts.bucket_bounds);

    let path_tables = if opts.collect_paths {
        let per_triple: Vec<(usize, &[(RelationPath, f64)])> = positives
            .iter()
            .zip(&results)
            .map(|(t, r)| (t.rel, r.paths.as_slice()))
            .collect();
        aggregate_path_importance(
            &per_triple,
            rel_names,
            graph.num_relations(),
            &opts.path_relations,
            opts.paths_top_n,
        )
    } else {
        Vec::new()
    };

    let per_triple = positives
        .iter()
        .zip(&results)
        .map(|(t, r)| TripleOutcome {
            head: entity_names
                .get(t.head)
                .cloned()
                .unwrap_or_else(|| t.head.to_string()),
            rel: rel_names[t.rel].clone(),
            tail: entity_names
                .get(t.tail)
                .cloned()
                .unwrap_or_else(|| t.tail.to_string()),
            pos_score: r.pos_score,
            rank: r.rank,
            hit: r.hit,
            subgraph_nodes: r.subgraph_nodes,
        })
        .collect();

    Ok(EvalReport {
        auc_pr: auc,
        hits_at_10: hits,
        num_triples: positives.len(),
        num_candidates: opts.num_candidates,
        bucket_bounds: opts.bucket_bounds,
        buckets,
        path_tables,
        per_triple,
    })
}

/// Comparison table for ablation runs: one row per variant.
pub fn ablation_table(rows: &[(String, f64, f64)]) -> String {
    let mut out = format!(
        "{:<16} {:>10} {:>10}\n{}\n",
        "variant",
        "AUC-PR",
        "Hits@10",
        "-".repeat(38)
    );
    for (label, auc, hits) in rows {
        out.push_str(&format!("{label:<16} {auc:>10.4} {hits:>10.4}\n"));
    }
    out
}

/// Mean attention mass per distinct path, per target relation: each
/// triple distributes one unit of attention over its paths, so a
/// relation's weights sum to one over all its paths and any top-n slice
/// sums to at most one.
pub fn aggregate_path_importance(
    per_triple: &[(usize, &[(RelationPath, f64)])],
    rel_names: &[String],
    num_relations: usize,
    wanted: &[String],
    top_n: usize,
) -> Vec<PathTable> {
    let mut by_rel: HashMap<usize, (usize, HashMap<RelationPath, f64>)> = HashMap::new();
    for (rel, paths) in per_triple {
        let entry = by_rel.entry(*rel).or_default();
        entry.0 += 1;
        for (p, beta) in *paths {
            *entry.1.entry(p.clone()).or_insert(0.0) += beta;
        }
    }
    let mut rel_ids: Vec<usize> = by_rel.keys().copied().collect();
    rel_ids.sort_unstable();
    rel_ids
        .into_iter()
        .filter(|&r| wanted.is_empty() || wanted.contains(&rel_names[r]))
        .map(|r| {
            let (n_triples, sums) = &by_rel[&r];
            let mut rows: Vec<(RelationPath, f64)> = sums
                .iter()
                .map(|(p, s)| (p.clone(), s / *n_triples as f64))
                .collect();
            rows.sort_by(|a, b| {
                b.1.total_cmp(&a.1)
                    .then_with(|| format!("{:?}", a.0).cmp(&format!("{:?}", b.0)))
            });
            rows.truncate(top_n);
            PathTable {
                relation: rel_names[r].clone(),
                rows: rows
                    .into_iter()
                    .map(|(p, w)| PathTableRow {
                        path: p.render(rel_names, num_relations),
                        weight: w,
                    })
                    .collect(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_ranking_gives_one() {
        let ap = auc_pr(&[3.0, 2.5, 2.0], &[1.0, 0.5, 0.0]).unwrap();
        assert_eq!(ap, 1.0);
    }

    #[test]
    fn single_positive_at_rank_two() {
        let ap = auc_pr(&[1.0], &[2.0]).unwrap();
        assert_eq!(ap, 0.5);
    }

    #[test]
    fn empty_inputs_error() {
        assert!(auc_pr(&[], &[1.0]).is_err());
        assert!(auc_pr(&[1.0], &[]).is_err());
    }

    #[test]
    fn hits_boundaries_and_ties() {
        // strictly above all 50 -> rank 1
        let negs = vec![0.0; 50];
        assert_eq!(rank_among(1.0, &negs), 1);
        assert!(hits_at(1.0, &negs, 10));

        // below 10, above 40 -> rank 11 -> miss
        let mut negs = vec![0.0; 40];
        negs.extend(vec![2.0; 10]);
        assert_eq!(rank_among(1.0, &negs), 11);
        assert!(!hits_at(1.0, &negs, 10));

        // tied with 9, above the rest -> rank 10 -> hit
        let mut negs = vec![0.0; 41];
        negs.extend(vec![1.0; 9]);
        assert_eq!(rank_among(1.0, &negs), 10);
        assert!(hits_at(1.0, &negs, 10));
    }

    #[test]
    fn buckets_partition_and_reconstruct() {
        let records = vec![
            (1, true),
            (3, false),
            (4, true),
            (10, true),
            (11, false),
            (40, true),
        ];
        let buckets = density_buckets(&records, (3, 10));
        assert_eq!(buckets.iter().map(|b| b.count).sum::<usize>(), 6);
        assert_eq!(buckets[0].count, 2);
        assert_eq!(buckets[1].count, 2);
        assert_eq!(buckets[2].count, 2);
        assert_eq!(buckets[0].rate, Some(0.5));
        // weighted average reconstructs the overall rate
        let overall = records.iter().filter(|r| r.1).count() as f64 / records.len() as f64;
        let weighted: f64 = buckets
            .iter()
            .filter_map(|b| b.rate.map(|r| r * b.count as f64))
            .sum::<f64>()
            / records.len() as f64;
        assert!((overall - weighted).abs() < 1e-9);
    }

    #[test]
    fn empty_bucket_reports_none() {
        let buckets = density_buckets(&[(1, true)], (3, 10));
        assert_eq!(buckets[2].count, 0);
        assert_eq!(buckets[2].rate, None);
    }

    #[test]
    fn path_aggregation_sums_to_at_most_one() {
        let names = vec!["a".to_string(), "b".to_string()];
        let p1 = RelationPath {
            from_head: Some(0),
            target: 1,
            from_tail: Some(0),
        };
        let p2 = RelationPath {
            from_head: Some(1),
            target: 1,
            from_tail: Some(0),
        };
        // triple 1 splits attention, triple 2 puts everything on p1
        let t1: Vec<(RelationPath, f64)> = vec![(p1.clone(), 0.4), (p2.clone(), 0.6)];
        let t2: Vec<(RelationPath, f64)> = vec![(p1.clone(), 1.0)];
        let per: Vec<(usize, &[(RelationPath, f64)])> = vec![(1, &t1), (1, &t2)];
        let tables = aggregate_path_importance(&per, &names, 2, &[], 10);
        assert_eq!(tables.len(), 1);
        let total: f64 = tables[0].rows.iter().map(|r| r.weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(tables[0].rows[0].weight, 0.7); // (0.4 + 1.0) / 2
    }

    #[test]
    fn single_path_triple_reports_full_weight() {
        let names = vec!["a".to_string()];
        let p = RelationPath {
            from_head: None,
            target: 0,
            from_tail: None,
        };
        let t: Vec<(RelationPath, f64)> = vec![(p, 1.0)];
        let per: Vec<(usize, &[(RelationPath, f64)])> = vec![(0, &t)];
        let tables = aggregate_path_importance(&per, &names, 1, &[], 2);
        assert_eq!(tables[0].rows[0].weight, 1.0);
    }
}
