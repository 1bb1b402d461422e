//! Planted-rule synthetic knowledge graph, written in the same split
//! layout as the real benchmarks. The target relation holds exactly
//! when a two-hop body path exists: rule_head(a, c) iff there is some b
//! with body_a(a, b) and body_b(b, c). Two noise relations pad the
//! graph. The test side repeats the generative process over a fresh,
//! disjoint entity set, so the split is genuinely inductive.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const RELATIONS: [&str; 5] = ["rule_head", "body_a", "body_b", "noise_a", "noise_b"];

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub train_entities: usize,
    pub test_entities: usize,
    /// Body edges per relation, as a fraction of the entity count.
    pub body_density: f64,
    /// Noise edges per relation, as a fraction of the entity count.
    pub noise_density: f64,
    /// Fraction of rule-head facts held out of the graph for scoring.
    pub holdout_frac: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            train_entities: 1000,
            test_entities: 300,
            body_density: 0.9,
            noise_density: 0.3,
            holdout_frac: 0.15,
        }
    }
}

struct Side {
    /// Triples that form the message-passing graph (includes the
    /// non-held-out rule facts).
    graph: Vec<(String, &'static str, String)>,
    /// Held-out rule facts.
    holdout: Vec<(String, &'static str, String)>,
}

fn generate_side(n: usize, prefix: &str, cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Side {
    let name = |i: usize| format!("{prefix}{i}");
    let mut seen = HashSet::new();
    let mut graph: Vec<(String, &'static str, String)> = Vec::new();
    let push = |graph: &mut Vec<(String, &'static str, String)>,
                    seen: &mut HashSet<(usize, usize, usize)>,
                    h: usize,
                    r: usize,
                    t: usize| {
        if seen.insert((h, r, t)) {
            graph.push((name(h), RELATIONS[r], name(t)));
        }
    };

    let body_edges = (n as f64 * cfg.body_density).round() as usize;
    let mut body_a = Vec::new();
    let mut body_b = Vec::new();
    for _ in 0..body_edges {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b {
            body_a.push((a, b));
        }
    }
    for _ in 0..body_edges {
        let b = rng.gen_range(0..n);
        let c = rng.gen_range(0..n);
        if b != c {
            body_b.push((b, c));
        }
    }
    for &(a, b) in &body_a {
        push(&mut graph, &mut seen, a, 1, b);
    }
    for &(b, c) in &body_b {
        push(&mut graph, &mut seen, b, 2, c);
    }

    // Every pair the rule derives becomes a rule_head fact, so filtered
    // negative sampling never hits an unlabeled rule-satisfying pair.
    let mut facts = Vec::new();
    let mut fact_set = HashSet::new();
    for &(a, b) in &body_a {
        for &(b2, c) in &body_b {
            if b == b2 && a != c && fact_set.insert((a, c)) {
                facts.push((a, c));
            }
        }
    }

    let noise_edges = (n as f64 * cfg.noise_density).round() as usize;
    for rel in [3usize, 4] {
        for _ in 0..noise_edges {
            let h = rng.gen_range(0..n);
            let t = rng.gen_range(0..n);
            if h != t {
                push(&mut graph, &mut seen, h, rel, t);
            }
        }
    }

    facts.shuffle(rng);
    let n_holdout = ((facts.len() as f64) * cfg.holdout_frac).round() as usize;
    let holdout: Vec<_> = facts[..n_holdout]
        .iter()
        .map(|&(a, c)| (name(a), RELATIONS[0], name(c)))
        .collect();
    for &(a, c) in &facts[n_holdout..] {
        push(&mut graph, &mut seen, a, 0, c);
    }
    Side { graph, holdout }
}

fn write_lines(path: &Path, triples: &[(String, &'static str, String)]) -> std::io::Result<()> {
    let mut f = fs::File::create(path)?;
    for (h, r, t) in triples {
        writeln!(f, "{h}\t{r}\t{t}")?;
    }
    Ok(())
}

/// Write `<root>/<name>` and `<root>/<name>_ind` in the benchmark file
/// layout. Fully determined by the seed.
pub fn write_synthetic_dataset(
    root: &Path,
    name: &str,
    cfg: &SyntheticConfig,
    seed: u64,
) -> std::io::Result<()> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train_side = generate_side(cfg.train_entities, "e", cfg, &mut rng);
    let test_side = generate_side(cfg.test_entities, "t", cfg, &mut rng);

    let train_dir = root.join(name);
    let ind_dir = root.join(format!("{name}_ind"));
    fs::create_dir_all(&train_dir)?;
    fs::create_dir_all(&ind_dir)?;

    // Train side: held-out facts split between valid and a spare test
    // file kept for layout compatibility.
    let half = train_side.holdout.len() / 2 + train_side.holdout.len() % 2;
    write_lines(&train_dir.join("train.txt"), &train_side.graph)?;
    write_lines(&train_dir.join("valid.txt"), &train_side.holdout[..half])?;
    write_lines(&train_dir.join("test.txt"), &train_side.holdout[half..])?;

    let half = test_side.holdout.len() / 2;
    write_lines(&ind_dir.join("train.txt"), &test_side.graph)?;
    write_lines(&ind_dir.join("valid.txt"), &test_side.holdout[..half])?;
    write_lines(&ind_dir.join("test.txt"), &test_side.holdout[half..])?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{load_dataset, stats};

    #[test]
    fn generated_dataset_loads_and_is_inductive() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SyntheticConfig {
            train_entities: 120,
            test_entities: 60,
            ..Default::default()
        };
        write_synthetic_dataset(dir.path(), "toy", &cfg, 7).unwrap();
        let split = load_dataset(dir.path(), "toy", false).unwrap();

        let (rels, nodes, triples) = stats(&split.train_graph);
        assert_eq!(rels, 5);
        assert!(nodes > 50 && triples > 100);
        assert!(!split.valid_triples.is_empty());
        assert!(!split.test_triples.is_empty());

        // disjoint entity vocabularies by construction
        assert!(split.train_entity_names.iter().all(|n| n.starts_with('e')));
        assert!(split.test_entity_names.iter().all(|n| n.starts_with('t')));

        // every rule fact in the graph really has a two-hop body path
        let rel_id = |name: &str| split.rel_names.iter().position(|r| r == name).unwrap();
        let (rule, body_a, body_b) = (rel_id("rule_head"), rel_id("body_a"), rel_id("body_b"));
        let g = &split.train_graph;
        for t in g.triples().iter().filter(|t| t.rel == rule) {
            let has_path = g
                .out_edges(t.head)
                .iter()
                .filter(|&&(r, _)| r == body_a)
                .any(|&(_, b)| {
                    g.out_edges(b)
                        .iter()
                        .any(|&(r2, c)| r2 == body_b && c == t.tail)
                });
            assert!(has_path, "rule fact without body path");
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let cfg = SyntheticConfig {
            train_entities: 50,
            test_entities: 20,
            ..Default::default()
        };
        write_synthetic_dataset(d1.path(), "s", &cfg, 3).unwrap();
        write_synthetic_dataset(d2.path(), "s", &cfg, 3).unwrap();
        let a = std::fs::read_to_string(d1.path().join("s/train.txt")).unwrap();
        let b = std::fs::read_to_string(d2.path().join("s/train.txt")).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty());
    }
}
