//! Property tests over the spec's structural invariants.

use proptest::prelude::*;

use snri_core::eval::auc_pr;
use snri_core::kg::{negative_sample, read_graph_cache, write_graph_cache, KGraph, Triple};
use snri_core::subgraph::{extract_enclosing, positional_onehot};
use snri_core::tensor::{Tape, Tensor};

fn arb_graph() -> impl Strategy<Value = (usize, usize, Vec<(usize, usize, usize)>)> {
    (2usize..40, 1usize..6).prop_flat_map(|(n, r)| {
        let edges = proptest::collection::vec((0..n, 0..r, 0..n), 1..80);
        (Just(n), Just(r), edges)
    })
}

fn build(n: usize, r: usize, edges: &[(usize, usize, usize)]) -> KGraph {
    KGraph::from_triples(
        n,
        r,
        edges
            .iter()
            .map(|&(head, rel, tail)| Triple { head, rel, tail })
            .collect(),
    )
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(values in proptest::collection::vec(-30.0f64..30.0, 1..40)) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(values));
        let s = tape.softmax(x).unwrap();
        let out = tape.value(s).data();
        prop_assert!(out.iter().all(|v| *v >= 0.0));
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn extraction_is_pure_and_labels_are_unit_pairs(
        (n, r, edges) in arb_graph(),
        k in 1usize..=3,
        pick in any::<u64>(),
    ) {
        let g = build(n, r, &edges);
        let u = (pick % n as u64) as usize;
        let v = ((pick / 7 + 1) % n as u64) as usize;
        prop_assume!(u != v);

        let a = extract_enclosing(&g, u, v, k, None);
        let b = extract_enclosing(&g, u, v, k, None);
        prop_assert_eq!(&a, &b);

        prop_assert!(a.nodes.contains(&u) && a.nodes.contains(&v));
        for local in 0..a.num_nodes() {
            let onehot = positional_onehot(&a, local);
            prop_assert_eq!(onehot.len(), 2 * (k + 2));
            prop_assert_eq!(onehot.iter().filter(|x| **x == 1.0).count(), 2);
            prop_assert_eq!(onehot.iter().sum::<f64>(), 2.0);
        }
        prop_assert!(a.neighbor_rels.len() == a.num_nodes());
    }

    #[test]
    fn dropped_target_edge_never_appears(
        (n, r, edges) in arb_graph(),
        k in 1usize..=3,
        idx in any::<prop::sample::Index>(),
    ) {
        let g = build(n, r, &edges);
        let e = edges[idx.index(edges.len())];
        prop_assume!(e.0 != e.2);
        let sg = extract_enclosing(&g, e.0, e.2, k, Some(e.1));
        for edge in &sg.edges {
            let global = (sg.nodes[edge.head], edge.rel, sg.nodes[edge.tail]);
            prop_assert_ne!(global, e);
        }
    }

    #[test]
    fn negative_samples_differ_from_input(
        (n, r, edges) in arb_graph(),
        seed in any::<u64>(),
        idx in any::<prop::sample::Index>(),
    ) {
        use rand::SeedableRng;
        let g = build(n, r, &edges);
        let e = edges[idx.index(edges.len())];
        let t = Triple { head: e.0, rel: e.1, tail: e.2 };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..5 {
            let neg = negative_sample(&t, &g, &mut rng);
            prop_assert_ne!(neg, t);
            prop_assert!(neg.rel == t.rel);
            prop_assert!(neg.head == t.head || neg.tail == t.tail);
        }
    }

    #[test]
    fn graph_cache_roundtrips((n, r, edges) in arb_graph()) {
        let g = build(n, r, &edges);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.bin");
        write_graph_cache(&path, &g).unwrap();
        let back = read_graph_cache(&path).unwrap();
        prop_assert_eq!(back.triples(), g.triples());
        prop_assert_eq!(back.num_entities(), g.num_entities());
        prop_assert_eq!(back.num_relations(), g.num_relations());
    }

    #[test]
    fn auc_pr_is_monotone_transform_invariant(
        pos in proptest::collection::vec(-5.0f64..5.0, 1..30),
        neg in proptest::collection::vec(-5.0f64..5.0, 1..30),
        scale in 0.1f64..4.0,
        shift in -3.0f64..3.0,
    ) {
        let before = auc_pr(&pos, &neg).unwrap();
        let t = |v: &f64| v * scale + shift;
        let after = auc_pr(
            &pos.iter().map(t).collect::<Vec<_>>(),
            &neg.iter().map(t).collect::<Vec<_>>(),
        ).unwrap();
        prop_assert_eq!(before, after);
        prop_assert!((0.0..=1.0).contains(&before));
    }
}
