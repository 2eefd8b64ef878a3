use std::collections::{BTreeSet, VecDeque};
use std::path::Path;

use proptest::prelude::*;

use knowddi::graph::{build_combined_network, parse_triples, CombinedNetwork, FactTriplet, SplitSet, Vocabularies, R_IDENTITY};
use knowddi::subgraph::{directional_prune, extract_pair_subgraph, EnclosingSubgraph, ExtractConfig, SubgraphMode};

/// Undirected hop distances from `s` by plain BFS over the edge list.
fn undirected_dist(edges: &[FactTriplet], n: usize, s: usize) -> Vec<Option<usize>> {
    let mut d = vec![None; n];
    d[s] = Some(0);
    let mut q = VecDeque::from([s]);
    while let Some(u) = q.pop_front() {
        for e in edges {
            for (a, b) in [(e.head, e.tail), (e.tail, e.head)] {
                if a == u && d[b].is_none() {
                    d[b] = Some(d[u].unwrap() + 1);
                    q.push_back(b);
                }
            }
        }
    }
    d
}

/// Walk enumeration as in the acceptance suite, over global ids.
fn walk_sets(edges: &[FactTriplet], h: usize, t: usize, p: usize) -> (BTreeSet<usize>, BTreeSet<(usize, usize, usize)>) {
    let mut nodes = BTreeSet::new();
    let mut used = BTreeSet::new();
    let mut shortest = usize::MAX;
    let mut stack = vec![(Vec::<FactTriplet>::new(), h)];
    while let Some((walk, at)) = stack.pop() {
        if at == t {
            shortest = shortest.min(walk.len());
            nodes.insert(h);
            for e in &walk {
                nodes.insert(e.tail);
                used.insert((e.head, e.relation, e.tail));
            }
        }
        if walk.len() < p {
            for e in edges.iter().filter(|e| e.head == at) {
                let mut w = walk.clone();
                w.push(*e);
                stack.push((w, e.tail));
            }
        }
    }
    if nodes.is_empty() {
        return ([h, t].into_iter().collect(), used);
    }
    if shortest < p {
        used.insert((t, R_IDENTITY, t));
    }
    (nodes, used)
}

fn network(n: usize, kg: &[(usize, usize, usize)], ddi: &[(usize, usize, usize)]) -> CombinedNetwork {
    // nodes 0..4 are drugs (they appear in DDI triples), the rest are KG entities
    let mut text = String::new();
    for i in 0..n {
        text.push_str(&format!("e{i}\tpad\te{i}\n"));
    }
    let mut vocab = Vocabularies::new();
    parse_triples(&text, Path::new("mem"), &mut vocab).unwrap();
    let rel = |vocab: &mut Vocabularies, r: usize, ddi: bool| vocab.relations.intern(&format!("{}{r}", if ddi { "ddi" } else { "kg" }));
    let kg: Vec<FactTriplet> = kg
        .iter()
        .map(|&(u, r, v)| FactTriplet::new(u % n, rel(&mut vocab, r, false), v % n))
        .collect();
    let train: Vec<FactTriplet> = ddi
        .iter()
        .map(|&(u, r, v)| FactTriplet::new(u % 4, rel(&mut vocab, r, true), v % 4))
        .filter(|t| t.head != t.tail)
        .collect();
    let splits = SplitSet {
        train,
        ..SplitSet::default()
    };
    build_combined_network(vocab, &splits, &kg)
}

proptest! {
    #[test]
    fn drugflow_extraction_matches_oracles(
        n in 5usize..12,
        kg in prop::collection::vec((0usize..12, 0usize..2, 0usize..12), 0..30),
        ddi in prop::collection::vec((0usize..4, 0usize..2, 0usize..4), 1..6),
        k in 1usize..3,
        p in 2usize..5,
    ) {
        let net = network(n, &kg, &ddi);
        let edges: Vec<FactTriplet> = net.edges().collect();
        let nn = net.num_nodes();
        let (h, t) = (0, 1);
        let cfg = ExtractConfig { hops: k, max_path_len: p, node_cap: usize::MAX, ..ExtractConfig::default() };
        let got = extract_pair_subgraph(&net, h, t, SubgraphMode::DrugFlow, &cfg).unwrap();

        // enclosing oracle: both within k undirected hops; drop direct DDI h -> t
        let (dh, dt) = (undirected_dist(&edges, nn, h), undirected_dist(&edges, nn, t));
        let inside: BTreeSet<usize> = (0..nn)
            .filter(|&v| v == h || v == t || (dh[v].is_some_and(|x| x <= k) && dt[v].is_some_and(|x| x <= k)))
            .collect();
        let enc_edges: Vec<FactTriplet> = edges
            .iter()
            .copied()
            .filter(|e| inside.contains(&e.head) && inside.contains(&e.tail))
            .filter(|e| !(e.head == h && e.tail == t && net.is_ddi_relation(e.relation)))
            .collect();
        let (nodes, used) = walk_sets(&enc_edges, h, t, p);
        let got_nodes: BTreeSet<usize> = got.nodes.iter().copied().collect();
        let got_edges: BTreeSet<(usize, usize, usize)> = got.global_edges().iter().map(|e| (e.head, e.relation, e.tail)).collect();
        prop_assert_eq!(got_nodes, nodes);
        prop_assert_eq!(got_edges, used);
        prop_assert_eq!(got.nodes[0], h);
        prop_assert_eq!(got.nodes[1], t);
    }

    #[test]
    fn node_cap_is_respected(
        n in 5usize..12,
        kg in prop::collection::vec((0usize..12, 0usize..2, 0usize..12), 0..40),
        ddi in prop::collection::vec((0usize..4, 0usize..2, 0usize..4), 1..6),
        cap in 2usize..6,
        mode in prop_oneof![Just(SubgraphMode::Random), Just(SubgraphMode::Enclosing), Just(SubgraphMode::DrugFlow)],
    ) {
        let net = network(n, &kg, &ddi);
        let cfg = ExtractConfig { node_cap: cap, random_nodes: 4, ..ExtractConfig::default() };
        let got = extract_pair_subgraph(&net, 0, 1, mode, &cfg).unwrap();
        prop_assert!(got.num_nodes() <= cap.max(2));
        prop_assert!(!got.global_edges().iter().any(|e| e.head == 0 && e.tail == 1 && net.is_ddi_relation(e.relation)));
        // same inputs give the same subgraph
        prop_assert_eq!(&got, &extract_pair_subgraph(&net, 0, 1, mode, &cfg).unwrap());
    }

    #[test]
    fn pruning_is_idempotent_and_monotone(
        n in 2usize..10,
        raw in prop::collection::vec((0usize..10, 2usize..5, 0usize..10), 0..25),
    ) {
        let mut edges: Vec<FactTriplet> = raw.iter().map(|&(u, r, v)| FactTriplet::new(u % n, r, v % n)).collect();
        edges.sort_unstable();
        let enc = EnclosingSubgraph { head: 0, tail: n - 1, nodes: (0..n).collect(), edges };
        let mut prev: Option<BTreeSet<FactTriplet>> = None;
        for p in 1..=5 {
            let s = directional_prune(&enc, p);
            prop_assert_eq!(&directional_prune(&s.as_enclosing(), p), &s);
            let cur: BTreeSet<FactTriplet> = s.global_edges().into_iter().collect();
            if let Some(q) = &prev {
                prop_assert!(q.is_subset(&cur));
            }
            prev = Some(cur);
        }
    }
}
