//! Explaining paths through a learned knowledge subgraph.

use std::collections::HashSet;
use std::fmt::Write as _;

use crate::graph::{RelId, Vocabularies, R_IDENTITY};
use crate::ksg::{EdgeKind, KnowledgeSubgraph, LearnedEdge};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hop {
    pub from: usize,
    pub relation: RelId,
    pub to: usize,
    pub strength: f64,
    pub kind: EdgeKind,
}

/// Directed path from the head drug (local 0) to the tail drug (local 1).
#[derive(Clone, Debug, PartialEq)]
pub struct ExplainingPath {
    /// Local node indices, head first, tail last.
    pub nodes: Vec<usize>,
    pub hops: Vec<Hop>,
    pub avg_strength: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExplainOptions {
    pub max_paths: usize,
    /// Pad every path to the subgraph's length bound with the tail's
    /// identity loop and average over the padded hops too. Off by default:
    /// identity strengths say nothing about the interaction.
    pub pad_with_identity: bool,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        Self {
            max_paths: 20,
            pad_with_identity: false,
        }
    }
}

/// All simple paths h -> t of at most `max_path_len` hops over edges with
/// positive strength, ranked by mean hop strength (descending), then by
/// length, then by the global ids of the visited nodes.
pub fn enumerate_explaining_paths(ks: &KnowledgeSubgraph, opts: &ExplainOptions) -> Vec<ExplainingPath> {
    let n = ks.base.num_nodes();
    let max_len = ks.base.max_path_len;
    let edges = ks.edges();
    let mut out_edges: Vec<Vec<&LearnedEdge>> = vec![Vec::new(); n];
    for e in &edges {
        if e.u != e.v {
            out_edges[e.u].push(e);
        }
    }
    let identity = edges
        .iter()
        .find(|e| e.u == 1 && e.v == 1 && e.relation == R_IDENTITY)
        .copied();

    let mut found = Vec::new();
    let mut nodes = vec![0usize];
    let mut hops: Vec<Hop> = Vec::new();
    let mut on_path = vec![false; n];
    on_path[0] = true;
    dfs(&out_edges, max_len, &mut nodes, &mut hops, &mut on_path, &mut found);

    let mut paths: Vec<ExplainingPath> = found
        .into_iter()
        .map(|(nodes, mut hops)| {
            if opts.pad_with_identity {
                if let Some(id) = identity {
                    while hops.len() < max_len {
                        hops.push(Hop {
                            from: 1,
                            relation: id.relation,
                            to: 1,
                            strength: id.strength,
                            kind: id.kind,
                        });
                    }
                }
            }
            let avg_strength = hops.iter().map(|h| h.strength).sum::<f64>() / hops.len() as f64;
            ExplainingPath {
                nodes,
                hops,
                avg_strength,
            }
        })
        .collect();
    let global = |p: &ExplainingPath| -> Vec<usize> { p.nodes.iter().map(|&v| ks.base.nodes[v]).collect() };
    let rels = |p: &ExplainingPath| -> Vec<RelId> { p.hops.iter().map(|h| h.relation).collect() };
    paths.sort_by(|a, b| {
        b.avg_strength
            .total_cmp(&a.avg_strength)
            .then(a.nodes.len().cmp(&b.nodes.len()))
            .then_with(|| global(a).cmp(&global(b)))
            .then_with(|| rels(a).cmp(&rels(b)))
    });
    paths.truncate(opts.max_paths);
    paths
}

fn dfs(
    out_edges: &[Vec<&LearnedEdge>],
    max_len: usize,
    nodes: &mut Vec<usize>,
    hops: &mut Vec<Hop>,
    on_path: &mut [bool],
    found: &mut Vec<(Vec<usize>, Vec<Hop>)>,
) {
    let at = *nodes.last().expect("path starts at the head");
    if at == 1 {
        found.push((nodes.clone(), hops.clone()));
        return;
    }
    if hops.len() == max_len {
        return;
    }
    for e in &out_edges[at] {
        if on_path[e.v] {
            continue;
        }
        on_path[e.v] = true;
        nodes.push(e.v);
        hops.push(Hop {
            from: e.u,
            relation: e.relation,
            to: e.v,
            strength: e.strength,
            kind: e.kind,
        });
        dfs(out_edges, max_len, nodes, hops, on_path, found);
        hops.pop();
        nodes.pop();
        on_path[e.v] = false;
    }
}

fn quote(s: &str) -> String {
    let mut q = String::with_capacity(s.len() + 2);
    q.push('"');
    for c in s.chars() {
        match c {
            '"' => q.push_str("\\\""),
            '\\' => q.push_str("\\\\"),
            '\n' => q.push_str("\\n"),
            c => q.push(c),
        }
    }
    q.push('"');
    q
}

pub const MIN_PENWIDTH: f64 = 0.5;
pub const MAX_PENWIDTH: f64 = 5.0;

/// Graphviz DOT rendering. Edge width grows linearly with strength, resemble
/// edges are dotted, head and tail are double circles, and edges on any of
/// `highlight` are drawn in red.
pub fn export_dot(ks: &KnowledgeSubgraph, vocab: &Vocabularies, highlight: &[ExplainingPath]) -> String {
    let on_path: HashSet<(usize, RelId, usize)> = highlight
        .iter()
        .flat_map(|p| p.hops.iter().map(|h| (h.from, h.relation, h.to)))
        .collect();
    let mut s = String::from("digraph knowledge_subgraph {\n  rankdir=LR;\n  node [shape=ellipse, fontsize=10];\n");
    for (i, &g) in ks.base.nodes.iter().enumerate() {
        let label = quote(vocab.nodes.label(g));
        let _ = match i {
            0 => writeln!(s, "  n{i} [label={label}, shape=doublecircle, style=filled, fillcolor=\"#f4a582\"];"),
            1 => writeln!(s, "  n{i} [label={label}, shape=doublecircle, style=filled, fillcolor=\"#92c5de\"];"),
            _ => writeln!(s, "  n{i} [label={label}];"),
        };
    }
    for e in ks.edges() {
        let width = MIN_PENWIDTH + (MAX_PENWIDTH - MIN_PENWIDTH) * e.strength.clamp(0.0, 1.0);
        let style = match e.kind {
            EdgeKind::Kept => "solid",
            EdgeKind::Resemble => "dotted",
        };
        let color = if on_path.contains(&(e.u, e.relation, e.v)) { "red" } else { "black" };
        let label = quote(&format!("{} ({:.3})", vocab.relations.label(e.relation), e.strength));
        let _ = writeln!(
            s,
            "  n{} -> n{} [label={label}, penwidth={width:.3}, style={style}, color={color}];",
            e.u, e.v
        );
    }
    s.push_str("}\n");
    s
}

/// Tab-separated report: rank, mean strength, then alternating node and
/// relation labels from head to tail.
pub fn path_report(ks: &KnowledgeSubgraph, vocab: &Vocabularies, paths: &[ExplainingPath]) -> String {
    let mut s = String::new();
    for (rank, p) in paths.iter().enumerate() {
        let _ = write!(s, "{}\t{:.6}\t{}", rank + 1, p.avg_strength, vocab.nodes.label(ks.base.nodes[p.nodes[0]]));
        for h in &p.hops {
            let _ = write!(
                s,
                "\t{}\t{}",
                vocab.relations.label(h.relation),
                vocab.nodes.label(ks.base.nodes[h.to])
            );
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::FactTriplet;
    use crate::ksg::Support;
    use crate::subgraph::DrugFlowSubgraph;
    use crate::tensor::Tensor;

    /// Knowledge subgraph over `sub` with hand-set strengths.
    fn with_strengths(sub: DrugFlowSubgraph, set: &[(usize, usize, RelId, f64)]) -> KnowledgeSubgraph {
        let support = Support::build(&sub, true);
        let mut strength = vec![0.0; support.len()];
        for &(u, v, r, x) in set {
            let i = support.find(u, v, support.slot_of(r).unwrap()).unwrap();
            strength[i] = x;
        }
        let n = sub.num_nodes();
        KnowledgeSubgraph {
            normalized: strength.clone(),
            strength,
            h: Tensor::zeros(vec![n, 1]),
            pooled: vec![0.0],
            logits: vec![],
            support,
            base: sub,
        }
    }

    fn vocab() -> Vocabularies {
        let mut v = Vocabularies::new();
        for l in ["h", "t", "a", "b"] {
            v.nodes.intern(l);
        }
        v.relations.intern("x");
        v.relations.intern("y");
        v
    }

    #[test]
    fn single_chain_average() {
        let e = [FactTriplet::new(0, 2, 2), FactTriplet::new(2, 3, 1)];
        let sub = DrugFlowSubgraph::from_global(0, 1, &[0, 1, 2], &e, 3);
        let ks = with_strengths(sub, &[(0, 2, 2, 0.4), (2, 1, 3, 0.6)]);
        let paths = enumerate_explaining_paths(&ks, &ExplainOptions::default());
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].nodes, vec![0, 2, 1]);
        assert!((paths[0].avg_strength - 0.5).abs() < 1e-12);
        let report = path_report(&ks, &vocab(), &paths);
        assert_eq!(report, "1\t0.500000\th\tx\ta\ty\tt\n");
    }

    #[test]
    fn identity_padding_is_opt_in() {
        let e = [
            FactTriplet::new(0, 2, 1),
            FactTriplet::new(1, R_IDENTITY, 1),
        ];
        let sub = DrugFlowSubgraph::from_global(0, 1, &[0, 1], &e, 3);
        let ks = with_strengths(sub, &[(0, 1, 2, 0.8), (1, 1, R_IDENTITY, 0.2)]);
        let plain = enumerate_explaining_paths(&ks, &ExplainOptions::default());
        assert_eq!(plain[0].hops.len(), 1);
        assert!((plain[0].avg_strength - 0.8).abs() < 1e-12);
        let padded = enumerate_explaining_paths(
            &ks,
            &ExplainOptions {
                pad_with_identity: true,
                ..Default::default()
            },
        );
        assert_eq!(padded[0].hops.len(), 3);
        assert!((padded[0].avg_strength - 0.4).abs() < 1e-12);
    }

    #[test]
    fn resemble_edges_form_paths_and_dotted_lines() {
        let sub = DrugFlowSubgraph::degenerate(0, 1, 4);
        let ks = with_strengths(sub.clone(), &[]);
        assert!(enumerate_explaining_paths(&ks, &ExplainOptions::default()).is_empty());
        let dot = export_dot(&ks, &vocab(), &[]);
        assert_eq!(dot.matches("->").count(), 0);
        assert_eq!(dot.matches("doublecircle").count(), 2);

        let ks = with_strengths(sub, &[(0, 1, crate::graph::R_SIM, 1.0)]);
        let paths = enumerate_explaining_paths(&ks, &ExplainOptions::default());
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].hops[0].kind, EdgeKind::Resemble);
        let dot = export_dot(&ks, &vocab(), &paths);
        assert!(dot.contains("penwidth=5.000, style=dotted, color=red"));
    }

    #[test]
    fn ranking_prefers_strength_then_length() {
        let e = [
            FactTriplet::new(0, 2, 1),
            FactTriplet::new(0, 2, 2),
            FactTriplet::new(2, 2, 1),
            FactTriplet::new(0, 3, 3),
            FactTriplet::new(3, 3, 1),
        ];
        let sub = DrugFlowSubgraph::from_global(0, 1, &[0, 1, 2, 3], &e, 4);
        let ks = with_strengths(
            sub,
            &[(0, 1, 2, 0.5), (0, 2, 2, 0.5), (2, 1, 2, 0.5), (0, 3, 3, 0.9), (3, 1, 3, 0.9)],
        );
        let paths = enumerate_explaining_paths(&ks, &ExplainOptions::default());
        let seqs: Vec<Vec<usize>> = paths.iter().map(|p| p.nodes.clone()).collect();
        assert_eq!(seqs, vec![vec![0, 3, 1], vec![0, 1], vec![0, 2, 1]]);
        let top = enumerate_explaining_paths(
            &ks,
            &ExplainOptions {
                max_paths: 1,
                ..Default::default()
            },
        );
        assert_eq!(top.len(), 1);
    }
}
