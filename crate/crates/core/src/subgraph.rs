//! Per-pair subgraph extraction: K-hop enclosing subgraphs, directional
//! pruning to h->t walks of bounded length, and the ablation variants.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{CombinedNetwork, Direction, FactTriplet, NodeId, RelId, Vocabularies, R_IDENTITY};

/// How the per-pair subgraph is built and whether its structure is learned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SubgraphMode {
    /// Uniform node sample from the neighborhoods of h and t; fixed structure.
    Random,
    /// Unpruned K-hop enclosing subgraph; fixed structure.
    Enclosing,
    /// Drug-flow subgraph; fixed structure.
    DrugFlow,
    /// Drug-flow subgraph with learned structure, including resemble edges.
    Knowledge,
    /// Learned structure without resemble edges.
    KnowledgeNoResemble,
}

impl SubgraphMode {
    pub fn learns_structure(self) -> bool {
        matches!(self, Self::Knowledge | Self::KnowledgeNoResemble)
    }

    pub fn adds_resemble(self) -> bool {
        self == Self::Knowledge
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Enclosing => "enclosing",
            Self::DrugFlow => "drugflow",
            Self::Knowledge => "knowledge",
            Self::KnowledgeNoResemble => "knowledge-no-resemble",
        }
    }
}

impl fmt::Display for SubgraphMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SubgraphMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "random" => Self::Random,
            "enclosing" => Self::Enclosing,
            "drugflow" | "drug-flow" => Self::DrugFlow,
            "knowledge" => Self::Knowledge,
            "knowledge-no-resemble" => Self::KnowledgeNoResemble,
            other => return Err(Error::Config(format!("unknown subgraph mode `{other}`"))),
        })
    }
}

/// Nodes within `k` undirected hops of `node`, including `node`, sorted.
pub fn k_hop_neighborhood(net: &CombinedNetwork, node: NodeId, k: usize) -> Result<Vec<NodeId>> {
    if k == 0 {
        return Err(Error::Config("hop count K must be at least 1".into()));
    }
    net.neighbors(node, Direction::Out)?;
    let mut seen: HashSet<NodeId> = HashSet::from([node]);
    let mut frontier = vec![node];
    for _ in 0..k {
        let mut next = Vec::new();
        for &u in &frontier {
            let outs = net.neighbors(u, Direction::Out)?;
            let ins = net.neighbors(u, Direction::In)?;
            for &(v, _) in outs.iter().chain(ins) {
                if seen.insert(v) {
                    next.push(v);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    let mut out: Vec<NodeId> = seen.into_iter().collect();
    out.sort_unstable();
    Ok(out)
}

/// Induced subgraph on the intersection of the K-hop neighborhoods of h and
/// t, always including h and t. Nodes and edges are sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnclosingSubgraph {
    pub head: NodeId,
    pub tail: NodeId,
    pub nodes: Vec<NodeId>,
    pub edges: Vec<FactTriplet>,
}

impl EnclosingSubgraph {
    /// Induced subgraph of `net` on `nodes` (h and t are added).
    pub fn induced(net: &CombinedNetwork, head: NodeId, tail: NodeId, nodes: &[NodeId]) -> Result<Self> {
        let mut nodes = nodes.to_vec();
        nodes.push(head);
        nodes.push(tail);
        nodes.sort_unstable();
        nodes.dedup();
        let keep: HashSet<NodeId> = nodes.iter().copied().collect();
        let mut edges = Vec::new();
        for &u in &nodes {
            for &(v, r) in net.neighbors(u, Direction::Out)? {
                if keep.contains(&v) {
                    edges.push(FactTriplet::new(u, r, v));
                }
            }
        }
        Ok(Self {
            head,
            tail,
            nodes,
            edges,
        })
    }

    /// Drop the direct DDI edges h->t, so a labelled pair cannot read its own
    /// label off the graph.
    pub fn without_pair_ddi_edges(mut self, net: &CombinedNetwork) -> Self {
        let (h, t) = (self.head, self.tail);
        self.edges
            .retain(|e| !(e.head == h && e.tail == t && net.is_ddi_relation(e.relation)));
        self
    }
}

pub fn enclosing_subgraph(net: &CombinedNetwork, h: NodeId, t: NodeId, k: usize) -> Result<EnclosingSubgraph> {
    if h == t {
        return Err(Error::SelfPair(h));
    }
    let nh = k_hop_neighborhood(net, h, k)?;
    let nt: HashSet<NodeId> = k_hop_neighborhood(net, t, k)?.into_iter().collect();
    let common: Vec<NodeId> = nh.into_iter().filter(|v| nt.contains(v)).collect();
    EnclosingSubgraph::induced(net, h, t, &common)
}

/// Per-pair subgraph with a local index: h is local 0, t is local 1, the
/// remaining nodes follow in ascending global id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DrugFlowSubgraph {
    pub pair: (NodeId, NodeId),
    pub nodes: Vec<NodeId>,
    /// `(local u, relation, local v)`, sorted.
    pub edges: Vec<(usize, RelId, usize)>,
    /// Distinct relations present in `edges`, ascending.
    pub relations: Vec<RelId>,
    /// Path-length bound the subgraph was built with.
    pub max_path_len: usize,
}

impl DrugFlowSubgraph {
    /// The `({h, t}, {}, {})` subgraph.
    pub fn degenerate(h: NodeId, t: NodeId, max_path_len: usize) -> Self {
        Self {
            pair: (h, t),
            nodes: vec![h, t],
            edges: Vec::new(),
            relations: Vec::new(),
            max_path_len,
        }
    }

    /// Build from global nodes/edges; edges touching unknown nodes are dropped.
    pub fn from_global(
        h: NodeId,
        t: NodeId,
        nodes: &[NodeId],
        edges: &[FactTriplet],
        max_path_len: usize,
    ) -> Self {
        let mut rest: Vec<NodeId> = nodes.iter().copied().filter(|&v| v != h && v != t).collect();
        rest.sort_unstable();
        rest.dedup();
        let mut order = vec![h, t];
        order.extend(rest);
        let local: HashMap<NodeId, usize> = order.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut e: Vec<(usize, RelId, usize)> = edges
            .iter()
            .filter_map(|x| Some((*local.get(&x.head)?, x.relation, *local.get(&x.tail)?)))
            .collect();
        e.sort_unstable();
        e.dedup();
        let mut relations: Vec<RelId> = e.iter().map(|x| x.1).collect();
        relations.sort_unstable();
        relations.dedup();
        Self {
            pair: (h, t),
            nodes: order,
            edges: e,
            relations,
            max_path_len,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_degenerate(&self) -> bool {
        self.edges.is_empty()
    }

    /// Binary adjacency entry: is `(u, r, v)` an edge (local indices)?
    pub fn adjacency(&self, u: usize, v: usize, r: RelId) -> bool {
        self.edges.binary_search(&(u, r, v)).is_ok()
    }

    /// Dense binary tensor indexed `[u][v][k]` with `k` the position of the
    /// relation in `relations`.
    pub fn adjacency_tensor(&self) -> Vec<u8> {
        let n = self.num_nodes();
        let nr = self.relations.len();
        let mut a = vec![0u8; n * n * nr];
        for &(u, r, v) in &self.edges {
            let k = self.relations.binary_search(&r).expect("relation listed");
            a[(u * n + v) * nr + k] = 1;
        }
        a
    }

    pub fn global_edges(&self) -> Vec<FactTriplet> {
        self.edges
            .iter()
            .map(|&(u, r, v)| FactTriplet::new(self.nodes[u], r, self.nodes[v]))
            .collect()
    }

    /// Re-read as an enclosing subgraph (used to re-prune).
    pub fn as_enclosing(&self) -> EnclosingSubgraph {
        let mut nodes = self.nodes.clone();
        nodes.sort_unstable();
        let mut edges = self.global_edges();
        edges.sort_unstable();
        EnclosingSubgraph {
            head: self.pair.0,
            tail: self.pair.1,
            nodes,
            edges,
        }
    }

    /// Debug dump: pair, nodes and edges by label, tab separated.
    pub fn dump_text(&self, vocab: &Vocabularies) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "pair\t{}\t{}",
            vocab.nodes.label(self.pair.0),
            vocab.nodes.label(self.pair.1)
        );
        for (i, &v) in self.nodes.iter().enumerate() {
            let _ = writeln!(s, "node\t{i}\t{}", vocab.nodes.label(v));
        }
        for &(u, r, v) in &self.edges {
            let _ = writeln!(
                s,
                "edge\t{}\t{}\t{}",
                vocab.nodes.label(self.nodes[u]),
                vocab.relations.label(r),
                vocab.nodes.label(self.nodes[v])
            );
        }
        s
    }
}

/// BFS distances over directed edges restricted to a node set.
fn directed_distances(
    start: NodeId,
    edges: &[FactTriplet],
    forward: bool,
) -> HashMap<NodeId, usize> {
    let mut adj: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
    for e in edges {
        let (a, b) = if forward { (e.head, e.tail) } else { (e.tail, e.head) };
        adj.entry(a).or_default().push(b);
    }
    let mut dist = HashMap::from([(start, 0usize)]);
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        let du = dist[&u];
        for &v in adj.get(&u).map(Vec::as_slice).unwrap_or(&[]) {
            if let std::collections::hash_map::Entry::Vacant(slot) = dist.entry(v) {
                slot.insert(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Keep exactly the nodes and edges lying on some directed walk h -> t of
/// length at most `p`. A node `v` survives iff `d(h,v) + d(v,t) <= p`; an
/// edge `(u, r, v)` iff `d(h,u) + 1 + d(v,t) <= p`. When the shortest walk
/// is shorter than `p`, a `(t, identity, t)` self-loop pads it.
pub fn directional_prune(enc: &EnclosingSubgraph, p: usize) -> DrugFlowSubgraph {
    let (h, t) = (enc.head, enc.tail);
    let fwd = directed_distances(h, &enc.edges, true);
    let bwd = directed_distances(t, &enc.edges, false);
    let shortest = match fwd.get(&t) {
        Some(&d) if d <= p => d,
        _ => return DrugFlowSubgraph::degenerate(h, t, p),
    };
    let on_walk = |v: NodeId| match (fwd.get(&v), bwd.get(&v)) {
        (Some(a), Some(b)) => a + b <= p,
        _ => false,
    };
    let nodes: Vec<NodeId> = enc.nodes.iter().copied().filter(|&v| on_walk(v)).collect();
    let mut edges: Vec<FactTriplet> = enc
        .edges
        .iter()
        .filter(|e| match (fwd.get(&e.head), bwd.get(&e.tail)) {
            (Some(a), Some(b)) => a + 1 + b <= p,
            _ => false,
        })
        .copied()
        .collect();
    if shortest < p {
        edges.push(FactTriplet::new(t, R_IDENTITY, t));
    }
    DrugFlowSubgraph::from_global(h, t, &nodes, &edges, p)
}

/// Drop nodes beyond `cap`, largest `d(h,v) + d(v,t)` first (unreachable
/// counts as infinite), ties by larger global id first. h and t are kept.
pub fn cap_nodes(sub: DrugFlowSubgraph, cap: usize) -> DrugFlowSubgraph {
    if sub.num_nodes() <= cap.max(2) {
        return sub;
    }
    let (h, t) = sub.pair;
    let edges = sub.global_edges();
    let fwd = directed_distances(h, &edges, true);
    let bwd = directed_distances(t, &edges, false);
    let mut rest: Vec<(usize, NodeId)> = sub.nodes[2..]
        .iter()
        .map(|&v| {
            let d = match (fwd.get(&v), bwd.get(&v)) {
                (Some(a), Some(b)) => a + b,
                _ => usize::MAX,
            };
            (d, v)
        })
        .collect();
    rest.sort_unstable();
    rest.truncate(cap.max(2) - 2);
    let keep: Vec<NodeId> = rest.into_iter().map(|(_, v)| v).collect();
    DrugFlowSubgraph::from_global(h, t, &keep, &edges, sub.max_path_len)
}

/// Extraction settings shared by every subgraph mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtractConfig {
    pub hops: usize,
    pub max_path_len: usize,
    pub node_cap: usize,
    pub random_nodes: usize,
    pub seed: u64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            hops: 2,
            max_path_len: 4,
            node_cap: 256,
            random_nodes: 16,
            seed: 0,
        }
    }
}

fn pair_seed(seed: u64, h: NodeId, t: NodeId) -> u64 {
    seed ^ (h as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (t as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// Fixed-size uniform sample from the K-hop neighborhoods of h and t.
pub fn random_subgraph(net: &CombinedNetwork, h: NodeId, t: NodeId, cfg: &ExtractConfig) -> Result<EnclosingSubgraph> {
    if h == t {
        return Err(Error::SelfPair(h));
    }
    let mut pool = k_hop_neighborhood(net, h, cfg.hops)?;
    pool.extend(k_hop_neighborhood(net, t, cfg.hops)?);
    pool.sort_unstable();
    pool.dedup();
    pool.retain(|&v| v != h && v != t);
    let mut rng = ChaCha8Rng::seed_from_u64(pair_seed(cfg.seed, h, t));
    let picked: Vec<NodeId> = pool
        .choose_multiple(&mut rng, cfg.random_nodes.min(pool.len()))
        .copied()
        .collect();
    EnclosingSubgraph::induced(net, h, t, &picked)
}

/// Subgraph for pair `(h, t)` under `mode`. Direct DDI edges h->t are never
/// part of the result.
pub fn extract_pair_subgraph(
    net: &CombinedNetwork,
    h: NodeId,
    t: NodeId,
    mode: SubgraphMode,
    cfg: &ExtractConfig,
) -> Result<DrugFlowSubgraph> {
    let sub = match mode {
        SubgraphMode::Random => {
            let enc = random_subgraph(net, h, t, cfg)?.without_pair_ddi_edges(net);
            DrugFlowSubgraph::from_global(h, t, &enc.nodes, &enc.edges, cfg.max_path_len)
        }
        SubgraphMode::Enclosing => {
            let enc = enclosing_subgraph(net, h, t, cfg.hops)?.without_pair_ddi_edges(net);
            DrugFlowSubgraph::from_global(h, t, &enc.nodes, &enc.edges, cfg.max_path_len)
        }
        _ => {
            let enc = enclosing_subgraph(net, h, t, cfg.hops)?.without_pair_ddi_edges(net);
            directional_prune(&enc, cfg.max_path_len)
        }
    };
    Ok(cap_nodes(sub, cfg.node_cap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_combined_network, parse_triples, SplitSet};
    use std::path::Path;

    fn net(text: &str) -> CombinedNetwork {
        let mut v = Vocabularies::new();
        let t = parse_triples(text, Path::new("mem"), &mut v).unwrap();
        build_combined_network(v, &SplitSet::default(), &t)
    }

    fn id(net: &CombinedNetwork, l: &str) -> NodeId {
        net.vocab().nodes.get(l).unwrap()
    }

    #[test]
    fn chain_one_hop() {
        let g = net("a\tr\tb\nb\tr\tc\n");
        let got = k_hop_neighborhood(&g, id(&g, "a"), 1).unwrap();
        let mut want = vec![id(&g, "a"), id(&g, "b")];
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn isolated_node_is_alone() {
        let g = net("a\tr\tb\nz\tr\tz\n");
        let z = id(&g, "z");
        assert_eq!(k_hop_neighborhood(&g, z, 3).unwrap(), vec![z]);
        assert!(k_hop_neighborhood(&g, 77, 1).is_err());
    }

    #[test]
    fn star_common_neighbor() {
        let g = net("h\tr\tm\nt\tr\tm\nh\tr\tx\nt\tr\ty\n");
        let enc = enclosing_subgraph(&g, id(&g, "h"), id(&g, "t"), 1).unwrap();
        let mut want = vec![id(&g, "h"), id(&g, "t"), id(&g, "m")];
        want.sort();
        assert_eq!(enc.nodes, want);
    }

    #[test]
    fn adjacent_pair_without_common_neighbors() {
        let g = net("h\tr\tt\nh\tr\tx\nt\tr\ty\n");
        let enc = enclosing_subgraph(&g, id(&g, "h"), id(&g, "t"), 1).unwrap();
        assert_eq!(enc.nodes.len(), 2);
        assert_eq!(enc.edges.len(), 1);
    }

    #[test]
    fn self_pair_rejected() {
        let g = net("h\tr\tt\n");
        assert!(matches!(
            enclosing_subgraph(&g, 0, 0, 2),
            Err(Error::SelfPair(0))
        ));
    }

    #[test]
    fn prune_drops_dead_end_and_pads() {
        let g = net("h\tr\ta\na\tr\tt\nh\tr\tb\n");
        let (h, t, a) = (id(&g, "h"), id(&g, "t"), id(&g, "a"));
        let enc = enclosing_subgraph(&g, h, t, 2).unwrap();
        let dfs = directional_prune(&enc, 2);
        assert_eq!(dfs.nodes, vec![h, t, a]);
        // shortest path already has length P: no identity padding
        assert!(!dfs.edges.iter().any(|e| e.1 == R_IDENTITY));
        let dfs3 = directional_prune(&enc, 3);
        assert_eq!(dfs3.nodes, vec![h, t, a]);
        assert!(dfs3.adjacency(1, 1, R_IDENTITY));
    }

    #[test]
    fn unreachable_pair_is_degenerate() {
        let g = net("t\tr\tm\nh\tr\tm\n");
        let (h, t) = (id(&g, "h"), id(&g, "t"));
        let enc = enclosing_subgraph(&g, h, t, 2).unwrap();
        let dfs = directional_prune(&enc, 4);
        assert_eq!(dfs.nodes, vec![h, t]);
        assert!(dfs.edges.is_empty());
        assert!(dfs.relations.is_empty());
    }

    #[test]
    fn direct_ddi_edge_removed_for_pair() {
        let mut v = Vocabularies::new();
        let ddi = parse_triples("h\tddi\tt\n", Path::new("m"), &mut v).unwrap();
        let kg = parse_triples("h\tbinds\tg\ng\tbinds\tt\n", Path::new("m"), &mut v).unwrap();
        let split = SplitSet {
            train: ddi,
            ..Default::default()
        };
        let g = build_combined_network(v, &split, &kg);
        let (h, t) = (id(&g, "h"), id(&g, "t"));
        let sub = extract_pair_subgraph(&g, h, t, SubgraphMode::DrugFlow, &ExtractConfig::default()).unwrap();
        let ddi_rel = g.vocab().relations.get("ddi").unwrap();
        assert!(!sub.edges.iter().any(|e| e.1 == ddi_rel));
        assert_eq!(sub.num_nodes(), 3);
    }

    #[test]
    fn node_cap_keeps_closest() {
        // h->a->t (sum 2), h->b->c->t (sum 3)
        let g = net("h\tr\ta\na\tr\tt\nh\tr\tb\nb\tr\tc\nc\tr\tt\n");
        let (h, t) = (id(&g, "h"), id(&g, "t"));
        let enc = enclosing_subgraph(&g, h, t, 3).unwrap();
        let dfs = directional_prune(&enc, 4);
        assert_eq!(dfs.num_nodes(), 5);
        let capped = cap_nodes(dfs, 3);
        assert_eq!(capped.nodes, vec![h, t, id(&g, "a")]);
    }

    #[test]
    fn mode_round_trip() {
        for m in [
            SubgraphMode::Random,
            SubgraphMode::Enclosing,
            SubgraphMode::DrugFlow,
            SubgraphMode::Knowledge,
            SubgraphMode::KnowledgeNoResemble,
        ] {
            assert_eq!(m.as_str().parse::<SubgraphMode>().unwrap(), m);
        }
        assert!("bogus".parse::<SubgraphMode>().is_err());
    }

    #[test]
    fn random_subgraph_is_seeded() {
        let g = net("h\tr\ta\nh\tr\tb\nh\tr\tc\nt\tr\td\nt\tr\te\na\tr\tt\n");
        let (h, t) = (id(&g, "h"), id(&g, "t"));
        let cfg = ExtractConfig {
            random_nodes: 2,
            ..Default::default()
        };
        let a = random_subgraph(&g, h, t, &cfg).unwrap();
        let b = random_subgraph(&g, h, t, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.nodes.len(), 4);
    }
}
