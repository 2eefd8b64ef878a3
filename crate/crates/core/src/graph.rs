//! Triple loading, vocabularies and the combined DDI + KG network.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type NodeId = usize;
pub type RelId = usize;

/// Reserved relation padding short drug-flow paths with `(t, identity, t)`.
pub const R_IDENTITY: RelId = 0;
/// Reserved relation for learner-added "resemble" edges.
pub const R_SIM: RelId = 1;
pub const IDENTITY_LABEL: &str = "__identity__";
pub const RESEMBLE_LABEL: &str = "__resemble__";

/// Bidirectional label <-> dense id map; ids are assigned in first-seen order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, label: &str) -> usize {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len();
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), id);
        id
    }

    pub fn get(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// SHA-256 over the labels in id order, newline separated.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for l in &self.labels {
            h.update(l.as_bytes());
            h.update(b"\n");
        }
        hex(&h.finalize())
    }

    /// Labels closest to `query` by edit distance, for error hints.
    pub fn nearest(&self, query: &str, k: usize) -> Vec<&str> {
        let mut scored: Vec<(usize, &str)> = self
            .labels
            .iter()
            .map(|l| (edit_distance(query, l), l.as_str()))
            .collect();
        scored.sort();
        scored.into_iter().take(k).map(|(_, l)| l).collect()
    }
}

fn edit_distance(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.chars().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Node and relation vocabularies. The relation vocabulary always starts
/// with the two reserved relations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabularies {
    pub nodes: Vocab,
    pub relations: Vocab,
}

impl Default for Vocabularies {
    fn default() -> Self {
        let mut relations = Vocab::new();
        relations.intern(IDENTITY_LABEL);
        relations.intern(RESEMBLE_LABEL);
        Self {
            nodes: Vocab::new(),
            relations,
        }
    }
}

impl Vocabularies {
    pub fn new() -> Self {
        Self::default()
    }

    /// Look up a node label, reporting the nearest known labels on a miss.
    pub fn node(&self, label: &str) -> Result<NodeId> {
        self.nodes.get(label).ok_or_else(|| {
            let near = self.nodes.nearest(label, 3);
            Error::UnknownLabel {
                label: label.to_owned(),
                hint: if near.is_empty() {
                    String::new()
                } else {
                    format!(" (nearest known: {})", near.join(", "))
                },
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FactTriplet {
    pub head: NodeId,
    pub relation: RelId,
    pub tail: NodeId,
}

impl FactTriplet {
    pub fn new(head: NodeId, relation: RelId, tail: NodeId) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

/// Read a tab-separated triple file. Lines starting with `#` and blank lines
/// are skipped; repeated triples are kept once, in first-seen order.
pub fn load_triples(path: &Path, vocab: &mut Vocabularies) -> Result<Vec<FactTriplet>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_triples(&text, path, vocab)
}

pub fn parse_triples(text: &str, origin: &Path, vocab: &mut Vocabularies) -> Result<Vec<FactTriplet>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = if line.contains('\t') {
            line.split('\t').map(str::trim).collect()
        } else {
            line.split_whitespace().collect()
        };
        let parse_err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            message,
        };
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(parse_err(format!(
                "expected head<TAB>relation<TAB>tail, found {} field(s)",
                fields.len()
            )));
        }
        if fields[1] == IDENTITY_LABEL || fields[1] == RESEMBLE_LABEL {
            return Err(parse_err(format!("relation `{}` is reserved", fields[1])));
        }
        let t = FactTriplet::new(
            vocab.nodes.intern(fields[0]),
            vocab.relations.intern(fields[1]),
            vocab.nodes.intern(fields[2]),
        );
        if seen.insert(t) {
            out.push(t);
        }
    }
    Ok(out)
}

pub fn write_triples(path: &Path, triples: &[FactTriplet], vocab: &Vocabularies) -> Result<()> {
    let mut s = String::new();
    for t in triples {
        let _ = writeln!(
            s,
            "{}\t{}\t{}",
            vocab.nodes.label(t.head),
            vocab.relations.label(t.relation),
            vocab.nodes.label(t.tail)
        );
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitSet {
    pub train: Vec<FactTriplet>,
    pub valid: Vec<FactTriplet>,
    pub test: Vec<FactTriplet>,
}

impl SplitSet {
    pub fn all(&self) -> impl Iterator<Item = &FactTriplet> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }
}

/// Split sizes for `n` items: validation and test are floored, the remainder
/// goes to training.
pub fn split_sizes(n: usize, ratios: (u32, u32, u32)) -> (usize, usize, usize) {
    let total = (ratios.0 + ratios.1 + ratios.2) as u128;
    let valid = (n as u128 * ratios.1 as u128 / total) as usize;
    let test = (n as u128 * ratios.2 as u128 / total) as usize;
    (n - valid - test, valid, test)
}

/// Seeded shuffle, then partition into train/valid/test by `ratios`.
pub fn split_ddi(triples: &[FactTriplet], ratios: (u32, u32, u32), seed: u64) -> Result<SplitSet> {
    if ratios.0 == 0 || ratios.1 == 0 || ratios.2 == 0 {
        return Err(Error::Config(format!("split ratios must be positive, got {ratios:?}")));
    }
    if triples.len() < 3 {
        return Err(Error::Data(format!(
            "need at least 3 triples to split, got {}",
            triples.len()
        )));
    }
    let mut shuffled = triples.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (n_train, n_valid, _) = split_sizes(shuffled.len(), ratios);
    let test = shuffled.split_off(n_train + n_valid);
    let valid = shuffled.split_off(n_train);
    Ok(SplitSet {
        train: shuffled,
        valid,
        test,
    })
}

/// Keep only the first relation seen for every ordered drug pair.
pub fn filter_one_relation_per_pair(triples: &[FactTriplet]) -> Vec<FactTriplet> {
    let mut seen = HashSet::new();
    triples
        .iter()
        .filter(|t| seen.insert((t.head, t.tail)))
        .copied()
        .collect()
}

/// Rank relations by decreasing triple count (ties by relation id), keep
/// those whose zero-based rank lies in `[rank_start, rank_end)` and that
/// have at least `min_triples` triples.
pub fn filter_relation_rank_window(
    triples: &[FactTriplet],
    rank_start: usize,
    rank_end: usize,
    min_triples: usize,
) -> Vec<FactTriplet> {
    let mut counts: HashMap<RelId, usize> = HashMap::new();
    for t in triples {
        *counts.entry(t.relation).or_default() += 1;
    }
    let mut ranked: Vec<(RelId, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let keep: HashSet<RelId> = ranked
        .iter()
        .enumerate()
        .filter(|(rank, (_, c))| *rank >= rank_start && *rank < rank_end && *c >= min_triples)
        .map(|(_, (r, _))| *r)
        .collect();
    triples
        .iter()
        .filter(|t| keep.contains(&t.relation))
        .copied()
        .collect()
}

/// Seeded sample of `round(fraction * n)` triples, returned in original order.
pub fn sample_fraction(triples: &[FactTriplet], fraction: f64, seed: u64) -> Vec<FactTriplet> {
    if fraction >= 1.0 {
        return triples.to_vec();
    }
    let keep = ((triples.len() as f64) * fraction.max(0.0)).round() as usize;
    let mut idx: Vec<usize> = (0..triples.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(keep);
    idx.sort_unstable();
    idx.into_iter().map(|i| triples[i]).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    In,
    Out,
}

/// Compressed adjacency: `adj[offsets[v]..offsets[v + 1]]`.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Csr {
    offsets: Vec<usize>,
    adj: Vec<(NodeId, RelId)>,
}

impl Csr {
    fn build(n: usize, pairs: impl Iterator<Item = (NodeId, NodeId, RelId)>) -> Self {
        let mut lists: Vec<Vec<(NodeId, RelId)>> = vec![Vec::new(); n];
        for (at, nb, r) in pairs {
            lists[at].push((nb, r));
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut adj = Vec::new();
        offsets.push(0);
        for mut l in lists {
            l.sort_unstable();
            adj.extend(l);
            offsets.push(adj.len());
        }
        Self { offsets, adj }
    }

    fn row(&self, v: NodeId) -> &[(NodeId, RelId)] {
        &self.adj[self.offsets[v]..self.offsets[v + 1]]
    }
}

/// Immutable multirelational directed graph: training DDI edges plus the
/// leakage-free external KG.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CombinedNetwork {
    vocab: Vocabularies,
    out_edges: Csr,
    in_edges: Csr,
    ddi_relations: Vec<RelId>,
    drug_nodes: Vec<NodeId>,
    is_drug: Vec<bool>,
    is_ddi_relation: Vec<bool>,
}

/// Union of the training DDI edges and the KG, after removing every KG edge
/// whose endpoints are both drugs. Drugs and DDI relations are taken from
/// all splits; only training DDI edges enter the graph.
pub fn build_combined_network(vocab: Vocabularies, ddi: &SplitSet, kg: &[FactTriplet]) -> CombinedNetwork {
    let n = vocab.nodes.len();
    let mut is_drug = vec![false; n];
    let mut is_ddi_relation = vec![false; vocab.relations.len()];
    for t in ddi.all() {
        is_drug[t.head] = true;
        is_drug[t.tail] = true;
        is_ddi_relation[t.relation] = true;
    }
    let mut edges: Vec<FactTriplet> = ddi.train.clone();
    edges.extend(kg.iter().filter(|t| !(is_drug[t.head] && is_drug[t.tail])));
    edges.sort_unstable();
    edges.dedup();
    CombinedNetwork::from_parts(vocab, &edges, is_drug, is_ddi_relation)
}

impl CombinedNetwork {
    /// Assemble a network from an explicit edge list (no leakage filtering).
    pub fn from_parts(
        vocab: Vocabularies,
        edges: &[FactTriplet],
        mut is_drug: Vec<bool>,
        mut is_ddi_relation: Vec<bool>,
    ) -> Self {
        let n = vocab.nodes.len();
        is_drug.resize(n, false);
        is_ddi_relation.resize(vocab.relations.len(), false);
        let out_edges = Csr::build(n, edges.iter().map(|t| (t.head, t.tail, t.relation)));
        let in_edges = Csr::build(n, edges.iter().map(|t| (t.tail, t.head, t.relation)));
        let drug_nodes = (0..n).filter(|&v| is_drug[v]).collect();
        let ddi_relations = (0..is_ddi_relation.len())
            .filter(|&r| is_ddi_relation[r])
            .collect();
        Self {
            vocab,
            out_edges,
            in_edges,
            ddi_relations,
            drug_nodes,
            is_drug,
            is_ddi_relation,
        }
    }

    pub fn vocab(&self) -> &Vocabularies {
        &self.vocab
    }

    pub fn num_nodes(&self) -> usize {
        self.vocab.nodes.len()
    }

    pub fn num_relations(&self) -> usize {
        self.vocab.relations.len()
    }

    pub fn num_edges(&self) -> usize {
        self.out_edges.adj.len()
    }

    /// DDI relation ids in ascending order; position = class index.
    pub fn ddi_relations(&self) -> &[RelId] {
        &self.ddi_relations
    }

    pub fn class_of(&self, relation: RelId) -> Option<usize> {
        self.ddi_relations.binary_search(&relation).ok()
    }

    pub fn drug_nodes(&self) -> &[NodeId] {
        &self.drug_nodes
    }

    pub fn is_drug(&self, v: NodeId) -> bool {
        self.is_drug.get(v).copied().unwrap_or(false)
    }

    pub fn is_ddi_relation(&self, r: RelId) -> bool {
        self.is_ddi_relation.get(r).copied().unwrap_or(false)
    }

    fn check(&self, v: NodeId) -> Result<()> {
        if v < self.num_nodes() {
            Ok(())
        } else {
            Err(Error::InvalidNode(v))
        }
    }

    /// Incoming or outgoing `(neighbor, relation)` pairs, sorted.
    pub fn neighbors(&self, v: NodeId, dir: Direction) -> Result<&[(NodeId, RelId)]> {
        self.check(v)?;
        Ok(match dir {
            Direction::Out => self.out_edges.row(v),
            Direction::In => self.in_edges.row(v),
        })
    }

    /// All edges ordered by `(head, tail, relation)`.
    pub fn edges(&self) -> impl Iterator<Item = FactTriplet> + '_ {
        (0..self.num_nodes()).flat_map(move |u| {
            self.out_edges
                .row(u)
                .iter()
                .map(move |&(v, r)| FactTriplet::new(u, r, v))
        })
    }

    /// Edge endpoints as parallel `(src, dst)` arrays grouped by target.
    pub fn incoming_endpoints(&self) -> (Vec<NodeId>, Vec<NodeId>) {
        let mut src = Vec::with_capacity(self.num_edges());
        let mut dst = Vec::with_capacity(self.num_edges());
        for v in 0..self.num_nodes() {
            for &(u, _) in self.in_edges.row(v) {
                src.push(u);
                dst.push(v);
            }
        }
        (src, dst)
    }

    pub fn has_edge(&self, u: NodeId, r: RelId, v: NodeId) -> bool {
        u < self.num_nodes() && self.out_edges.row(u).binary_search(&(v, r)).is_ok()
    }

    /// Canonical text form: vocabularies, flags and the sorted edge list.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        for (i, l) in self.vocab.nodes.labels().iter().enumerate() {
            let _ = writeln!(s, "node\t{i}\t{l}\t{}", u8::from(self.is_drug[i]));
        }
        for (i, l) in self.vocab.relations.labels().iter().enumerate() {
            let _ = writeln!(s, "rel\t{i}\t{l}\t{}", u8::from(self.is_ddi_relation[i]));
        }
        for e in self.edges() {
            let _ = writeln!(s, "edge\t{}\t{}\t{}", e.head, e.relation, e.tail);
        }
        s
    }

    pub fn digest(&self) -> String {
        hex(&Sha256::digest(self.canonical_text().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str, vocab: &mut Vocabularies) -> Result<Vec<FactTriplet>> {
        parse_triples(text, Path::new("mem"), vocab)
    }

    #[test]
    fn parses_two_lines() {
        let mut v = Vocabularies::new();
        let t = parse("A\tr1\tB\nB\tr2\tC\n", &mut v).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(v.nodes.len(), 3);
        assert_eq!(v.relations.len(), 2 + 2);
    }

    #[test]
    fn whitespace_separated_lines_are_accepted() {
        let mut v = Vocabularies::new();
        let t = parse("A r1 B\nB r2 C", &mut v).unwrap();
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn duplicates_and_comments_dropped() {
        let mut v = Vocabularies::new();
        let t = parse("# header\nA\tr1\tB\n\nA\tr1\tB\n", &mut v).unwrap();
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let mut v = Vocabularies::new();
        match parse("A\tr1\tB\nA\tr1\n", &mut v) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reserved_relation_rejected() {
        let mut v = Vocabularies::new();
        assert!(parse("A\t__resemble__\tB", &mut v).is_err());
    }

    #[test]
    fn empty_file_is_empty_list() {
        let mut v = Vocabularies::new();
        assert!(parse("", &mut v).unwrap().is_empty());
    }

    fn sample_net() -> CombinedNetwork {
        let mut v = Vocabularies::new();
        let ddi = parse("drugA\tddi1\tdrugB\ndrugB\tddi2\tdrugC\n", &mut v).unwrap();
        let kg = parse(
            "drugA\tresembles\tdrugB\ndrugA\tbinds\tgene1\ngene1\tbinds\tdrugC\n",
            &mut v,
        )
        .unwrap();
        let split = SplitSet {
            train: ddi.clone(),
            ..Default::default()
        };
        build_combined_network(v, &split, &kg)
    }

    #[test]
    fn leakage_removal_drops_drug_drug_kg_edges() {
        let net = sample_net();
        let voc = net.vocab();
        let a = voc.nodes.get("drugA").unwrap();
        let b = voc.nodes.get("drugB").unwrap();
        let g = voc.nodes.get("gene1").unwrap();
        let res = voc.relations.get("resembles").unwrap();
        let binds = voc.relations.get("binds").unwrap();
        assert!(!net.has_edge(a, res, b));
        assert!(net.has_edge(a, binds, g));
        assert_eq!(net.num_edges(), 4);
    }

    #[test]
    fn held_out_ddi_edges_are_not_in_the_network() {
        let mut v = Vocabularies::new();
        let ddi = parse("a\tx\tb\nb\tx\tc\nc\tx\td\n", &mut v).unwrap();
        let split = SplitSet {
            train: vec![ddi[0]],
            valid: vec![ddi[1]],
            test: vec![ddi[2]],
        };
        let net = build_combined_network(v, &split, &[]);
        assert_eq!(net.num_edges(), 1);
        assert_eq!(net.drug_nodes().len(), 4);
    }

    #[test]
    fn neighbors_sorted_and_isolated() {
        let mut v = Vocabularies::new();
        let kg = parse("b\tr2\tv\na\tr1\tv\niso\tr1\tiso2\n", &mut v).unwrap();
        let net = build_combined_network(v, &SplitSet::default(), &kg);
        let voc = net.vocab();
        let vv = voc.nodes.get("v").unwrap();
        let a = voc.nodes.get("a").unwrap();
        let b = voc.nodes.get("b").unwrap();
        let r1 = voc.relations.get("r1").unwrap();
        let r2 = voc.relations.get("r2").unwrap();
        assert_eq!(net.neighbors(vv, Direction::In).unwrap(), &[(b, r2), (a, r1)]);
        assert!(net.neighbors(a, Direction::In).unwrap().is_empty());
        assert!(matches!(net.neighbors(99, Direction::Out), Err(Error::InvalidNode(99))));
    }

    #[test]
    fn split_ten_triples() {
        let t: Vec<FactTriplet> = (0..10).map(|i| FactTriplet::new(i, 2, i + 1)).collect();
        let s = split_ddi(&t, (7, 1, 2), 3).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (7, 1, 2));
        assert_eq!(s, split_ddi(&t, (7, 1, 2), 3).unwrap());
        assert!(split_ddi(&t[..2], (7, 1, 2), 3).is_err());
    }

    #[test]
    fn rank_window_filter() {
        // relation 5: 3 triples, relation 6: 2, relation 7: 1
        let t = vec![
            FactTriplet::new(0, 5, 1),
            FactTriplet::new(1, 5, 2),
            FactTriplet::new(2, 5, 3),
            FactTriplet::new(0, 6, 1),
            FactTriplet::new(1, 6, 2),
            FactTriplet::new(0, 7, 1),
        ];
        let kept = filter_relation_rank_window(&t, 1, 3, 2);
        assert!(kept.iter().all(|x| x.relation == 6));
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn one_relation_per_pair() {
        let t = vec![
            FactTriplet::new(0, 5, 1),
            FactTriplet::new(0, 6, 1),
            FactTriplet::new(1, 6, 0),
        ];
        assert_eq!(
            filter_one_relation_per_pair(&t),
            vec![FactTriplet::new(0, 5, 1), FactTriplet::new(1, 6, 0)]
        );
    }

    #[test]
    fn nearest_labels_hint() {
        let mut v = Vocabularies::new();
        parse("DB00001\tr\tDB00002\n", &mut v).unwrap();
        match v.node("DB0001") {
            Err(Error::UnknownLabel { hint, .. }) => assert!(hint.contains("DB00001")),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn adjacency_matches_linear_scan(edges in prop::collection::vec((0usize..12, 0usize..3, 0usize..12), 0..60)) {
            let mut v = Vocabularies::new();
            let text: String = edges
                .iter()
                .map(|(h, r, t)| format!("n{h}\tr{r}\tn{t}\n"))
                .collect();
            let triples = parse(&text, &mut v).unwrap();
            let net = build_combined_network(v, &SplitSet::default(), &triples);
            for node in 0..net.num_nodes() {
                let mut want_out: Vec<(usize, usize)> = triples
                    .iter()
                    .filter(|t| t.head == node)
                    .map(|t| (t.tail, t.relation))
                    .collect();
                want_out.sort();
                let mut want_in: Vec<(usize, usize)> = triples
                    .iter()
                    .filter(|t| t.tail == node)
                    .map(|t| (t.head, t.relation))
                    .collect();
                want_in.sort();
                prop_assert_eq!(net.neighbors(node, Direction::Out).unwrap(), &want_out[..]);
                prop_assert_eq!(net.neighbors(node, Direction::In).unwrap(), &want_in[..]);
            }
            for t in &triples {
                prop_assert!(net.has_edge(t.head, t.relation, t.tail));
            }
        }

        #[test]
        fn reingest_is_byte_identical(edges in prop::collection::vec((0usize..8, 0usize..3, 0usize..8), 0..30)) {
            let text: String = edges
                .iter()
                .map(|(h, r, t)| format!("n{h}\tr{r}\tn{t}\n"))
                .collect();
            let build = || {
                let mut v = Vocabularies::new();
                let t = parse(&text, &mut v).unwrap();
                build_combined_network(v, &SplitSet::default(), &t).canonical_text()
            };
            prop_assert_eq!(build(), build());
        }
    }
}
