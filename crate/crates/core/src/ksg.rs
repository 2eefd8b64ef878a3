//! Knowledge-subgraph learning.
//!
//! Starting from a drug-flow subgraph and the generic embeddings of its
//! nodes, the learner alternates `T` times between
//!
//! 1. scoring every candidate `(u, v, r)` with an MLP over
//!    `[exp(-|h_u - h_v|) || h_r]`,
//! 2. mixing the scores with the binary adjacency, normalising them over the
//!    incoming candidates of each node (edge softmax) and cutting everything
//!    below `gamma`, and
//! 3. propagating embeddings along the resulting weighted, typed edges with a
//!    per-relation transform, averaged over relation slots.
//!
//! Candidates ("support") are fixed by the drug-flow subgraph: original
//! edges, one resemble candidate for every ordered pair with no original
//! edge, and diagonal entries for every slot whose score is pinned to 1.

use std::collections::HashMap;

use crate::config::{RunConfig, Task};
use crate::error::{Error, Result};
use crate::graph::{RelId, R_IDENTITY, R_SIM};
use crate::model::Model;
use crate::subgraph::DrugFlowSubgraph;
use crate::tensor::{grouped_softmax_values, sigmoid, Tape, Tensor, Var};

/// Learner hyperparameters resolved for a subgraph mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearnerHyper {
    pub alpha: f64,
    pub gamma: f64,
    pub iterations: usize,
    pub resemble: bool,
}

impl LearnerHyper {
    /// Fixed-structure modes use `alpha = 1, gamma = 0` and no resemble slot,
    /// i.e. propagation over the normalised binary adjacency.
    pub fn from_config(cfg: &RunConfig) -> Self {
        if cfg.subgraph_mode.learns_structure() {
            Self {
                alpha: cfg.alpha,
                gamma: cfg.gamma,
                iterations: cfg.iterations,
                resemble: cfg.subgraph_mode.adds_resemble(),
            }
        } else {
            Self {
                alpha: 1.0,
                gamma: 0.0,
                iterations: cfg.iterations,
                resemble: false,
            }
        }
    }
}

/// Candidate entries of the strength tensor for one subgraph.
///
/// Entries `[0, scored)` are off-diagonal and get MLP scores; the remaining
/// entries are diagonal with the score pinned to 1. Within each part entries
/// are ordered by `(dst, src, slot)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Support {
    pub n: usize,
    /// Relation of every slot; the resemble slot, when present, is last.
    pub slots: Vec<RelId>,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub slot: Vec<usize>,
    /// Binary adjacency value of the entry.
    pub base: Vec<f64>,
    pub scored: usize,
    by_slot: Vec<Vec<usize>>,
    lookup: HashMap<(usize, usize, usize), usize>,
}

impl Support {
    pub fn build(sub: &DrugFlowSubgraph, resemble: bool) -> Self {
        let n = sub.num_nodes();
        let mut slots = sub.relations.clone();
        if resemble {
            slots.push(R_SIM);
        }
        if slots.is_empty() {
            slots.push(R_IDENTITY);
        }
        let slot_of: HashMap<RelId, usize> = slots.iter().enumerate().map(|(i, &r)| (r, i)).collect();
        let mut pair_rels: HashMap<(usize, usize), Vec<RelId>> = HashMap::new();
        for &(u, r, v) in &sub.edges {
            pair_rels.entry((u, v)).or_default().push(r);
        }
        let sim_slot = resemble.then(|| slots.len() - 1);

        let mut entries: Vec<(usize, usize, usize, f64)> = Vec::new();
        for v in 0..n {
            for u in 0..n {
                if u == v {
                    continue;
                }
                match pair_rels.get(&(u, v)) {
                    Some(rels) => {
                        for r in rels {
                            entries.push((u, v, slot_of[r], 1.0));
                        }
                    }
                    None => {
                        if let Some(s) = sim_slot {
                            entries.push((u, v, s, 0.0));
                        }
                    }
                }
            }
        }
        let scored = entries.len();
        for v in 0..n {
            let has_self = pair_rels.contains_key(&(v, v));
            for (s, &r) in slots.iter().enumerate() {
                if Some(s) == sim_slot && has_self {
                    continue;
                }
                let base = if sub.adjacency(v, v, r) { 1.0 } else { 0.0 };
                entries.push((v, v, s, base));
            }
        }

        let mut by_slot = vec![Vec::new(); slots.len()];
        let mut lookup = HashMap::with_capacity(entries.len());
        for (i, &(u, v, s, _)) in entries.iter().enumerate() {
            by_slot[s].push(i);
            lookup.insert((u, v, s), i);
        }
        Self {
            n,
            src: entries.iter().map(|e| e.0).collect(),
            dst: entries.iter().map(|e| e.1).collect(),
            slot: entries.iter().map(|e| e.2).collect(),
            base: entries.iter().map(|e| e.3).collect(),
            slots,
            scored,
            by_slot,
            lookup,
        }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn slot_of(&self, r: RelId) -> Option<usize> {
        self.slots.iter().position(|&x| x == r)
    }

    pub fn find(&self, u: usize, v: usize, slot: usize) -> Option<usize> {
        self.lookup.get(&(u, v, slot)).copied()
    }

    pub fn has_resemble(&self) -> bool {
        self.slots.last() == Some(&R_SIM)
    }

    /// Scatter per-entry values into a dense `[n, n, slots]` tensor.
    pub fn to_dense(&self, values: &[f64]) -> Tensor {
        let s = self.slots.len();
        let mut d = Tensor::zeros(vec![self.n, self.n, s]);
        for (i, &x) in values.iter().enumerate() {
            d.data_mut()[(self.src[i] * self.n + self.dst[i]) * s + self.slot[i]] = x;
        }
        d
    }

    /// Gather per-entry values from a dense `[n, n, slots]` tensor.
    pub fn from_dense(&self, dense: &Tensor) -> Vec<f64> {
        let s = self.slots.len();
        (0..self.len())
            .map(|i| dense.data()[(self.src[i] * self.n + self.dst[i]) * s + self.slot[i]])
            .collect()
    }
}

pub(crate) struct LearnerVars {
    pub rel_emb: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    /// Per-slot propagation transforms.
    pub w_slot: Vec<Var>,
    pub w_cls: Var,
}

impl LearnerVars {
    pub fn new(tape: &mut Tape, model: &Model, slots: &[RelId], tracked: bool) -> Self {
        let mut put = |t: &Tensor| {
            if tracked {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let ids = &model.ids;
        Self {
            rel_emb: put(model.params.get(ids.rel_emb)),
            w1: put(model.params.get(ids.mlp_w1)),
            b1: put(model.params.get(ids.mlp_b1)),
            w2: put(model.params.get(ids.mlp_w2)),
            b2: put(model.params.get(ids.mlp_b2)),
            w_slot: slots.iter().map(|&r| put(model.params.get(ids.w_rel[r]))).collect(),
            w_cls: put(model.params.get(ids.w_cls)),
        }
    }
}

/// `sigmoid(w2 . relu([exp(-|h_u - h_v|) || h_r] W1 + b1) + b2)` per row.
pub(crate) fn mlp_scores(
    tape: &mut Tape,
    lv: &LearnerVars,
    h: Var,
    us: &[usize],
    vs: &[usize],
    rels: &[RelId],
) -> Result<Var> {
    let hu = tape.gather(h, us)?;
    let hv = tape.gather(h, vs)?;
    let sim = tape.neg_abs_diff(hu, hv)?;
    let hr = tape.gather(lv.rel_emb, rels)?;
    let x = tape.concat_last(&[sim, hr])?;
    let z = tape.matmul(x, lv.w1)?;
    let z = tape.add(z, lv.b1)?;
    let z = tape.relu(z);
    let o = tape.matmul(z, lv.w2)?;
    let o = tape.add(o, lv.b2)?;
    Ok(tape.sigmoid(o))
}

/// Mix scores with the adjacency, edge-softmax per target node, threshold.
/// Returns `(normalised, strength)`, both aligned with `support`.
pub(crate) fn normalize_strengths(
    tape: &mut Tape,
    c: Var,
    support: &Support,
    alpha: f64,
    gamma: f64,
) -> Result<(Var, Var)> {
    let base = tape.constant(Tensor::vector(support.base.iter().map(|b| alpha * b).collect()));
    let c = tape.scale(c, 1.0 - alpha);
    let mixed = tape.add(c, base)?;
    let norm = tape.grouped_softmax(mixed, &support.dst)?;
    let shifted = tape.add_scalar(norm, -gamma);
    let strength = tape.relu(shifted);
    Ok((norm, strength))
}

/// `H' = mean_r relu(sum_u A(u, v, r) h_u W_r)` over all slots.
pub(crate) fn propagate_on_tape(
    tape: &mut Tape,
    strength: Var,
    h: Var,
    w_slot: &[Var],
    support: &Support,
) -> Result<Var> {
    let (n, d) = {
        let t = tape.value(h);
        (t.shape()[0], t.shape()[1])
    };
    let mut acc: Option<Var> = None;
    for (s, idx) in support.by_slot.iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let src: Vec<usize> = idx.iter().map(|&i| support.src[i]).collect();
        let dst: Vec<usize> = idx.iter().map(|&i| support.dst[i]).collect();
        let hw = tape.matmul(h, w_slot[s])?;
        let msg = tape.gather(hw, &src)?;
        let w = tape.gather(strength, idx)?;
        let msg = tape.mul_col(msg, w)?;
        let agg = tape.segment_sum(msg, &dst, n)?;
        let q = tape.relu(agg);
        acc = Some(match acc {
            Some(a) => tape.add(a, q)?,
            None => q,
        });
    }
    let total = match acc {
        Some(a) => a,
        None => tape.constant(Tensor::zeros(vec![n, d])),
    };
    Ok(tape.scale(total, 1.0 / support.slots.len() as f64))
}

pub(crate) struct KsgTape {
    pub h: Var,
    pub pooled: Var,
    pub logits: Var,
    pub normalized: Var,
    pub strength: Var,
}

pub(crate) fn ksg_forward(
    tape: &mut Tape,
    lv: &LearnerVars,
    h0: Var,
    support: &Support,
    hyper: &LearnerHyper,
) -> Result<KsgTape> {
    if hyper.iterations == 0 {
        return Err(Error::Config("iterations T must be at least 1".into()));
    }
    let diag_ones = support.len() - support.scored;
    let scored_rels: Vec<RelId> = (0..support.scored).map(|i| support.slots[support.slot[i]]).collect();
    let mut h = h0;
    let mut last = None;
    for _ in 0..hyper.iterations {
        let c = if support.scored > 0 && hyper.alpha < 1.0 {
            let scored = mlp_scores(
                tape,
                lv,
                h,
                &support.src[..support.scored],
                &support.dst[..support.scored],
                &scored_rels,
            )?;
            let ones = tape.constant(Tensor::full(vec![diag_ones], 1.0));
            tape.concat_last(&[scored, ones])?
        } else {
            tape.constant(Tensor::full(vec![support.len()], 1.0))
        };
        let (norm, strength) = normalize_strengths(tape, c, support, hyper.alpha, hyper.gamma)?;
        h = propagate_on_tape(tape, strength, h, &lv.w_slot, support)?;
        last = Some((norm, strength));
    }
    let (normalized, strength) = last.expect("at least one iteration");
    let d = tape.value(h).shape()[1];
    let pooled = tape.mean_rows(h)?;
    let hh = tape.gather(h, &[0])?;
    let hh = tape.reshape(hh, vec![d])?;
    let ht = tape.gather(h, &[1])?;
    let ht = tape.reshape(ht, vec![d])?;
    let z = tape.concat_last(&[pooled, hh, ht])?;
    let logits = tape.matmul(z, lv.w_cls)?;
    Ok(KsgTape {
        h,
        pooled,
        logits,
        normalized,
        strength,
    })
}

/// Dense relevance scores `[n, n, slots]`: MLP output off the diagonal,
/// exactly 1 on it.
pub fn relevance_scores(model: &Model, h: &Tensor, slots: &[RelId]) -> Result<Tensor> {
    let n = h.shape()[0];
    let s = slots.len();
    let mut tape = Tape::new();
    let lv = LearnerVars::new(&mut tape, model, slots, false);
    let hv = tape.constant(h.clone());
    let (mut us, mut vs, mut rs, mut at) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for u in 0..n {
        for v in 0..n {
            if u == v {
                continue;
            }
            for (k, &r) in slots.iter().enumerate() {
                us.push(u);
                vs.push(v);
                rs.push(r);
                at.push((u * n + v) * s + k);
            }
        }
    }
    let mut out = Tensor::full(vec![n, n, s], 1.0);
    if !us.is_empty() {
        let c = mlp_scores(&mut tape, &lv, hv, &us, &vs, &rs)?;
        for (i, &pos) in at.iter().enumerate() {
            out.data_mut()[pos] = tape.value(c).data()[i];
        }
    }
    Ok(out)
}

/// `relu(edge_softmax(alpha * A0 + (1 - alpha) * C) - gamma)` over the
/// support; entries outside the support are 0. Returns the dense normalised
/// scores (before the threshold) and the dense strengths.
pub fn merge_and_threshold(
    a0: &Tensor,
    c: &Tensor,
    support: &Support,
    alpha: f64,
    gamma: f64,
) -> Result<(Tensor, Tensor)> {
    if a0.shape() != c.shape() || a0.shape() != [support.n, support.n, support.slots.len()] {
        return Err(Error::shape(
            "merge_and_threshold",
            format!("A0 {:?}, C {:?}", a0.shape(), c.shape()),
        ));
    }
    let mut tape = Tape::new();
    let cv = tape.constant(Tensor::vector(support.from_dense(c)));
    let mut masked = support.clone();
    masked.base = support.from_dense(a0);
    let (norm, strength) = normalize_strengths(&mut tape, cv, &masked, alpha, gamma)?;
    Ok((
        support.to_dense(tape.value(norm).data()),
        support.to_dense(tape.value(strength).data()),
    ))
}

/// One propagation step with dense strengths `[n, n, slots]` and explicit
/// per-slot transforms.
pub fn propagate(a: &Tensor, h: &Tensor, w_slot: &[Tensor]) -> Result<Tensor> {
    let n = h.shape()[0];
    let s = w_slot.len();
    if a.shape() != [n, n, s] {
        return Err(Error::shape("propagate", format!("A {:?} for {n} nodes, {s} slots", a.shape())));
    }
    let mut full = Support {
        n,
        slots: (0..s).collect(),
        src: Vec::new(),
        dst: Vec::new(),
        slot: Vec::new(),
        base: Vec::new(),
        scored: 0,
        by_slot: vec![Vec::new(); s],
        lookup: HashMap::new(),
    };
    let mut vals = Vec::new();
    for u in 0..n {
        for v in 0..n {
            for k in 0..s {
                let x = a.data()[(u * n + v) * s + k];
                if x != 0.0 {
                    full.by_slot[k].push(full.src.len());
                    full.src.push(u);
                    full.dst.push(v);
                    full.slot.push(k);
                    vals.push(x);
                }
            }
        }
    }
    let mut tape = Tape::new();
    let av = tape.constant(Tensor::vector(vals));
    let hv = tape.constant(h.clone());
    let ws: Vec<Var> = w_slot.iter().map(|w| tape.constant(w.clone())).collect();
    let out = propagate_on_tape(&mut tape, av, hv, &ws, &full)?;
    Ok(tape.value(out).clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeKind {
    /// Original edge that kept a positive strength.
    Kept,
    /// Resemble edge added between nodes with no original edge.
    Resemble,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearnedEdge {
    pub u: usize,
    pub v: usize,
    pub relation: RelId,
    pub strength: f64,
    pub kind: EdgeKind,
}

/// Learned structure and refined embeddings for one drug pair.
#[derive(Clone, Debug)]
pub struct KnowledgeSubgraph {
    pub base: DrugFlowSubgraph,
    pub support: Support,
    /// Edge-softmax output of the last iteration, per support entry.
    pub normalized: Vec<f64>,
    /// Final connection strengths, per support entry.
    pub strength: Vec<f64>,
    /// Refined node embeddings `[n, d]`.
    pub h: Tensor,
    /// Mean of the refined node embeddings.
    pub pooled: Vec<f64>,
    pub logits: Vec<f64>,
}

impl KnowledgeSubgraph {
    pub fn strength(&self, u: usize, v: usize, relation: RelId) -> f64 {
        self.support
            .slot_of(relation)
            .and_then(|s| self.support.find(u, v, s))
            .map_or(0.0, |i| self.strength[i])
    }

    /// Strength tensor `[n, n, slots]`.
    pub fn dense_strength(&self) -> Tensor {
        self.support.to_dense(&self.strength)
    }

    /// Edges of the learned subgraph: original edges with positive strength
    /// and off-diagonal resemble edges with positive strength, sorted.
    pub fn edges(&self) -> Vec<LearnedEdge> {
        let sp = &self.support;
        let mut out: Vec<LearnedEdge> = (0..sp.len())
            .filter(|&i| self.strength[i] > 0.0)
            .filter_map(|i| {
                let relation = sp.slots[sp.slot[i]];
                let kind = if sp.base[i] == 1.0 {
                    EdgeKind::Kept
                } else if relation == R_SIM && sp.src[i] != sp.dst[i] {
                    EdgeKind::Resemble
                } else {
                    return None;
                };
                Some(LearnedEdge {
                    u: sp.src[i],
                    v: sp.dst[i],
                    relation,
                    strength: self.strength[i],
                    kind,
                })
            })
            .collect();
        out.sort_by_key(|e| (e.u, e.v, e.relation));
        out
    }

    /// Sum of normalised incoming scores per node (1 for every node).
    pub fn incoming_normalized_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.support.n];
        for (i, &x) in self.normalized.iter().enumerate() {
            s[self.support.dst[i]] += x;
        }
        s
    }

    pub fn incoming_strength_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.support.n];
        for (i, &x) in self.strength.iter().enumerate() {
            s[self.support.dst[i]] += x;
        }
        s
    }
}

/// Run the learner for one subgraph. `generic` is the full `|V| x d` table.
pub fn generate_knowledge_subgraph(
    model: &Model,
    sub: &DrugFlowSubgraph,
    generic: &Tensor,
    hyper: &LearnerHyper,
) -> Result<KnowledgeSubgraph> {
    let support = Support::build(sub, hyper.resemble);
    let mut tape = Tape::new();
    let lv = LearnerVars::new(&mut tape, model, &support.slots, false);
    let rows: Vec<f64> = sub.nodes.iter().flat_map(|&v| generic.row(v).iter().copied()).collect();
    let h0 = tape.constant(Tensor::matrix(sub.num_nodes(), generic.last_dim(), rows)?);
    let out = ksg_forward(&mut tape, &lv, h0, &support, hyper)?;
    Ok(KnowledgeSubgraph {
        base: sub.clone(),
        normalized: tape.value(out.normalized).data().to_vec(),
        strength: tape.value(out.strength).data().to_vec(),
        h: tape.value(out.h).clone(),
        pooled: tape.value(out.pooled).data().to_vec(),
        logits: tape.value(out.logits).data().to_vec(),
        support,
    })
}

/// Class probabilities from a finished knowledge subgraph:
/// softmax (multiclass) or element-wise sigmoid (multilabel) of
/// `[h_S || h_h || h_t] W_c`.
pub fn predict(model: &Model, ks: &KnowledgeSubgraph, task: Task) -> Vec<f64> {
    let w = model.params.get(model.ids.w_cls);
    let classes = w.shape()[1];
    let z: Vec<f64> = ks
        .pooled
        .iter()
        .chain(ks.h.row(0))
        .chain(ks.h.row(1))
        .copied()
        .collect();
    let logits: Vec<f64> = (0..classes)
        .map(|c| z.iter().enumerate().map(|(k, x)| x * w.data()[k * classes + c]).sum())
        .collect();
    activate(&logits, task)
}

pub fn activate(logits: &[f64], task: Task) -> Vec<f64> {
    match task {
        Task::Multiclass => grouped_softmax_values(logits, &vec![0; logits.len()]),
        Task::Multilabel => logits.iter().map(|&x| sigmoid(x)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::FactTriplet;
    use crate::model::ModelDims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sub() -> DrugFlowSubgraph {
        // h=10 -a-> 12 -b-> t=11, plus t's identity loop
        let e = [
            FactTriplet::new(10, 2, 12),
            FactTriplet::new(12, 3, 11),
            FactTriplet::new(11, R_IDENTITY, 11),
        ];
        DrugFlowSubgraph::from_global(10, 11, &[10, 11, 12], &e, 3)
    }

    fn model(seed: u64) -> Model {
        Model::new(
            ModelDims {
                num_nodes: 13,
                num_relations: 4,
                num_classes: 3,
                dim: 5,
                layers: 1,
            },
            seed,
        )
    }

    #[test]
    fn support_layout() {
        let s = Support::build(&sub(), true);
        assert_eq!(s.slots, vec![R_IDENTITY, 2, 3, R_SIM]);
        // 6 ordered off-diagonal pairs, two of them original edges
        assert_eq!(s.scored, 6);
        assert_eq!(s.base[..s.scored].iter().sum::<f64>(), 2.0);
        // diagonal: 4 slots x 3 nodes, minus r_sim on t (it has a self-loop)
        assert_eq!(s.len() - s.scored, 11);
        let t_identity = s.find(1, 1, 0).unwrap();
        assert_eq!(s.base[t_identity], 1.0);
        assert!(s.find(1, 1, 3).is_none());
        let plain = Support::build(&sub(), false);
        assert_eq!(plain.scored, 2);
        assert_eq!(plain.slots, vec![R_IDENTITY, 2, 3]);
    }

    #[test]
    fn empty_relation_set_falls_back_to_identity() {
        let s = Support::build(&DrugFlowSubgraph::degenerate(0, 1, 4), false);
        assert_eq!(s.slots, vec![R_IDENTITY]);
        assert_eq!(s.scored, 0);
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn merge_matches_scalar_loop() {
        let s = Support::build(&sub(), true);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n, k) = (3, s.slots.len());
        let mut a0 = Tensor::zeros(vec![n, n, k]);
        for (u, r, v) in &sub().edges {
            a0.data_mut()[(u * n + v) * k + s.slot_of(*r).unwrap()] = 1.0;
        }
        let mut c = Tensor::zeros(vec![n, n, k]);
        c.data_mut().iter_mut().for_each(|x| *x = rng.gen());
        for v in 0..n {
            for r in 0..k {
                c.data_mut()[(v * n + v) * k + r] = 1.0;
            }
        }
        let (alpha, gamma) = (0.3, 0.08);
        let (norm, a) = merge_and_threshold(&a0, &c, &s, alpha, gamma).unwrap();
        for v in 0..n {
            let cands: Vec<usize> = (0..s.len()).filter(|&i| s.dst[i] == v).collect();
            let raw = |i: usize| {
                let at = (s.src[i] * n + v) * k + s.slot[i];
                alpha * a0.data()[at] + (1.0 - alpha) * c.data()[at]
            };
            let z: f64 = cands.iter().map(|&i| raw(i).exp()).sum();
            let mut total = 0.0;
            for &i in &cands {
                let at = (s.src[i] * n + v) * k + s.slot[i];
                let want = raw(i).exp() / z;
                assert!((norm.data()[at] - want).abs() < 1e-12);
                assert!((a.data()[at] - (want - gamma).max(0.0)).abs() < 1e-12);
                total += norm.data()[at];
            }
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn propagate_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (n, k, d) = (4, 2, 3);
        let mut a = Tensor::zeros(vec![n, n, k]);
        a.data_mut().iter_mut().for_each(|x| {
            if rng.gen_bool(0.5) {
                *x = rng.gen()
            }
        });
        let mut h = Tensor::zeros(vec![n, d]);
        h.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        let ws: Vec<Tensor> = (0..k)
            .map(|_| {
                let mut w = Tensor::zeros(vec![d, d]);
                w.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
                w
            })
            .collect();
        let out = propagate(&a, &h, &ws).unwrap();
        for v in 0..n {
            for j in 0..d {
                let mut acc = 0.0;
                for r in 0..k {
                    let mut q = 0.0;
                    for u in 0..n {
                        let hw: f64 = (0..d).map(|p| h.row(u)[p] * ws[r].data()[p * d + j]).sum();
                        q += a.data()[(u * n + v) * k + r] * hw;
                    }
                    acc += q.max(0.0);
                }
                assert!((out.row(v)[j] - acc / k as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn learned_subgraph_invariants() {
        let m = model(2);
        let generic = crate::encoder::generic_embeddings(
            &crate::encoder::EncoderGraph {
                src: vec![10, 12],
                dst: vec![12, 11],
                num_nodes: 13,
            },
            &m,
        )
        .unwrap();
        let hyper = LearnerHyper {
            alpha: 0.5,
            gamma: 0.05,
            iterations: 3,
            resemble: true,
        };
        let ks = generate_knowledge_subgraph(&m, &sub(), &generic, &hyper).unwrap();
        for s in ks.incoming_normalized_sums() {
            assert!((s - 1.0).abs() < 1e-12);
        }
        for e in ks.edges() {
            assert!(e.strength > 0.0);
            let original = ks.base.adjacency(e.u, e.v, e.relation);
            match e.kind {
                EdgeKind::Kept => assert!(original),
                EdgeKind::Resemble => {
                    assert_eq!(e.relation, R_SIM);
                    assert!(!ks.base.edges.iter().any(|&(u, _, v)| u == e.u && v == e.v));
                }
            }
        }
        let p = predict(&m, &ks, Task::Multiclass);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let direct = activate(&ks.logits, Task::Multiclass);
        for (a, b) in p.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_classifier_gives_uniform_outputs() {
        let mut m = model(5);
        let id = m.ids.w_cls;
        m.params.get_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
        let generic = Tensor::full(vec![13, 5], 0.1);
        let hyper = LearnerHyper {
            alpha: 1.0,
            gamma: 0.0,
            iterations: 1,
            resemble: false,
        };
        let ks = generate_knowledge_subgraph(&m, &sub(), &generic, &hyper).unwrap();
        assert_eq!(predict(&m, &ks, Task::Multiclass), vec![1.0 / 3.0; 3]);
        assert_eq!(predict(&m, &ks, Task::Multilabel), vec![0.5; 3]);
    }

    #[test]
    fn fixed_structure_weights_are_uniform_over_incoming_edges() {
        let m = model(1);
        let generic = Tensor::full(vec![13, 5], 0.3);
        let hyper = LearnerHyper {
            alpha: 1.0,
            gamma: 0.0,
            iterations: 1,
            resemble: false,
        };
        let ks = generate_knowledge_subgraph(&m, &sub(), &generic, &hyper).unwrap();
        // middle node (local 2) has one original incoming edge plus
        // three diagonal candidates that carry weight exp(0)
        let e = std::f64::consts::E;
        assert!((ks.strength(0, 2, 2) - e / (e + 3.0)).abs() < 1e-12);
    }
}
