//! Planted-rule benchmark.
//!
//! Every gene has one source drug and a few target drugs. The source edge
//! carries one of two relation types (`x`), every target edge one of two
//! other types (`y`). A drug pair `(h, t)` joined through gene `g` interacts
//! with DDI class `2x + y`, so the label is a function of the relation types
//! along the unique two-hop path and nothing else.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{FactTriplet, NodeId, Vocabularies};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlantedSpec {
    pub drugs: usize,
    pub genes: usize,
    /// Target drugs per gene.
    pub fanout: usize,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            drugs: 50,
            genes: 200,
            fanout: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlantedData {
    pub vocab: Vocabularies,
    pub ddi: Vec<FactTriplet>,
    pub kg: Vec<FactTriplet>,
}

pub const DDI_LABELS: [&str; 4] = ["ddi_0", "ddi_1", "ddi_2", "ddi_3"];
const SOURCE_LABELS: [&str; 2] = ["targets_a", "targets_b"];
const TARGET_LABELS: [&str; 2] = ["binds_a", "binds_b"];

pub fn planted_rule(spec: &PlantedSpec) -> PlantedData {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut vocab = Vocabularies::new();
    let drugs: Vec<NodeId> = (0..spec.drugs).map(|i| vocab.nodes.intern(&format!("drug{i}"))).collect();
    let genes: Vec<NodeId> = (0..spec.genes).map(|i| vocab.nodes.intern(&format!("gene{i}"))).collect();
    let ddi_rel: Vec<usize> = DDI_LABELS.iter().map(|l| vocab.relations.intern(l)).collect();
    let src_rel: Vec<usize> = SOURCE_LABELS.iter().map(|l| vocab.relations.intern(l)).collect();
    let tgt_rel: Vec<usize> = TARGET_LABELS.iter().map(|l| vocab.relations.intern(l)).collect();

    let mut used: HashSet<(NodeId, NodeId)> = HashSet::new();
    let mut ddi = Vec::new();
    let mut kg = Vec::new();
    for (i, &g) in genes.iter().enumerate() {
        let h = drugs[i % drugs.len()];
        let x = rng.gen_range(0..2);
        kg.push(FactTriplet::new(h, src_rel[x], g));
        let mut pool: Vec<NodeId> = drugs
            .iter()
            .copied()
            .filter(|&t| t != h && !used.contains(&(h, t)) && !used.contains(&(t, h)))
            .collect();
        pool.shuffle(&mut rng);
        for &t in pool.iter().take(spec.fanout) {
            let y = rng.gen_range(0..2);
            kg.push(FactTriplet::new(g, tgt_rel[y], t));
            ddi.push(FactTriplet::new(h, ddi_rel[2 * x + y], t));
            used.insert((h, t));
        }
    }
    ddi.sort_unstable();
    kg.sort_unstable();
    PlantedData { vocab, ddi, kg }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_follow_the_rule() {
        let d = planted_rule(&PlantedSpec::default());
        assert_eq!(d.ddi.len(), 600);
        for t in &d.ddi {
            let paths: Vec<(usize, usize)> = d
                .kg
                .iter()
                .filter(|a| a.head == t.head)
                .flat_map(|a| {
                    d.kg.iter()
                        .filter(move |b| b.head == a.tail && b.tail == t.tail)
                        .map(move |b| (a.relation, b.relation))
                })
                .collect();
            assert_eq!(paths.len(), 1);
            let (x, y) = paths[0];
            let xi = SOURCE_LABELS.iter().position(|l| d.vocab.relations.label(x) == *l).unwrap();
            let yi = TARGET_LABELS.iter().position(|l| d.vocab.relations.label(y) == *l).unwrap();
            assert_eq!(d.vocab.relations.label(t.relation), DDI_LABELS[2 * xi + yi]);
        }
    }

    #[test]
    fn classes_are_roughly_balanced() {
        let d = planted_rule(&PlantedSpec::default());
        let mut counts = [0usize; 4];
        for t in &d.ddi {
            let l = d.vocab.relations.label(t.relation);
            counts[DDI_LABELS.iter().position(|x| *x == l).unwrap()] += 1;
        }
        assert!(counts.iter().all(|&c| (c as f64) < 0.3 * d.ddi.len() as f64), "{counts:?}");
    }
}
