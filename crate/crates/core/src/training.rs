//! Samples, negative sampling, the training loop and inference.

use std::collections::{HashMap, HashSet};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{Reduction, RunConfig, Task};
use crate::encoder::{generic_embeddings, EncoderGraph};
use crate::error::{Error, Result};
use crate::graph::{CombinedNetwork, FactTriplet, NodeId, SplitSet};
use crate::ksg::{activate, generate_knowledge_subgraph, KnowledgeSubgraph, LearnerHyper};
use crate::model::{BatchItem, LossSpec, Model, ModelDims, Target, LOG_FLOOR};
use crate::params::Adam;
use crate::subgraph::{extract_pair_subgraph, DrugFlowSubgraph, ExtractConfig, SubgraphMode};
use crate::tensor::Tensor;

/// A drug pair with its supervision.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub head: NodeId,
    pub tail: NodeId,
    pub target: Target,
}

/// Positive samples of a split: one per triple (multiclass) or one per
/// ordered pair carrying all of its known relations (multilabel).
pub fn positive_samples(net: &CombinedNetwork, triples: &[FactTriplet], task: Task) -> Result<Vec<Sample>> {
    let class = |t: &FactTriplet| {
        net.class_of(t.relation)
            .ok_or_else(|| Error::Data(format!("relation {} is not a DDI relation", t.relation)))
    };
    match task {
        Task::Multiclass => triples
            .iter()
            .map(|t| {
                Ok(Sample {
                    head: t.head,
                    tail: t.tail,
                    target: Target::Class(class(t)?),
                })
            })
            .collect(),
        Task::Multilabel => {
            let mut by_pair: Vec<((NodeId, NodeId), Vec<usize>)> = Vec::new();
            let mut at: HashMap<(NodeId, NodeId), usize> = HashMap::new();
            for t in triples {
                let c = class(t)?;
                let i = *at.entry((t.head, t.tail)).or_insert_with(|| {
                    by_pair.push(((t.head, t.tail), Vec::new()));
                    by_pair.len() - 1
                });
                by_pair[i].1.push(c);
            }
            Ok(by_pair
                .into_iter()
                .map(|((head, tail), mut cs)| {
                    cs.sort_unstable();
                    cs.dedup();
                    Sample {
                        head,
                        tail,
                        target: Target::Labels(cs),
                    }
                })
                .collect())
        }
    }
}

/// One corrupted triple `(h, r, w)` per positive `(h, r, t)`, with `w` drawn
/// uniformly from `drugs`, `w != h`, and `(h, r, w)` not a known DDI.
/// Heads whose `(h, r, .)` already covers every drug are skipped.
pub fn sample_negatives(
    triples: &[FactTriplet],
    known: &HashSet<FactTriplet>,
    drugs: &[NodeId],
    seed: u64,
) -> Vec<FactTriplet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut covered: HashMap<(NodeId, usize), usize> = HashMap::new();
    let drug_set: HashSet<NodeId> = drugs.iter().copied().collect();
    for t in known {
        if t.head != t.tail && drug_set.contains(&t.tail) {
            *covered.entry((t.head, t.relation)).or_default() += 1;
        }
    }
    let mut out = Vec::with_capacity(triples.len());
    let mut skipped = 0usize;
    for t in triples {
        let others = drugs.len() - usize::from(drug_set.contains(&t.head));
        if covered.get(&(t.head, t.relation)).copied().unwrap_or(0) >= others {
            skipped += 1;
            continue;
        }
        loop {
            let w = drugs[rng.gen_range(0..drugs.len())];
            let cand = FactTriplet::new(t.head, t.relation, w);
            if w != t.head && !known.contains(&cand) {
                out.push(cand);
                break;
            }
        }
    }
    if skipped > 0 {
        warn!("skipped {skipped} negatives: head already linked to every drug");
    }
    out
}

fn negative_samples(negs: &[FactTriplet]) -> Vec<Sample> {
    negs.iter()
        .map(|t| Sample {
            head: t.head,
            tail: t.tail,
            target: Target::Negative,
        })
        .collect()
}

/// `sum_i -log p_i[y_i]` with probabilities clipped at the log floor.
pub fn multiclass_loss(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| -p[y].max(LOG_FLOOR).ln())
        .sum()
}

/// Positives: `-sum_{i in y} log p_i`; negatives: `-sum_i log(1 - p_i)`.
pub fn multilabel_loss(positives: &[(Vec<f64>, Vec<usize>)], negatives: &[Vec<f64>]) -> f64 {
    let pos: f64 = positives
        .iter()
        .map(|(p, ys)| ys.iter().map(|&y| -p[y].max(LOG_FLOOR).ln()).sum::<f64>())
        .sum();
    let neg: f64 = negatives
        .iter()
        .map(|p| p.iter().map(|&x| -(1.0 - x).max(LOG_FLOOR).ln()).sum::<f64>())
        .sum();
    pos + neg
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Drug-flow subgraphs keyed by pair. The combined network is fixed during a
/// run, so each pair is extracted once.
pub struct SubgraphCache<'a> {
    net: &'a CombinedNetwork,
    mode: SubgraphMode,
    cfg: ExtractConfig,
    map: HashMap<(NodeId, NodeId), DrugFlowSubgraph>,
}

impl<'a> SubgraphCache<'a> {
    pub fn new(net: &'a CombinedNetwork, mode: SubgraphMode, cfg: ExtractConfig) -> Self {
        Self {
            net,
            mode,
            cfg,
            map: HashMap::new(),
        }
    }

    /// Extract every missing pair (in parallel).
    pub fn ensure(&mut self, pairs: impl IntoIterator<Item = (NodeId, NodeId)>) -> Result<()> {
        let mut missing: Vec<(NodeId, NodeId)> = pairs.into_iter().filter(|p| !self.map.contains_key(p)).collect();
        missing.sort_unstable();
        missing.dedup();
        let subs: Vec<DrugFlowSubgraph> = missing
            .par_iter()
            .map(|&(h, t)| extract_pair_subgraph(self.net, h, t, self.mode, &self.cfg))
            .collect::<Result<_>>()?;
        self.map.extend(missing.into_iter().zip(subs));
        Ok(())
    }

    pub fn get(&self, h: NodeId, t: NodeId) -> Option<&DrugFlowSubgraph> {
        self.map.get(&(h, t))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    fn items<'s>(&'s self, samples: &'s [Sample]) -> Vec<BatchItem<'s>> {
        samples
            .iter()
            .map(|s| BatchItem {
                sub: &self.map[&(s.head, s.tail)],
                target: &s.target,
            })
            .collect()
    }
}

pub fn model_dims(net: &CombinedNetwork, cfg: &RunConfig) -> ModelDims {
    ModelDims {
        num_nodes: net.num_nodes(),
        num_relations: net.vocab().relations.len(),
        num_classes: net.ddi_relations().len(),
        dim: cfg.dim,
        layers: cfg.layers,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the best validation loss.
    pub model: Model,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    pub history: Vec<EpochRecord>,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ a.wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ b.wrapping_mul(0x94D0_49BB_1331_11EB)
        ^ 0x5851_F42D_4C95_7F2D
}

/// Adam training with early stopping on the validation loss.
pub fn train(net: &CombinedNetwork, splits: &SplitSet, cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if splits.train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    if net.ddi_relations().is_empty() {
        return Err(Error::Data("no DDI relations".into()));
    }
    let mut model = Model::new(model_dims(net, cfg), cfg.seed);
    let graph = EncoderGraph::from_network(net);
    let spec = LossSpec {
        graph: &graph,
        hyper: LearnerHyper::from_config(cfg),
        task: cfg.task,
        reduction: cfg.loss_reduction,
    };
    let known: HashSet<FactTriplet> = splits.all().copied().collect();
    let drugs = net.drug_nodes();

    let train_pos = positive_samples(net, &splits.train, cfg.task)?;
    let mut valid = positive_samples(net, &splits.valid, cfg.task)?;
    if cfg.task == Task::Multilabel {
        let negs = sample_negatives(&splits.valid, &known, drugs, mix(cfg.seed, u64::MAX, 1));
        valid.extend(negative_samples(&negs));
    }
    let mut cache = SubgraphCache::new(net, cfg.subgraph_mode, cfg.extract_config());
    cache.ensure(train_pos.iter().chain(&valid).map(|s| (s.head, s.tail)))?;
    info!(
        "training on {} samples ({} validation), {} subgraphs cached, {} parameters",
        train_pos.len(),
        valid.len(),
        cache.len(),
        model.params.num_scalars()
    );

    let mut opt = Adam::new(&model.params, cfg.lr, cfg.weight_decay);
    let mut best = (f64::INFINITY, 0usize, model.clone());
    let mut history = Vec::new();
    let mut since_best = 0;
    let mut negatives: Option<Vec<Sample>> = None;
    for epoch in 1..=cfg.max_epochs {
        let mut samples = train_pos.clone();
        if cfg.task == Task::Multilabel {
            if negatives.is_none() || cfg.resample_negatives {
                let negs = sample_negatives(&splits.train, &known, drugs, mix(cfg.seed, epoch as u64, 2));
                negatives = Some(negative_samples(&negs));
            }
            let negs = negatives.as_ref().expect("set above");
            cache.ensure(negs.iter().map(|s| (s.head, s.tail)))?;
            samples.extend(negs.iter().cloned());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64, 3));
        samples.shuffle(&mut rng);

        let mut train_loss = 0.0;
        for (b, chunk) in samples.chunks(cfg.batch_size).enumerate() {
            let items = cache.items(chunk);
            let dropout = (cfg.dropout > 0.0).then(|| (cfg.dropout, mix(cfg.seed, epoch as u64, 1000 + b as u64)));
            let (loss, grads) = model.batch_loss_and_grads(&items, &spec, dropout)?;
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                let pairs: Vec<_> = chunk.iter().map(|s| (s.head, s.tail)).collect();
                return Err(Error::NonFinite(format!("epoch {epoch} batch {b}: loss {loss}, pairs {pairs:?}")));
            }
            train_loss += match cfg.loss_reduction {
                Reduction::Sum => loss,
                Reduction::Mean => loss * chunk.len() as f64,
            };
            opt.step(&mut model.params, &grads);
        }

        let valid_loss = if valid.is_empty() {
            train_loss
        } else {
            model.batch_loss(&cache.items(&valid), &spec)?
        };
        if !valid_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        info!("epoch {epoch}: train loss {train_loss:.6}, valid loss {valid_loss:.6}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            valid_loss,
        });
        if valid_loss < best.0 {
            best = (valid_loss, epoch, model.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                info!("no improvement for {} epochs, stopping", cfg.patience);
                break;
            }
        }
    }
    Ok(TrainOutcome {
        epochs_run: history.len(),
        best_epoch: best.1,
        best_valid_loss: best.0,
        model: best.2,
        history,
    })
}

/// Output for one queried pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub head: NodeId,
    pub tail: NodeId,
    /// Softmax (multiclass) or sigmoid (multilabel) scores per DDI class.
    pub scores: Vec<f64>,
    /// Argmax class for multiclass; `None` for multilabel.
    pub class: Option<usize>,
}

/// A trained model bound to its combined network.
pub struct Predictor<'a> {
    pub model: &'a Model,
    pub net: &'a CombinedNetwork,
    pub cfg: &'a RunConfig,
    pub generic: Tensor,
}

impl<'a> Predictor<'a> {
    pub fn new(model: &'a Model, net: &'a CombinedNetwork, cfg: &'a RunConfig) -> Result<Self> {
        let generic = generic_embeddings(&EncoderGraph::from_network(net), model)?;
        Ok(Self {
            model,
            net,
            cfg,
            generic,
        })
    }

    pub fn subgraph(&self, h: NodeId, t: NodeId) -> Result<DrugFlowSubgraph> {
        extract_pair_subgraph(self.net, h, t, self.cfg.subgraph_mode, &self.cfg.extract_config())
    }

    pub fn knowledge_subgraph(&self, h: NodeId, t: NodeId) -> Result<KnowledgeSubgraph> {
        let sub = self.subgraph(h, t)?;
        generate_knowledge_subgraph(self.model, &sub, &self.generic, &LearnerHyper::from_config(self.cfg))
    }

    pub fn predict(&self, h: NodeId, t: NodeId) -> Result<Prediction> {
        let ks = self.knowledge_subgraph(h, t)?;
        let scores = activate(&ks.logits, self.cfg.task);
        let class = (self.cfg.task == Task::Multiclass).then(|| argmax(&scores));
        Ok(Prediction {
            head: h,
            tail: t,
            scores,
            class,
        })
    }

    pub fn predict_many(&self, pairs: &[(NodeId, NodeId)]) -> Result<Vec<Prediction>> {
        pairs.par_iter().map(|&(h, t)| self.predict(h, t)).collect()
    }
}
