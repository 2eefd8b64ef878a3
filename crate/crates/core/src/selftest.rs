//! Small end-to-end checks against brute-force references, run by the
//! `selftest` command.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::config::{Reduction, RunConfig, Task};
use crate::encoder::EncoderGraph;
use crate::error::Result;
use crate::eval::{auroc, classification_metrics};
use crate::graph::{FactTriplet, NodeId, RelId, R_IDENTITY};
use crate::ksg::LearnerHyper;
use crate::model::{BatchItem, LossSpec, Model, ModelDims, Target};
use crate::subgraph::{directional_prune, DrugFlowSubgraph, EnclosingSubgraph};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn(u64) -> Result<(bool, String)>;

pub fn run_all(seed: u64) -> Vec<CheckResult> {
    let checks: [(&'static str, Check); 4] = [
        ("gradient", gradient_check),
        ("drug-flow subgraph", subgraph_check),
        ("metrics", metrics_check),
        ("checkpoint", checkpoint_check),
    ];
    checks
        .iter()
        .map(|(name, f)| match f(seed) {
            Ok((passed, detail)) => CheckResult { name, passed, detail },
            Err(e) => CheckResult {
                name,
                passed: false,
                detail: e.to_string(),
            },
        })
        .collect()
}

fn gradient_check(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 6;
    let edges: Vec<FactTriplet> = (0..12)
        .map(|_| FactTriplet::new(rng.gen_range(0..n), rng.gen_range(2..5), rng.gen_range(0..n)))
        .collect();
    let graph = EncoderGraph {
        src: edges.iter().map(|e| e.head).collect(),
        dst: edges.iter().map(|e| e.tail).collect(),
        num_nodes: n,
    };
    let sub = DrugFlowSubgraph::from_global(0, 1, &[0, 1, 2, 3], &edges, 3);
    let dims = ModelDims {
        num_nodes: n,
        num_relations: 5,
        num_classes: 3,
        dim: 4,
        layers: 1,
    };
    let mut model = Model::new(dims, seed);
    let target = Target::Class(1);
    let items = [BatchItem { sub: &sub, target: &target }];
    let spec = LossSpec {
        graph: &graph,
        hyper: LearnerHyper {
            alpha: 0.5,
            gamma: 0.02,
            iterations: 2,
            resemble: true,
        },
        task: Task::Multiclass,
        reduction: Reduction::Sum,
    };
    let (_, grads) = model.batch_loss_and_grads(&items, &spec, None)?;
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for id in model.params.ids().collect::<Vec<_>>() {
        for j in 0..model.params.get(id).len() {
            let x = model.params.get(id).data()[j];
            model.params.get_mut(id).data_mut()[j] = x + eps;
            let up = model.batch_loss(&items, &spec)?;
            model.params.get_mut(id).data_mut()[j] = x - eps;
            let down = model.batch_loss(&items, &spec)?;
            model.params.get_mut(id).data_mut()[j] = x;
            let num = (up - down) / (2.0 * eps);
            worst = worst.max((grads[id.0][j] - num).abs() / grads[id.0][j].abs().max(1.0));
        }
    }
    Ok((worst < 1e-4, format!("max relative error {worst:.2e}")))
}

type EdgeSet = BTreeSet<(NodeId, RelId, NodeId)>;

/// Nodes and edges on walks h -> t of length <= p, by enumerating walks.
fn walk_oracle(edges: &[FactTriplet], h: NodeId, t: NodeId, p: usize) -> (BTreeSet<NodeId>, EdgeSet) {
    let mut nodes = BTreeSet::new();
    let mut used = EdgeSet::new();
    let mut stack: Vec<(Vec<FactTriplet>, NodeId)> = vec![(Vec::new(), h)];
    while let Some((walk, at)) = stack.pop() {
        if at == t {
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
    (nodes, used)
}

fn subgraph_check(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51);
    let cases = 30;
    for case in 0..cases {
        let n = rng.gen_range(3..8);
        let mut edges: Vec<FactTriplet> = (0..rng.gen_range(0..12))
            .map(|_| FactTriplet::new(rng.gen_range(0..n), rng.gen_range(2..4), rng.gen_range(0..n)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        let enc = EnclosingSubgraph {
            head: 0,
            tail: 1,
            nodes: (0..n).collect(),
            edges: edges.clone(),
        };
        for p in 2..=4 {
            let got = directional_prune(&enc, p);
            let (nodes, mut used) = walk_oracle(&edges, 0, 1, p);
            let shortest = (0..=p).find(|&k| !walk_oracle(&edges, 0, 1, k).0.is_empty());
            if nodes.is_empty() {
                if !got.is_degenerate() {
                    return Ok((false, format!("case {case}, P={p}: expected degenerate subgraph")));
                }
                continue;
            }
            if shortest.is_some_and(|s| s < p) {
                used.insert((1, R_IDENTITY, 1));
            }
            let got_nodes: BTreeSet<NodeId> = got.nodes.iter().copied().collect();
            let got_edges: EdgeSet = got.global_edges().iter().map(|e| (e.head, e.relation, e.tail)).collect();
            if got_nodes != nodes || got_edges != used {
                return Ok((false, format!("case {case}, P={p}: mismatch with walk enumeration")));
            }
        }
    }
    Ok((true, format!("{cases} random graphs x P in 2..=4")))
}

fn metrics_check(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5);
    for _ in 0..20 {
        let n = rng.gen_range(2..60);
        let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..10) as f64) / 10.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        labels[0] = true;
        labels[1] = false;
        let mut credit = 0.0;
        let mut pairs = 0.0;
        for i in 0..n {
            for j in 0..n {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    credit += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        let got = auroc(&scores, &labels).unwrap_or(f64::NAN);
        if (got - credit / pairs).abs() > 1e-9 {
            return Ok((false, format!("AUROC {got} vs pairwise {}", credit / pairs)));
        }
    }
    let truth: Vec<usize> = (0..200).map(|_| rng.gen_range(0..4)).collect();
    let pred: Vec<usize> = (0..200).map(|_| rng.gen_range(0..4)).collect();
    let m = classification_metrics(&truth, &pred, 4)?;
    let correct = truth.iter().zip(&pred).filter(|(a, b)| a == b).count();
    let ok = (m.accuracy - correct as f64 / 200.0).abs() < 1e-12;
    Ok((ok, "AUROC vs pairwise counting, accuracy vs direct count".into()))
}

fn checkpoint_check(seed: u64) -> Result<(bool, String)> {
    let config = RunConfig {
        dim: 3,
        layers: 1,
        ..RunConfig::default()
    };
    let dims = ModelDims {
        num_nodes: 5,
        num_relations: 4,
        num_classes: 2,
        dim: 3,
        layers: 1,
    };
    let c = Checkpoint {
        config,
        meta: CheckpointMeta {
            num_nodes: 5,
            num_relations: 4,
            num_classes: 2,
            epochs_run: 1,
            best_epoch: 1,
            best_valid_loss: 0.5,
            node_vocab_sha256: String::new(),
            relation_vocab_sha256: String::new(),
        },
        model: Model::new(dims, seed),
    };
    let back = Checkpoint::from_bytes(&c.to_bytes())?;
    Ok((back == c, "save/load round trip".into()))
}
