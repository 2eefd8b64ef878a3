//! Parameters of the full model and batched loss/gradient evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{Reduction, Task};
use crate::encoder::{encode, EncoderGraph, EncoderVars};
use crate::error::{Error, Result};
use crate::graph::{NodeId, RelId};
use crate::ksg::{ksg_forward, LearnerHyper, LearnerVars, Support};
use crate::params::{ParamId, ParamSet};
use crate::subgraph::DrugFlowSubgraph;
use crate::tensor::{Tape, Tensor, Var};

/// Probabilities are clipped to this floor before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub num_nodes: usize,
    /// Size of the relation vocabulary, reserved relations included.
    pub num_relations: usize,
    pub num_classes: usize,
    pub dim: usize,
    pub layers: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamIds {
    pub features: ParamId,
    pub encoder_layers: Vec<(ParamId, ParamId)>,
    pub rel_emb: ParamId,
    pub mlp_w1: ParamId,
    pub mlp_b1: ParamId,
    pub mlp_w2: ParamId,
    pub mlp_b2: ParamId,
    /// Propagation transform per relation id.
    pub w_rel: Vec<ParamId>,
    pub w_cls: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    Zero,
    Uniform(f64),
}

fn layout(d: &ModelDims) -> Vec<(String, Vec<usize>, Init)> {
    let dim = d.dim;
    let he = |fan_in: usize| Init::Uniform((6.0 / fan_in as f64).sqrt());
    let lecun = |fan_in: usize| Init::Uniform((3.0 / fan_in as f64).sqrt());
    let small = Init::Uniform(1.0 / (dim as f64).sqrt());
    let mut l = vec![("encoder.features".to_string(), vec![d.num_nodes, dim], small)];
    for i in 0..d.layers {
        l.push((format!("encoder.{i}.w_agg"), vec![dim, dim], he(dim)));
        l.push((format!("encoder.{i}.w_comb"), vec![2 * dim, dim], lecun(2 * dim)));
    }
    l.push(("learner.relation_embeddings".into(), vec![d.num_relations, dim], small));
    l.push(("learner.mlp.w1".into(), vec![2 * dim, dim], he(2 * dim)));
    l.push(("learner.mlp.b1".into(), vec![dim], Init::Zero));
    l.push(("learner.mlp.w2".into(), vec![dim], lecun(dim)));
    l.push(("learner.mlp.b2".into(), vec![1], Init::Zero));
    for r in 0..d.num_relations {
        l.push((format!("learner.w_rel.{r}"), vec![dim, dim], he(dim)));
    }
    l.push(("learner.classifier".into(), vec![3 * dim, d.num_classes], lecun(3 * dim)));
    l
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub dims: ModelDims,
    pub params: ParamSet,
    pub ids: ParamIds,
}

impl Model {
    pub fn new(dims: ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for (name, shape, init) in layout(&dims) {
            let mut t = Tensor::zeros(shape);
            if let Init::Uniform(a) = init {
                t.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-a..=a));
            }
            params.add(name, t);
        }
        let ids = Self::resolve(&dims, &params).expect("fresh layout resolves");
        Self { dims, params, ids }
    }

    /// Wrap loaded parameters, checking names and shapes against `dims`.
    pub fn from_params(dims: ModelDims, params: ParamSet) -> Result<Self> {
        let expected = layout(&dims);
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape, _) in &expected {
            let id = params
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if params.get(id).shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {shape:?}",
                    params.get(id).shape()
                )));
            }
        }
        let ids = Self::resolve(&dims, &params)?;
        Ok(Self { dims, params, ids })
    }

    fn resolve(dims: &ModelDims, params: &ParamSet) -> Result<ParamIds> {
        let get = |n: &str| {
            params
                .id(n)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{n}`")))
        };
        Ok(ParamIds {
            features: get("encoder.features")?,
            encoder_layers: (0..dims.layers)
                .map(|i| Ok((get(&format!("encoder.{i}.w_agg"))?, get(&format!("encoder.{i}.w_comb"))?)))
                .collect::<Result<_>>()?,
            rel_emb: get("learner.relation_embeddings")?,
            mlp_w1: get("learner.mlp.w1")?,
            mlp_b1: get("learner.mlp.b1")?,
            mlp_w2: get("learner.mlp.w2")?,
            mlp_b2: get("learner.mlp.b2")?,
            w_rel: (0..dims.num_relations)
                .map(|r| get(&format!("learner.w_rel.{r}")))
                .collect::<Result<_>>()?,
            w_cls: get("learner.classifier")?,
        })
    }

    /// Parameters of the learner, in the order of `LearnerVars` fields.
    fn learner_ids(&self, slots: &[RelId]) -> Vec<ParamId> {
        let i = &self.ids;
        let mut v = vec![i.rel_emb, i.mlp_w1, i.mlp_b1, i.mlp_w2, i.mlp_b2];
        v.extend(slots.iter().map(|&r| i.w_rel[r]));
        v.push(i.w_cls);
        v
    }
}

/// Supervision for one pair.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// Multiclass: index of the true class.
    Class(usize),
    /// Multilabel: indices of the known relations of the pair.
    Labels(Vec<usize>),
    /// Multilabel negative: all labels 0.
    Negative,
}

fn learner_vars_list(lv: &LearnerVars) -> Vec<Var> {
    let mut v = vec![lv.rel_emb, lv.w1, lv.b1, lv.w2, lv.b2];
    v.extend(&lv.w_slot);
    v.push(lv.w_cls);
    v
}

/// Loss of one sample from its logits.
pub(crate) fn sample_loss(tape: &mut Tape, logits: Var, target: &Target, task: Task) -> Result<Var> {
    let c = tape.value(logits).len();
    let neg_sum = |tape: &mut Tape, x: Var| {
        let s = tape.sum(x);
        tape.scale(s, -1.0)
    };
    match (task, target) {
        (Task::Multiclass, Target::Class(y)) => {
            if *y >= c {
                return Err(Error::Data(format!("class {y} out of range for {c} classes")));
            }
            let p = tape.grouped_softmax(logits, &vec![0; c])?;
            let py = tape.gather(p, &[*y])?;
            let l = tape.log_clamped(py, LOG_FLOOR);
            Ok(neg_sum(tape, l))
        }
        (Task::Multilabel, Target::Labels(ys)) => {
            if let Some(y) = ys.iter().find(|&&y| y >= c) {
                return Err(Error::Data(format!("class {y} out of range for {c} classes")));
            }
            let p = tape.sigmoid(logits);
            let py = tape.gather(p, ys)?;
            let l = tape.log_clamped(py, LOG_FLOOR);
            Ok(neg_sum(tape, l))
        }
        (Task::Multilabel, Target::Negative) => {
            let p = tape.sigmoid(logits);
            let q = tape.scale(p, -1.0);
            let q = tape.add_scalar(q, 1.0);
            let l = tape.log_clamped(q, LOG_FLOOR);
            Ok(neg_sum(tape, l))
        }
        (task, target) => Err(Error::Data(format!("target {target:?} does not fit task {task}"))),
    }
}

/// One training/validation sample: a pair subgraph and its target.
#[derive(Clone, Copy, Debug)]
pub struct BatchItem<'a> {
    pub sub: &'a DrugFlowSubgraph,
    pub target: &'a Target,
}

/// Everything except parameters that a loss evaluation depends on.
#[derive(Clone, Copy, Debug)]
pub struct LossSpec<'a> {
    pub graph: &'a EncoderGraph,
    pub hyper: LearnerHyper,
    pub task: Task,
    pub reduction: Reduction,
}

struct PairGrad {
    loss: f64,
    learner: Vec<(ParamId, Vec<f64>)>,
    nodes: Vec<NodeId>,
    h0_grad: Vec<f64>,
}

fn initial_rows(generic: &Tensor, nodes: &[NodeId]) -> Result<Tensor> {
    let d = generic.last_dim();
    let rows = nodes.iter().flat_map(|&v| generic.row(v).iter().copied()).collect();
    Tensor::matrix(nodes.len(), d, rows)
}

fn describe(item: &BatchItem) -> String {
    format!("pair {:?} ({} nodes, {} edges), target {:?}", item.sub.pair, item.sub.num_nodes(), item.sub.edges.len(), item.target)
}

impl Model {
    fn pair_forward(
        &self,
        generic: &Tensor,
        item: &BatchItem,
        spec: &LossSpec,
        tracked: bool,
    ) -> Result<(Tape, Var, Var, LearnerVars, Support)> {
        let support = Support::build(item.sub, spec.hyper.resemble);
        let mut tape = Tape::new();
        let lv = LearnerVars::new(&mut tape, self, &support.slots, tracked);
        let rows = initial_rows(generic, &item.sub.nodes)?;
        let h0 = if tracked { tape.leaf(rows) } else { tape.constant(rows) };
        let out = ksg_forward(&mut tape, &lv, h0, &support, &spec.hyper)?;
        let loss = sample_loss(&mut tape, out.logits, item.target, spec.task)?;
        Ok((tape, loss, h0, lv, support))
    }

    fn reduce(&self, total: f64, n: usize, reduction: Reduction) -> f64 {
        match reduction {
            Reduction::Sum => total,
            Reduction::Mean if n > 0 => total / n as f64,
            Reduction::Mean => 0.0,
        }
    }

    /// Per-sample losses with given generic embeddings (no dropout).
    pub fn sample_losses(&self, generic: &Tensor, items: &[BatchItem], spec: &LossSpec) -> Result<Vec<f64>> {
        items
            .par_iter()
            .map(|it| {
                let (tape, loss, ..) = self.pair_forward(generic, it, spec, false)?;
                Ok(tape.value(loss).item())
            })
            .collect()
    }

    /// Reduced loss of a batch in evaluation mode.
    pub fn batch_loss(&self, items: &[BatchItem], spec: &LossSpec) -> Result<f64> {
        let generic = crate::encoder::generic_embeddings(spec.graph, self)?;
        let losses = self.sample_losses(&generic, items, spec)?;
        Ok(self.reduce(losses.iter().sum(), items.len(), spec.reduction))
    }

    /// Reduced batch loss and its gradient with respect to every parameter.
    /// `dropout` is `(rate, seed)` for the encoder in training mode.
    pub fn batch_loss_and_grads(
        &self,
        items: &[BatchItem],
        spec: &LossSpec,
        dropout: Option<(f64, u64)>,
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut enc_tape = Tape::new();
        let ev = EncoderVars::new(&mut enc_tape, self, true);
        let g = match dropout {
            Some((rate, seed)) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                encode(&mut enc_tape, &ev, spec.graph, Some((rate, &mut rng)))?
            }
            None => encode::<ChaCha8Rng>(&mut enc_tape, &ev, spec.graph, None)?,
        };
        let generic = enc_tape.value(g).clone();

        let pairs: Vec<PairGrad> = items
            .par_iter()
            .map(|it| -> Result<PairGrad> {
                let (mut tape, loss, h0, lv, support) = self.pair_forward(&generic, it, spec, true)?;
                let value = tape.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::NonFinite(describe(it)));
                }
                tape.backward(loss)?;
                let learner = self
                    .learner_ids(&support.slots)
                    .into_iter()
                    .zip(learner_vars_list(&lv))
                    .map(|(id, v)| (id, tape.grad_or_zeros(v)))
                    .collect();
                Ok(PairGrad {
                    loss: value,
                    learner,
                    nodes: it.sub.nodes.clone(),
                    h0_grad: tape.grad_or_zeros(h0),
                })
            })
            .collect::<Result<_>>()?;

        let d = self.dims.dim;
        let mut grads = self.params.zero_grads();
        let mut dg = vec![0.0; generic.len()];
        let mut total = 0.0;
        for p in &pairs {
            total += p.loss;
            for (id, g) in &p.learner {
                for (a, b) in grads[id.0].iter_mut().zip(g) {
                    *a += b;
                }
            }
            for (i, &v) in p.nodes.iter().enumerate() {
                for j in 0..d {
                    dg[v * d + j] += p.h0_grad[i * d + j];
                }
            }
        }
        enc_tape.backward_from(g, &dg)?;
        grads[self.ids.features.0] = enc_tape.grad_or_zeros(ev.features);
        for (&(a, c), &(va, vc)) in self.ids.encoder_layers.iter().zip(&ev.layers) {
            grads[a.0] = enc_tape.grad_or_zeros(va);
            grads[c.0] = enc_tape.grad_or_zeros(vc);
        }
        let scale = self.reduce(1.0, items.len(), spec.reduction);
        if scale != 1.0 {
            grads.iter_mut().flatten().for_each(|x| *x *= scale);
        }
        Ok((total * scale, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims {
            num_nodes: 4,
            num_relations: 4,
            num_classes: 3,
            dim: 4,
            layers: 2,
        }
    }

    #[test]
    fn layout_round_trips_through_from_params() {
        let m = Model::new(dims(), 1);
        let back = Model::from_params(dims(), m.params.clone()).unwrap();
        assert_eq!(back, m);
        let mut other = dims();
        other.dim = 5;
        assert!(Model::from_params(other, m.params.clone()).is_err());
    }

    #[test]
    fn seeded_init_is_deterministic() {
        assert_eq!(Model::new(dims(), 9), Model::new(dims(), 9));
        assert_ne!(Model::new(dims(), 9), Model::new(dims(), 10));
    }

    fn loss_of(logits: &[f64], target: Target, task: Task) -> f64 {
        let mut t = Tape::new();
        let l = t.constant(Tensor::vector(logits.to_vec()));
        let out = sample_loss(&mut t, l, &target, task).unwrap();
        t.value(out).item()
    }

    #[test]
    fn uniform_multiclass_loss_is_log_classes() {
        let l = loss_of(&[0.3; 4], Target::Class(2), Task::Multiclass);
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn negative_loss_vanishes_for_confident_zeros() {
        let l = loss_of(&[-60.0, -60.0], Target::Negative, Task::Multilabel);
        assert!(l < 1e-20);
        let big = loss_of(&[800.0, -60.0], Target::Negative, Task::Multilabel);
        assert!((big - (-LOG_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn mismatched_target_is_rejected() {
        let mut t = Tape::new();
        let l = t.constant(Tensor::vector(vec![0.0, 0.0]));
        assert!(sample_loss(&mut t, l, &Target::Negative, Task::Multiclass).is_err());
        assert!(sample_loss(&mut t, l, &Target::Class(5), Task::Multiclass).is_err());
    }

    fn fixture(seed: u64) -> (Model, EncoderGraph, Vec<DrugFlowSubgraph>) {
        use crate::graph::FactTriplet;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 7;
        let edges: Vec<FactTriplet> = (0..14)
            .map(|_| FactTriplet::new(rng.gen_range(0..n), rng.gen_range(2..5), rng.gen_range(0..n)))
            .collect();
        let graph = EncoderGraph {
            src: edges.iter().map(|e| e.head).collect(),
            dst: edges.iter().map(|e| e.tail).collect(),
            num_nodes: n,
        };
        let subs = vec![
            DrugFlowSubgraph::from_global(0, 1, &[0, 1, 2, 3, 4], &edges, 3),
            DrugFlowSubgraph::from_global(2, 5, &[2, 5, 6], &edges, 3),
        ];
        let m = Model::new(
            ModelDims {
                num_nodes: n,
                num_relations: 5,
                num_classes: 3,
                dim: 4,
                layers: 2,
            },
            seed,
        );
        (m, graph, subs)
    }

    #[test]
    fn full_loss_gradient_matches_finite_differences() {
        for (task, targets) in [
            (Task::Multiclass, vec![Target::Class(2), Target::Class(0)]),
            (Task::Multilabel, vec![Target::Labels(vec![0, 2]), Target::Negative]),
        ] {
            let (mut m, graph, subs) = fixture(3);
            let spec = LossSpec {
                graph: &graph,
                hyper: LearnerHyper {
                    alpha: 0.4,
                    gamma: 0.05,
                    iterations: 2,
                    resemble: true,
                },
                task,
                reduction: Reduction::Mean,
            };
            let items: Vec<BatchItem> = subs
                .iter()
                .zip(&targets)
                .map(|(sub, target)| BatchItem { sub, target })
                .collect();
            let (loss, grads) = m.batch_loss_and_grads(&items, &spec, None).unwrap();
            assert!((loss - m.batch_loss(&items, &spec).unwrap()).abs() < 1e-12);
            let eps = 1e-6;
            let mut worst: f64 = 0.0;
            for id in m.params.ids().collect::<Vec<_>>() {
                for j in 0..m.params.get(id).len() {
                    let orig = m.params.get(id).data()[j];
                    m.params.get_mut(id).data_mut()[j] = orig + eps;
                    let up = m.batch_loss(&items, &spec).unwrap();
                    m.params.get_mut(id).data_mut()[j] = orig - eps;
                    let down = m.batch_loss(&items, &spec).unwrap();
                    m.params.get_mut(id).data_mut()[j] = orig;
                    let num = (up - down) / (2.0 * eps);
                    let a = grads[id.0][j];
                    worst = worst.max((a - num).abs() / a.abs().max(1.0));
                }
            }
            assert!(worst < 1e-5, "{task}: {worst}");
        }
    }
}
