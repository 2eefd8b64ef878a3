//! Generic node embeddings over the whole combined network.
//!
//! Each layer aggregates `relu(e_u W_a)` over the incoming edges of `v` with
//! an element-wise mean (zero for nodes without incoming edges), then mixes
//! the aggregate with the node's previous embedding: `e_v = [a_v || e_v] W_c`.
//! Relation types play no role here.

use rand::Rng;

use crate::error::Result;
use crate::graph::CombinedNetwork;
use crate::model::Model;
use crate::tensor::{Tape, Tensor, Var};

/// Edge endpoints used for aggregation, grouped by target node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderGraph {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub num_nodes: usize,
}

impl EncoderGraph {
    pub fn from_network(net: &CombinedNetwork) -> Self {
        let (src, dst) = net.incoming_endpoints();
        Self {
            src,
            dst,
            num_nodes: net.num_nodes(),
        }
    }
}

pub(crate) struct EncoderVars {
    pub features: Var,
    pub layers: Vec<(Var, Var)>,
}

impl EncoderVars {
    pub fn new(tape: &mut Tape, model: &Model, tracked: bool) -> Self {
        let mut put = |t: &Tensor| {
            if tracked {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let features = put(model.params.get(model.ids.features));
        let layers = model
            .ids
            .encoder_layers
            .iter()
            .map(|&(a, c)| (put(model.params.get(a)), put(model.params.get(c))))
            .collect();
        Self { features, layers }
    }
}

/// Dropout mask with inverted scaling; `None` rate means identity.
pub(crate) fn dropout_mask<R: Rng>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

pub(crate) fn encode<R: Rng>(
    tape: &mut Tape,
    vars: &EncoderVars,
    graph: &EncoderGraph,
    mut dropout: Option<(f64, &mut R)>,
) -> Result<Var> {
    let mut e = vars.features;
    for &(w_agg, w_comb) in &vars.layers {
        let msg = tape.matmul(e, w_agg)?;
        let msg = tape.relu(msg);
        let agg = tape.neighbor_mean(msg, &graph.src, &graph.dst, graph.num_nodes)?;
        let cat = tape.concat_last(&[agg, e])?;
        e = tape.matmul(cat, w_comb)?;
        if let Some((rate, rng)) = dropout.as_mut() {
            if *rate > 0.0 {
                let mask = dropout_mask(tape.value(e).len(), *rate, &mut **rng);
                e = tape.mask(e, mask)?;
            }
        }
    }
    Ok(e)
}

/// `|V| x d` generic embeddings in evaluation mode (no dropout).
pub fn generic_embeddings(graph: &EncoderGraph, model: &Model) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = EncoderVars::new(&mut tape, model, false);
    let out = encode::<rand_chacha::ChaCha8Rng>(&mut tape, &vars, graph, None)?;
    Ok(tape.value(out).clone())
}
