//! Train on the planted-rule benchmark and report accuracy.
//!
//! Arguments are `key=value` configuration overrides, e.g.
//! `cargo run --release --example planted -- P=2 gamma=0.05 batch_size=32`.

use std::time::Instant;

use knowddi::data::{from_planted, PreprocessOptions};
use knowddi::synthetic::{planted_rule, PlantedSpec};
use knowddi::training::{train, Predictor};
use knowddi::RunConfig;

fn main() {
    let mut cfg = RunConfig::default();
    for a in std::env::args().skip(1) {
        let (k, v) = a.split_once('=').unwrap();
        cfg.set(k, v).unwrap();
    }
    let ds = from_planted(planted_rule(&PlantedSpec::default()), &PreprocessOptions::default()).unwrap();
    let net = ds.network(1.0, 0);
    let t0 = Instant::now();
    let out = train(&net, &ds.splits, &cfg).unwrap();
    let p = Predictor::new(&out.model, &net, &cfg).unwrap();
    let acc = |ts: &[knowddi::graph::FactTriplet]| {
        let pr = p.predict_many(&ts.iter().map(|t| (t.head, t.tail)).collect::<Vec<_>>()).unwrap();
        pr.iter().zip(ts).filter(|(p, t)| p.class == net.class_of(t.relation)).count() as f64 / ts.len() as f64
    };
    for h in &out.history {
        eprintln!("{} {:.3} {:.3}", h.epoch, h.train_loss, h.valid_loss);
    }
    println!(
        "mode={} epochs={} best={} train_acc={:.3} test_acc={:.3} secs={:.1}",
        cfg.subgraph_mode,
        out.epochs_run,
        out.best_epoch,
        acc(&ds.splits.train),
        acc(&ds.splits.test),
        t0.elapsed().as_secs_f64()
    );
}
