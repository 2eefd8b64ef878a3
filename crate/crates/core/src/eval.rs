//! Classification and ranking metrics, and the evaluation driver.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use log::warn;

use crate::config::Task;
use crate::error::{Error, Result};
use crate::graph::{CombinedNetwork, FactTriplet};
use crate::training::{sample_negatives, Predictor};

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationMetrics {
    pub macro_f1: f64,
    pub accuracy: f64,
    pub kappa: f64,
    pub per_class_f1: Vec<f64>,
    /// True-label count per class.
    pub support: Vec<usize>,
}

/// Macro-F1 over all `num_classes` classes (a class that never occurs in
/// truth or prediction scores 0 and still counts), accuracy, Cohen's kappa.
pub fn classification_metrics(truth: &[usize], pred: &[usize], num_classes: usize) -> Result<ClassificationMetrics> {
    if truth.is_empty() {
        return Err(Error::Data("no records to evaluate".into()));
    }
    if truth.len() != pred.len() {
        return Err(Error::Data(format!("{} labels but {} predictions", truth.len(), pred.len())));
    }
    if let Some(c) = truth.iter().chain(pred).find(|&&c| c >= num_classes) {
        return Err(Error::Data(format!("class {c} out of range for {num_classes} classes")));
    }
    let n = truth.len() as f64;
    let mut tp = vec![0usize; num_classes];
    let mut row = vec![0usize; num_classes];
    let mut col = vec![0usize; num_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        row[t] += 1;
        col[p] += 1;
        if t == p {
            tp[t] += 1;
        }
    }
    let per_class_f1: Vec<f64> = (0..num_classes)
        .map(|c| {
            let denom = row[c] + col[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .collect();
    let macro_f1 = per_class_f1.iter().sum::<f64>() / num_classes.max(1) as f64;
    let accuracy = tp.iter().sum::<usize>() as f64 / n;
    // kappa from integer counts: (n * sum tp - sum row*col) / (n^2 - sum row*col)
    let n_int = truth.len() as u128;
    let agree = tp.iter().sum::<usize>() as u128;
    let chance: u128 = (0..num_classes).map(|c| row[c] as u128 * col[c] as u128).sum();
    let kappa = if chance >= n_int * n_int {
        if agree == n_int {
            1.0
        } else {
            0.0
        }
    } else {
        (n_int as i128 * agree as i128 - chance as i128) as f64 / (n_int * n_int - chance) as f64
    };
    Ok(ClassificationMetrics {
        macro_f1,
        accuracy,
        kappa,
        per_class_f1,
        support: row,
    })
}

/// Area under the ROC curve via the rank statistic with midranks for ties.
/// `None` unless both classes are present.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Area under the precision-recall curve as step-wise average precision.
/// Tied scores form one threshold.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let gp = idx[i..=j].iter().filter(|&&k| labels[k]).count();
        tp += gp;
        seen += j - i + 1;
        ap += (gp as f64 / pos as f64) * (tp as f64 / seen as f64);
        i = j + 1;
    }
    Some(ap)
}

/// Average precision over the top `k` ranks, normalised by
/// `min(#positives, k)`. Ties are ranked by input order.
pub fn average_precision_at(scores: &[f64], labels: &[bool], k: usize) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || k == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in idx.iter().take(k).enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / pos.min(k) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelationRanking {
    pub class: usize,
    pub positives: usize,
    pub negatives: usize,
    pub auroc: f64,
    pub auprc: f64,
    pub ap50: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankingMetrics {
    pub auroc: f64,
    pub auprc: f64,
    pub ap50: f64,
    pub per_relation: Vec<RelationRanking>,
    /// Relations skipped for lacking positives or negatives.
    pub excluded: usize,
}

/// Unweighted means over relations of AUROC, AUPRC and AP@50.
/// `per_class[c]` holds `(scores, labels)` for class `c`.
pub fn ranking_metrics(per_class: &[(Vec<f64>, Vec<bool>)]) -> Result<RankingMetrics> {
    let mut per_relation = Vec::new();
    let mut excluded = 0;
    for (class, (scores, labels)) in per_class.iter().enumerate() {
        let positives = labels.iter().filter(|&&l| l).count();
        let negatives = labels.len() - positives;
        match (auroc(scores, labels), auprc(scores, labels), average_precision_at(scores, labels, 50)) {
            (Some(auroc), Some(auprc), Some(ap50)) => per_relation.push(RelationRanking {
                class,
                positives,
                negatives,
                auroc,
                auprc,
                ap50,
            }),
            _ => excluded += 1,
        }
    }
    if excluded > 0 {
        warn!("{excluded} relation(s) lack positives or negatives and were excluded");
    }
    if per_relation.is_empty() {
        return Err(Error::Data("no relation has both positives and negatives".into()));
    }
    let m = per_relation.len() as f64;
    Ok(RankingMetrics {
        auroc: per_relation.iter().map(|r| r.auroc).sum::<f64>() / m,
        auprc: per_relation.iter().map(|r| r.auprc).sum::<f64>() / m,
        ap50: per_relation.iter().map(|r| r.ap50).sum::<f64>() / m,
        per_relation,
        excluded,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum MetricsReport {
    Classification {
        metrics: ClassificationMetrics,
        class_labels: Vec<String>,
    },
    Ranking {
        metrics: RankingMetrics,
        class_labels: Vec<String>,
    },
}

impl MetricsReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        match self {
            MetricsReport::Classification { metrics: m, class_labels } => {
                let _ = writeln!(s, "macro-F1  {:.4}", m.macro_f1);
                let _ = writeln!(s, "ACC       {:.4}", m.accuracy);
                let _ = writeln!(s, "kappa     {:.4}", m.kappa);
                let _ = writeln!(s, "\n{:<24} {:>8} {:>8}", "relation", "support", "F1");
                for (c, l) in class_labels.iter().enumerate() {
                    let _ = writeln!(s, "{:<24} {:>8} {:>8.4}", l, m.support[c], m.per_class_f1[c]);
                }
            }
            MetricsReport::Ranking { metrics: m, class_labels } => {
                let _ = writeln!(s, "AUROC     {:.4}", m.auroc);
                let _ = writeln!(s, "AUPRC     {:.4}", m.auprc);
                let _ = writeln!(s, "AP@50     {:.4}", m.ap50);
                if m.excluded > 0 {
                    let _ = writeln!(s, "excluded  {} relation(s)", m.excluded);
                }
                let _ = writeln!(s, "\n{:<24} {:>6} {:>6} {:>8} {:>8} {:>8}", "relation", "pos", "neg", "AUROC", "AUPRC", "AP@50");
                for r in &m.per_relation {
                    let _ = writeln!(
                        s,
                        "{:<24} {:>6} {:>6} {:>8.4} {:>8.4} {:>8.4}",
                        class_labels[r.class], r.positives, r.negatives, r.auroc, r.auprc, r.ap50
                    );
                }
            }
        }
        s
    }

    /// `name=value` lines, with a per-relation breakdown.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        match self {
            MetricsReport::Classification { metrics: m, class_labels } => {
                let _ = writeln!(s, "macro_f1={:?}", m.macro_f1);
                let _ = writeln!(s, "accuracy={:?}", m.accuracy);
                let _ = writeln!(s, "kappa={:?}", m.kappa);
                for (c, l) in class_labels.iter().enumerate() {
                    let _ = writeln!(s, "relation.{l}.support={}", m.support[c]);
                    let _ = writeln!(s, "relation.{l}.f1={:?}", m.per_class_f1[c]);
                }
            }
            MetricsReport::Ranking { metrics: m, class_labels } => {
                let _ = writeln!(s, "auroc={:?}", m.auroc);
                let _ = writeln!(s, "auprc={:?}", m.auprc);
                let _ = writeln!(s, "ap50={:?}", m.ap50);
                let _ = writeln!(s, "excluded_relations={}", m.excluded);
                for r in &m.per_relation {
                    let l = &class_labels[r.class];
                    let _ = writeln!(s, "relation.{l}.positives={}", r.positives);
                    let _ = writeln!(s, "relation.{l}.auroc={:?}", r.auroc);
                    let _ = writeln!(s, "relation.{l}.auprc={:?}", r.auprc);
                    let _ = writeln!(s, "relation.{l}.ap50={:?}", r.ap50);
                }
            }
        }
        s
    }
}

pub fn class_labels(net: &CombinedNetwork) -> Vec<String> {
    net.ddi_relations()
        .iter()
        .map(|&r| net.vocab().relations.label(r).to_owned())
        .collect()
}

/// Score `triples` with a trained predictor. Multiclass runs report F1, ACC
/// and kappa; multilabel runs draw one negative per positive (as in
/// training, with `seed`) and report the ranking metrics.
pub fn evaluate(
    predictor: &Predictor,
    triples: &[FactTriplet],
    known: &HashSet<FactTriplet>,
    seed: u64,
) -> Result<MetricsReport> {
    let net = predictor.net;
    let classes = net.ddi_relations().len();
    let class_of = |t: &FactTriplet| {
        net.class_of(t.relation)
            .ok_or_else(|| Error::Data(format!("relation {} is not a DDI relation", t.relation)))
    };
    match predictor.cfg.task {
        Task::Multiclass => {
            let pairs: Vec<_> = triples.iter().map(|t| (t.head, t.tail)).collect();
            let preds = predictor.predict_many(&pairs)?;
            let truth: Vec<usize> = triples.iter().map(class_of).collect::<Result<_>>()?;
            let pred: Vec<usize> = preds.iter().map(|p| p.class.unwrap_or(0)).collect();
            Ok(MetricsReport::Classification {
                metrics: classification_metrics(&truth, &pred, classes)?,
                class_labels: class_labels(net),
            })
        }
        Task::Multilabel => {
            let negs = sample_negatives(triples, known, net.drug_nodes(), seed);
            let mut pairs: Vec<_> = triples.iter().chain(&negs).map(|t| (t.head, t.tail)).collect();
            pairs.sort_unstable();
            pairs.dedup();
            let preds = predictor.predict_many(&pairs)?;
            let score: HashMap<_, _> = pairs.iter().zip(&preds).map(|(p, r)| (*p, &r.scores)).collect();
            let mut per_class = vec![(Vec::new(), Vec::new()); classes];
            for (t, label) in triples.iter().map(|t| (t, true)).chain(negs.iter().map(|t| (t, false))) {
                let c = class_of(t)?;
                per_class[c].0.push(score[&(t.head, t.tail)][c]);
                per_class[c].1.push(label);
            }
            Ok(MetricsReport::Ranking {
                metrics: ranking_metrics(&per_class)?,
                class_labels: class_labels(net),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let m = classification_metrics(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!((m.macro_f1, m.accuracy, m.kappa), (1.0, 1.0, 1.0));
    }

    #[test]
    fn chance_agreement_gives_zero_kappa() {
        let m = classification_metrics(&[0, 0, 1, 1], &[0, 1, 0, 1], 2).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert!(m.kappa.abs() < 1e-12);
    }

    #[test]
    fn absent_classes_count_as_zero_f1() {
        let m = classification_metrics(&[0, 0], &[0, 0], 2).unwrap();
        assert_eq!(m.per_class_f1, vec![1.0, 0.0]);
        assert_eq!(m.macro_f1, 0.5);
        // single-class perfect agreement: p_e = 1
        assert_eq!(m.kappa, 1.0);
    }

    #[test]
    fn empty_records_are_an_error() {
        assert!(classification_metrics(&[], &[], 2).is_err());
    }

    #[test]
    fn auroc_fixed_cases() {
        let s = [0.9, 0.8, 0.3, 0.2];
        assert_eq!(auroc(&s, &[true, true, false, false]), Some(1.0));
        assert_eq!(auroc(&s, &[true, false, true, false]), Some(0.75));
        assert_eq!(auroc(&[0.5, 0.5], &[true, false]), Some(0.5));
        assert_eq!(auroc(&s, &[true; 4]), None);
    }

    #[test]
    fn ap_cases() {
        let s = [0.9, 0.8, 0.3, 0.2];
        let l = [true, false, true, false];
        let want = (1.0 + 2.0 / 3.0) / 2.0;
        assert!((auprc(&s, &l).unwrap() - want).abs() < 1e-12);
        assert!((average_precision_at(&s, &l, 50).unwrap() - want).abs() < 1e-12);
        // only the first hit fits in the top 1; denominator min(2, 1)
        assert_eq!(average_precision_at(&s, &l, 1), Some(1.0));
    }

    #[test]
    fn relations_without_negatives_are_excluded() {
        let r = ranking_metrics(&[
            (vec![0.9, 0.1], vec![true, false]),
            (vec![0.4], vec![true]),
        ])
        .unwrap();
        assert_eq!(r.excluded, 1);
        assert_eq!(r.auroc, 1.0);
        assert!(ranking_metrics(&[(vec![0.4], vec![true])]).is_err());
    }
}
