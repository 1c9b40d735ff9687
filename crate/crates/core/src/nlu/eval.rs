//! Span-level slot scores and intent accuracy.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{crf_decode, decode_spans, intent_predict, AnnotatedUtterance, CrfModel, IntentModel, Span};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

impl Prf {
    fn from_counts(tp: usize, n_pred: usize, n_gold: usize) -> Self {
        let p = if n_pred == 0 { 0.0 } else { tp as f64 / n_pred as f64 };
        let r = if n_gold == 0 { 0.0 } else { tp as f64 / n_gold as f64 };
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        Prf { precision: p, recall: r, f1, support: n_gold }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SlotReport {
    pub per_label: BTreeMap<String, Prf>,
    pub micro: Prf,
    /// Unweighted mean over every label in the label list, zero-support
    /// labels included with zero scores.
    pub macro_avg: Prf,
}

/// Exact-match span scores of `pred` against `gold`.
pub fn score_slots<T: AsRef<str>>(gold: &[Vec<T>], pred: &[Vec<T>], labels: &[String]) -> SlotReport {
    let mut tp: BTreeMap<String, usize> = BTreeMap::new();
    let mut n_pred: BTreeMap<String, usize> = BTreeMap::new();
    let mut n_gold: BTreeMap<String, usize> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        let gs: BTreeSet<Span> = decode_spans(g).into_iter().collect();
        let ps: BTreeSet<Span> = decode_spans(p).into_iter().collect();
        for s in &gs {
            *n_gold.entry(s.label.clone()).or_default() += 1;
        }
        for s in &ps {
            *n_pred.entry(s.label.clone()).or_default() += 1;
            if gs.contains(s) {
                *tp.entry(s.label.clone()).or_default() += 1;
            }
        }
    }
    let get = |m: &BTreeMap<String, usize>, l: &str| m.get(l).copied().unwrap_or(0);
    let mut per_label = BTreeMap::new();
    for l in labels {
        per_label.insert(l.clone(), Prf::from_counts(get(&tp, l), get(&n_pred, l), get(&n_gold, l)));
    }
    let micro = Prf::from_counts(tp.values().sum(), n_pred.values().sum(), n_gold.values().sum());
    let k = labels.len().max(1) as f64;
    let macro_avg = Prf {
        precision: per_label.values().map(|p| p.precision).sum::<f64>() / k,
        recall: per_label.values().map(|p| p.recall).sum::<f64>() / k,
        f1: per_label.values().map(|p| p.f1).sum::<f64>() / k,
        support: micro.support,
    };
    SlotReport { per_label, micro, macro_avg }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NluReport {
    pub n_utterances: usize,
    pub intent_accuracy: f64,
    pub slots: SlotReport,
}

/// Decodes every utterance and scores slots over `labels` and intents.
pub fn evaluate_nlu<S: Scalar>(
    crf: &CrfModel<S>,
    intent: &IntentModel<S>,
    test: &[AnnotatedUtterance],
    labels: &[String],
) -> NluReport {
    let gold: Vec<Vec<String>> = test.iter().map(|u| u.bio_labels.clone()).collect();
    let pred: Vec<Vec<String>> = test.iter().map(|u| crf_decode(crf, &u.tokens).0).collect();
    let correct = test.iter().filter(|u| intent_predict(intent, &u.tokens).0 == u.intent).count();
    NluReport {
        n_utterances: test.len(),
        intent_accuracy: if test.is_empty() { 0.0 } else { correct as f64 / test.len() as f64 },
        slots: score_slots(&gold, &pred, labels),
    }
}
