//! Multinomial logistic regression over word uni- and bi-grams.

use std::collections::{BTreeSet, HashMap};
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotatedUtterance, NluError, Token};
use crate::scalar::{softmax_in_place, Scalar};

fn ngrams(tokens: &[Token]) -> Vec<String> {
    let words: Vec<&str> = tokens
        .iter()
        .map(|t| if t.is_numeric { "<num>" } else { t.normalized.as_str() })
        .collect();
    let mut out: Vec<String> = words.iter().map(|w| format!("u={w}")).collect();
    let mut padded = vec!["<s>"];
    padded.extend(&words);
    padded.push("</s>");
    for w in padded.windows(2) {
        out.push(format!("b={}|{}", w[0], w[1]));
    }
    out.sort();
    out.dedup();
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct IntentModel<S: Scalar> {
    pub intents: Vec<String>,
    pub features: Vec<String>,
    /// Row-major `features × intents`.
    pub class_weights: Vec<S>,
    pub bias: Vec<S>,
    #[serde(skip)]
    index: OnceLock<HashMap<String, usize>>,
}

impl<S: Scalar> IntentModel<S> {
    fn index(&self) -> &HashMap<String, usize> {
        self.index
            .get_or_init(|| self.features.iter().enumerate().map(|(i, f)| (f.clone(), i)).collect())
    }

    fn feature_ids(&self, tokens: &[Token]) -> Vec<usize> {
        let idx = self.index();
        ngrams(tokens).iter().filter_map(|f| idx.get(f).copied()).collect()
    }

    fn probabilities(&self, ids: &[usize]) -> Vec<S> {
        let k = self.intents.len();
        let mut z = self.bias.clone();
        for &f in ids {
            for (c, zc) in z.iter_mut().enumerate() {
                *zc += self.class_weights[f * k + c];
            }
        }
        softmax_in_place(&mut z);
        z
    }

    /// Class probabilities in `intents` order.
    pub fn predict_proba(&self, tokens: &[Token]) -> Vec<S> {
        self.probabilities(&self.feature_ids(tokens))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntentTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for IntentTrainConfig {
    fn default() -> Self {
        Self { epochs: 15, lr: 0.5, l2: 0.1, batch_size: 16, seed: 7 }
    }
}

/// Trains on the utterance intents. Intents are ordered by name.
pub fn intent_train<S: Scalar>(
    data: &[AnnotatedUtterance],
    cfg: &IntentTrainConfig,
) -> Result<IntentModel<S>, NluError> {
    if data.is_empty() {
        return Err(NluError::EmptyDataset);
    }
    let intents: Vec<String> = data.iter().map(|d| d.intent.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    if intents.len() < 2 {
        return Err(NluError::SingleClass(intents[0].clone()));
    }
    let vocab: BTreeSet<String> = data.iter().flat_map(|d| ngrams(&d.tokens)).collect();
    let k = intents.len();
    let mut model = IntentModel {
        class_weights: vec![S::zero(); vocab.len() * k],
        bias: vec![S::zero(); k],
        features: vocab.into_iter().collect(),
        intents,
        index: OnceLock::new(),
    };
    let encoded: Vec<(Vec<usize>, usize)> = data
        .iter()
        .map(|d| (model.feature_ids(&d.tokens), model.intents.iter().position(|i| *i == d.intent).unwrap()))
        .collect();
    let n = data.len() as f64;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut grad_w: HashMap<usize, Vec<S>> = HashMap::new();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let scale = S::of(cfg.lr / batch.len() as f64);
            let mut grad_b = vec![S::zero(); k];
            for &i in batch {
                let (ids, y) = &encoded[i];
                let mut p = model.probabilities(ids);
                p[*y] -= S::one();
                for &f in ids {
                    let g = grad_w.entry(f).or_insert_with(|| vec![S::zero(); k]);
                    for c in 0..k {
                        g[c] += p[c];
                    }
                }
                for c in 0..k {
                    grad_b[c] += p[c];
                }
            }
            let decay = S::of(1.0 - cfg.lr * cfg.l2 / n);
            for w in model.class_weights.iter_mut() {
                *w *= decay;
            }
            for (f, g) in grad_w.drain() {
                for c in 0..k {
                    model.class_weights[f * k + c] -= scale * g[c];
                }
            }
            for c in 0..k {
                model.bias[c] -= scale * grad_b[c];
            }
        }
    }
    Ok(model)
}

/// Most probable intent and its softmax probability.
pub fn intent_predict<S: Scalar>(model: &IntentModel<S>, tokens: &[Token]) -> (String, f64) {
    let p = model.predict_proba(tokens);
    let mut best = 0;
    for c in 1..p.len() {
        if p[c] > p[best] {
            best = c;
        }
    }
    (model.intents[best].clone(), p[best].as_f64())
}
