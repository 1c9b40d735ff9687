//! Assembly of the NLU training corpus: seed set, balanced expansions,
//! samples of every start symbol and the small-talk pool.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::balance::{generate_balanced, BalanceOutcome, BalanceTarget};
use super::grammar::{expand, Grammar, GrammarError};
use crate::corpusio::{parse_conll, ColumnLayout};
use crate::drugdb::DrugDatabase;
use crate::nlu::{tokenize, AnnotatedUtterance};
use crate::taxonomy::{SlotSchema, INTENT_NONE};

/// The hand-annotated seed prescriptions.
pub const DEFAULT_SEED_CONLL: &str = include_str!("../../../../data/seed.conll");

pub fn default_seed_corpus() -> Vec<AnnotatedUtterance> {
    parse_conll(DEFAULT_SEED_CONLL, &ColumnLayout::default()).expect("bundled seed corpus parses").utterances
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub balance: BalanceTarget,
    /// Expansions drawn from each start symbol other than the prescription one.
    pub per_start_symbol: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { balance: BalanceTarget::default(), per_start_symbol: 150, test_fraction: 0.2, seed: 7 }
    }
}

#[derive(Debug, Clone)]
pub struct BuiltCorpus {
    pub train: Vec<AnnotatedUtterance>,
    pub test: Vec<AnnotatedUtterance>,
    pub balance: BalanceOutcome,
}

/// Small-talk sentence as an all-`O` utterance of intent `none`.
pub fn smalltalk_utterance(id: &str, text: &str) -> AnnotatedUtterance {
    let words: Vec<String> = tokenize(text).into_iter().map(|t| t.text).collect();
    let labels = vec!["O".to_string(); words.len()];
    AnnotatedUtterance::from_words(id, &words, labels, INTENT_NONE)
}

pub fn build_nlu_corpus(
    g: &Grammar,
    seed_corpus: &[AnnotatedUtterance],
    db: &DrugDatabase,
    schema: &SlotSchema,
    smalltalk: &[String],
    cfg: &CorpusConfig,
) -> Result<BuiltCorpus, GrammarError> {
    let balance = generate_balanced(g, seed_corpus, db, schema, &cfg.balance, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(17));
    let mut all: Vec<AnnotatedUtterance> = seed_corpus.to_vec();
    all.extend(balance.generated.iter().cloned());
    for start in &g.start_symbols {
        if start == "PRESCRIPTION" {
            continue;
        }
        for k in 0..cfg.per_start_symbol {
            all.push(expand(g, start, db, &format!("{}-{k:04}", start.to_lowercase()), &mut rng)?);
        }
    }
    for (k, s) in smalltalk.iter().enumerate() {
        let u = smalltalk_utterance(&format!("none-{k:04}"), s);
        if !u.tokens.is_empty() {
            all.push(u);
        }
    }
    all.shuffle(&mut rng);
    let n_test = ((all.len() as f64) * cfg.test_fraction.clamp(0.0, 1.0)).round() as usize;
    let train = all.split_off(n_test);
    Ok(BuiltCorpus { train, test: all, balance })
}
