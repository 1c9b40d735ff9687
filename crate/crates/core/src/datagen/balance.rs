//! Class-balancing generation loop.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grammar::{expand_targeted, Grammar, GrammarError, Tier};
use crate::drugdb::DrugDatabase;
use crate::nlu::{split_bio, AnnotatedUtterance};
use crate::taxonomy::SlotSchema;

/// Number of `B-` spans per slot label.
pub fn slot_distribution(corpus: &[AnnotatedUtterance]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for u in corpus {
        for l in &u.bio_labels {
            if let Some(('B', name)) = split_bio(l) {
                *out.entry(name.to_string()).or_insert(0) += 1;
            }
        }
    }
    out
}

/// Largest over smallest count among `labels` (a missing label counts 0).
pub fn imbalance_ratio(dist: &BTreeMap<String, usize>, labels: &BTreeSet<String>) -> f64 {
    let counts: Vec<usize> = labels.iter().map(|l| dist.get(l).copied().unwrap_or(0)).collect();
    let max = counts.iter().copied().max().unwrap_or(0) as f64;
    let min = counts.iter().copied().min().unwrap_or(0) as f64;
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalanceTarget {
    pub min_count_per_slot: usize,
    pub max_total: usize,
}

impl Default for BalanceTarget {
    fn default() -> Self {
        Self { min_count_per_slot: 120, max_total: 10_000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalanceOutcome {
    pub generated: Vec<AnnotatedUtterance>,
    /// The promoted nonterminal each generated utterance was expanded from.
    pub origins: Vec<String>,
    /// Schema slots no rule can emit.
    pub unreachable: Vec<String>,
    /// Set when `max_total` stopped the loop before every slot reached the target.
    pub exhausted: bool,
    pub final_distribution: BTreeMap<String, usize>,
}

/// Generates utterances until every reachable slot of `schema` has at least
/// `min_count_per_slot` spans over `seed ∪ generated`.
///
/// Each iteration picks the least frequent reachable slot (ties by name),
/// promotes a phrase-level nonterminal able to emit it to a top-level
/// expansion, and steers the derivation so that the slot is emitted.
pub fn generate_balanced(
    g: &Grammar,
    seed: &[AnnotatedUtterance],
    db: &DrugDatabase,
    schema: &SlotSchema,
    target: &BalanceTarget,
    rng_seed: u64,
) -> Result<BalanceOutcome, GrammarError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let reachable_all = g.reachable_from_start();
    let reachable: BTreeSet<String> =
        schema.label_names().filter(|l| reachable_all.contains(*l)).map(str::to_string).collect();
    let unreachable: Vec<String> =
        schema.label_names().filter(|l| !reachable_all.contains(*l)).map(str::to_string).collect();

    // Phrase-level promotion candidates per slot, falling back to word level.
    let mut promote: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for slot in &reachable {
        let pick = |tier: Tier| -> Vec<&str> {
            g.tiers
                .iter()
                .filter(|(nt, t)| **t == tier && g.reachable_labels(nt).contains(slot))
                .map(|(nt, _)| nt.as_str())
                .collect()
        };
        let mut c = pick(Tier::Intermediate);
        if c.is_empty() {
            c = pick(Tier::Terminal);
        }
        if c.is_empty() {
            c = pick(Tier::High);
        }
        promote.insert(slot.as_str(), c);
    }

    let mut dist = slot_distribution(seed);
    let mut generated = Vec::new();
    let mut origins = Vec::new();
    let mut exhausted = false;
    loop {
        let next = reachable
            .iter()
            .map(|l| (dist.get(l).copied().unwrap_or(0), l))
            .filter(|(c, _)| *c < target.min_count_per_slot)
            .min();
        let Some((_, slot)) = next else { break };
        if generated.len() >= target.max_total {
            exhausted = true;
            break;
        }
        let nt = *promote[slot.as_str()].choose(&mut rng).expect("reachable slot has a promoter");
        let id = format!("gen-{:05}", generated.len() + 1);
        let u = expand_targeted(g, nt, db, Some(slot), &id, &mut rng)?;
        for (k, v) in slot_distribution(std::slice::from_ref(&u)) {
            *dist.entry(k).or_insert(0) += v;
        }
        generated.push(u);
        origins.push(nt.to_string());
    }
    Ok(BalanceOutcome { generated, origins, unreachable, exhausted, final_distribution: dist })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(labels: &[&str]) -> AnnotatedUtterance {
        let words: Vec<String> = (0..labels.len()).map(|i| format!("w{i}")).collect();
        AnnotatedUtterance::from_words("u", &words, labels.iter().map(|s| s.to_string()).collect(), "none")
    }

    #[test]
    fn counts_b_spans() {
        let corpus = vec![utt(&["B-drug", "O", "B-dos-val"]), utt(&["B-drug", "I-drug"])];
        let d = slot_distribution(&corpus);
        assert_eq!(d, BTreeMap::from([("drug".to_string(), 2), ("dos-val".to_string(), 1)]));
        assert!(slot_distribution(&[]).is_empty());
    }

    #[test]
    fn min_count_zero_generates_nothing() {
        let g = Grammar::parse(super::super::grammar::DEFAULT_GRAMMAR).unwrap();
        let out = generate_balanced(
            &g,
            &[],
            &DrugDatabase::fixture(),
            &SlotSchema::builtin(),
            &BalanceTarget { min_count_per_slot: 0, max_total: 100 },
            1,
        )
        .unwrap();
        assert!(out.generated.is_empty());
    }

    #[test]
    fn stopping_rule_fills_a_rare_slot() {
        let g = Grammar::parse(super::super::grammar::DEFAULT_GRAMMAR).unwrap();
        let mut seed = vec![utt(&["B-min-gap", "I-min-gap"]), utt(&["O", "B-min-gap"])];
        seed[0].intent = "medical_prescription".into();
        let out = generate_balanced(
            &g,
            &seed,
            &DrugDatabase::fixture(),
            &SlotSchema::builtin(),
            &BalanceTarget { min_count_per_slot: 50, max_total: 100_000 },
            4,
        )
        .unwrap();
        let with_gap = out.generated.iter().filter(|u| u.bio_labels.iter().any(|l| l == "B-min-gap")).count();
        assert!(with_gap >= 48);
        assert!(!out.exhausted);
        assert!(out.final_distribution.values().all(|&c| c >= 50));
    }

    #[test]
    fn max_total_is_reported() {
        let g = Grammar::parse(super::super::grammar::DEFAULT_GRAMMAR).unwrap();
        let out = generate_balanced(
            &g,
            &[],
            &DrugDatabase::fixture(),
            &SlotSchema::builtin(),
            &BalanceTarget { min_count_per_slot: 50, max_total: 10 },
            4,
        )
        .unwrap();
        assert_eq!(out.generated.len(), 10);
        assert!(out.exhausted);
    }
}
