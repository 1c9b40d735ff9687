//! Binary state features for the learned policy.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::actions::action_tokens;
use super::state::{Awaiting, DialogueState};
use crate::taxonomy::SlotSchema;

/// Names of the active features of `state`.
///
/// Families: `intent:`, `input:`, `slot:` (filled labels), `missing:` and
/// `next:` (mandatory slots still empty), lookup flags, `awaiting:` and
/// `prev:` (words of the previous action name). A state that has seen no
/// input and taken no action has no features.
pub fn state_feature_names(state: &DialogueState, schema: &SlotSchema) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    if state.is_pristine() {
        return out;
    }
    if let Some(kind) = &state.last_input {
        out.push(format!("input:{}", kind.feature()));
        if state.is_utterance() {
            if let Some(i) = &state.last_intent {
                out.push(format!("intent:{i}"));
            }
            if state.delta_labels.is_empty() && state.refs.is_empty() {
                out.push("flag:delta_empty".into());
            }
        }
    }
    for l in state.frame.filled_labels() {
        out.push(format!("slot:{l}"));
    }
    let missing = state.missing(schema);
    for m in &missing {
        out.push(format!("missing:{m}"));
    }
    match missing.first() {
        Some(m) => out.push(format!("next:{m}")),
        None => out.push("flag:complete".into()),
    }
    if !state.refs.is_empty() {
        out.push("flag:negated_slots".into());
    }
    if state.is_resolved() {
        out.push("flag:resolved".into());
    }
    if state.drug_checked {
        out.push("flag:drug_checked".into());
        out.push(
            match state.candidates.len() {
                0 => "candidates:0",
                1 => "candidates:1",
                _ => "candidates:many",
            }
            .into(),
        );
    }
    for (on, name) in [
        (state.summary_shown, "flag:summary_shown"),
        (state.checker_run, "flag:checker_run"),
        (!state.warnings.is_empty(), "flag:warnings"),
        (state.warnings_shown, "flag:warnings_shown"),
        (!state.frame.comments.is_empty(), "flag:comment"),
        (state.actions_this_turn > 0, "flag:same_turn"),
    ] {
        if on {
            out.push(name.into());
        }
    }
    if let Some(a) = &state.awaiting {
        out.push(format!("awaiting:{}", a.feature()));
        if let Awaiting::Slot(s) = a {
            out.push(format!("awaiting_slot:{s}"));
        }
    }
    if let Some(a) = &state.last_action {
        for w in action_tokens(a) {
            out.push(format!("prev:{w}"));
        }
    }
    out.sort();
    out.dedup();
    out
}

/// Sparse binary feature vector of one decision point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateFeatures {
    /// Sorted indices of the active features.
    pub indices: Vec<usize>,
    pub dim: usize,
    /// Index of the decision point within its session.
    pub position: usize,
    /// Active feature names missing from the vocabulary, dropped.
    pub unknown: usize,
}

impl StateFeatures {
    pub fn dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &i in &self.indices {
            v[i] = 1.0;
        }
        v
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct FeatureVocab {
    pub names: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for FeatureVocab {
    fn from(names: Vec<String>) -> Self {
        Self::new(names)
    }
}

impl From<FeatureVocab> for Vec<String> {
    fn from(v: FeatureVocab) -> Self {
        v.names
    }
}

impl FeatureVocab {
    pub fn new<I: IntoIterator<Item = String>>(names: I) -> Self {
        let set: BTreeSet<String> = names.into_iter().collect();
        Self::from_sorted(set.into_iter().collect())
    }

    fn from_sorted(names: Vec<String>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { names, index }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn encode(&self, names: &[String], position: usize) -> StateFeatures {
        let mut indices = Vec::with_capacity(names.len());
        let mut unknown = 0;
        for n in names {
            match self.index.get(n) {
                Some(&i) => indices.push(i),
                None => unknown += 1,
            }
        }
        indices.sort_unstable();
        indices.dedup();
        StateFeatures { indices, dim: self.names.len(), position, unknown }
    }
}

pub fn featurize_state(state: &DialogueState, schema: &SlotSchema, vocab: &FeatureVocab) -> StateFeatures {
    vocab.encode(&state_feature_names(state, schema), state.n_predictions)
}
