//! Dialogue state and the tracker that updates it from user inputs and
//! system actions.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::actions::*;
use crate::drugdb::{disambiguate, DrugDatabase, DrugRecord};
use crate::engine::checker::{check_record, PatientStub, Warning, WarningKind};
use crate::nlu::Token;
use crate::taxonomy::{frame_missing_slots, PrescriptionFrame, SlotSchema, INTENT_CONFIRM, INTENT_CORRECT, INTENT_NEGATE, INTENT_NONE};

pub const DEFAULT_HISTORY: usize = 10;

/// Slots whose change calls for a new drug lookup.
pub const DRUG_SLOTS: [&str; 7] = ["drug", "inn", "d-dos-val", "d-dos-up", "form", "route", "dos-uf"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Button {
    Confirm,
    Cancel,
    Restart,
    Comment,
}

impl Button {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "confirm" => Some(Self::Confirm),
            "cancel" => Some(Self::Cancel),
            "restart" => Some(Self::Restart),
            "comment" => Some(Self::Comment),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Confirm => "confirm",
            Self::Cancel => "cancel",
            Self::Restart => "restart",
            Self::Comment => "comment",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum InputKind {
    Utterance,
    Choice(usize),
    Button(Button),
}

impl InputKind {
    pub fn feature(&self) -> String {
        match self {
            Self::Utterance => "utterance".into(),
            Self::Choice(_) => "choice".into(),
            Self::Button(b) => format!("button_{}", b.as_str()),
        }
    }
}

/// What the last system reply asked for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "slot", rename_all = "snake_case")]
pub enum Awaiting {
    Slot(String),
    Choice,
    Confirmation,
    Restart,
}

impl Awaiting {
    pub fn feature(&self) -> &'static str {
        match self {
            Self::Slot(_) => "slot",
            Self::Choice => "choice",
            Self::Confirmation => "confirmation",
            Self::Restart => "restart",
        }
    }
}

/// A user input after understanding: utterances carry an intent and a frame
/// fragment, buttons and choices carry nothing else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserObservation {
    pub kind: InputKind,
    pub intent: String,
    pub delta: PrescriptionFrame,
    /// Slots named by a negation ("remove the duration").
    #[serde(default)]
    pub refs: Vec<String>,
    #[serde(default)]
    pub comment: Option<String>,
}

impl UserObservation {
    pub fn utterance(intent: impl Into<String>, delta: PrescriptionFrame) -> Self {
        Self { kind: InputKind::Utterance, intent: intent.into(), delta, refs: Vec::new(), comment: None }
    }

    pub fn button(b: Button) -> Self {
        let intent = match b {
            Button::Confirm => INTENT_CONFIRM,
            Button::Cancel => INTENT_NEGATE,
            Button::Restart | Button::Comment => INTENT_NONE,
        };
        Self { kind: InputKind::Button(b), intent: intent.into(), delta: PrescriptionFrame::new(), refs: Vec::new(), comment: None }
    }

    pub fn choice(i: usize) -> Self {
        Self { kind: InputKind::Choice(i), intent: INTENT_NONE.into(), delta: PrescriptionFrame::new(), refs: Vec::new(), comment: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub features: Vec<String>,
    pub position: usize,
    pub action: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueState {
    pub frame: PrescriptionFrame,
    pub last_intent: Option<String>,
    pub last_input: Option<InputKind>,
    /// Labels filled by the last input.
    pub delta_labels: Vec<String>,
    /// Slots removed by the last negation.
    pub refs: Vec<String>,
    pub candidates: Vec<DrugRecord>,
    pub drug_checked: bool,
    pub summary_shown: bool,
    pub checker_run: bool,
    pub warnings: Vec<Warning>,
    pub warnings_shown: bool,
    pub awaiting: Option<Awaiting>,
    pub last_action: Option<String>,
    pub actions_this_turn: usize,
    /// Earlier decision points, oldest first, at most `history_window - 1`.
    pub history: VecDeque<HistoryEntry>,
    pub history_window: usize,
    pub n_predictions: usize,
    pub turn: usize,
    pub terminal: bool,
}

impl Default for DialogueState {
    fn default() -> Self {
        Self::new(DEFAULT_HISTORY)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TrackerError {
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("the dialogue is over")]
    Terminal,
}

/// Database, schema and patient the tracker consults when applying lookups.
#[derive(Clone, Copy)]
pub struct World<'a> {
    pub schema: &'a SlotSchema,
    pub db: &'a DrugDatabase,
    pub patient: Option<&'a PatientStub>,
}

impl DialogueState {
    pub fn new(history_window: usize) -> Self {
        Self {
            frame: PrescriptionFrame::new(),
            last_intent: None,
            last_input: None,
            delta_labels: Vec::new(),
            refs: Vec::new(),
            candidates: Vec::new(),
            drug_checked: false,
            summary_shown: false,
            checker_run: false,
            warnings: Vec::new(),
            warnings_shown: false,
            awaiting: None,
            last_action: None,
            actions_this_turn: 0,
            history: VecDeque::new(),
            history_window: history_window.max(1),
            n_predictions: 0,
            turn: 0,
            terminal: false,
        }
    }

    /// No input seen and no action taken yet.
    pub fn is_pristine(&self) -> bool {
        self.turn == 0 && self.n_predictions == 0
    }

    pub fn drug_mentioned(&self) -> bool {
        self.frame.is_filled("drug") || self.frame.is_filled("inn")
    }

    pub fn missing(&self, schema: &SlotSchema) -> Vec<String> {
        frame_missing_slots(&self.frame, schema).unwrap_or_else(|_| schema.mandatory_slots.clone())
    }

    pub fn is_complete(&self, schema: &SlotSchema) -> bool {
        self.missing(schema).is_empty()
    }

    pub fn is_resolved(&self) -> bool {
        self.frame.resolved_ucd.is_some()
    }

    pub fn is_utterance(&self) -> bool {
        self.last_input == Some(InputKind::Utterance)
    }

    pub fn is_confirm(&self) -> bool {
        match &self.last_input {
            Some(InputKind::Button(Button::Confirm)) => true,
            Some(InputKind::Utterance) => self.last_intent.as_deref() == Some(INTENT_CONFIRM),
            _ => false,
        }
    }

    pub fn is_negate(&self) -> bool {
        self.is_utterance() && self.last_intent.as_deref() == Some(INTENT_NEGATE)
    }

    pub fn button(&self) -> Option<Button> {
        match self.last_input {
            Some(InputKind::Button(b)) => Some(b),
            _ => None,
        }
    }

    /// Whether `label` is filled directly or through one of its alternatives.
    pub fn slot_satisfied(&self, label: &str, schema: &SlotSchema) -> bool {
        self.frame.is_filled(label)
            || schema.label(label).is_some_and(|d| d.satisfied_by.iter().any(|a| self.frame.is_filled(a)))
    }

    fn invalidate_summary(&mut self) {
        self.summary_shown = false;
        self.checker_run = false;
        self.warnings.clear();
        self.warnings_shown = false;
    }

    fn reset_prescription(&mut self) {
        self.frame = PrescriptionFrame::new();
        self.candidates.clear();
        self.drug_checked = false;
        self.invalidate_summary();
        self.awaiting = None;
    }
}

/// Slots a negation names. `dose` covers the dosage pair, `drug` both names.
pub fn slot_references(tokens: &[Token]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for t in tokens {
        let group: &[&str] = match t.normalized.as_str() {
            "duration" => &["duration"],
            "frequency" => &["frequency"],
            "dose" | "dosage" | "posology" => &["dos-val", "dos-uf"],
            "drug" | "medication" | "medicine" => &["drug", "inn"],
            "strength" => &["d-dos-val", "d-dos-up"],
            "route" => &["route"],
            "form" => &["form"],
            "rhythm" | "timing" => &["rhythm"],
            _ => &[],
        };
        for s in group {
            if !out.iter().any(|o| o == s) {
                out.push(s.to_string());
            }
        }
    }
    out
}

/// Folds a user input into the state.
pub fn observe_user(state: &mut DialogueState, obs: &UserObservation) -> Result<(), TrackerError> {
    if state.terminal {
        return Err(TrackerError::Terminal);
    }
    state.turn += 1;
    state.actions_this_turn = 0;
    state.last_input = Some(obs.kind.clone());
    state.last_intent = Some(obs.intent.clone());
    state.refs.clear();
    state.delta_labels = obs.delta.filled_labels().map(str::to_string).collect();
    let mut changed: Vec<String> = Vec::new();
    match &obs.kind {
        InputKind::Button(Button::Comment) => {
            if let Some(c) = obs.comment.as_ref().filter(|c| !c.trim().is_empty()) {
                state.frame.comments.push(c.trim().to_string());
            }
        }
        InputKind::Button(_) => {}
        InputKind::Choice(i) => {
            if let Some(rec) = state.candidates.get(*i).cloned() {
                state.frame.resolved_ucd = Some(rec.ucd_code.clone());
                state.candidates = vec![rec];
                state.drug_checked = true;
                state.invalidate_summary();
            }
        }
        InputKind::Utterance => {
            if obs.intent == INTENT_NEGATE {
                let mut targets = obs.refs.clone();
                if targets.is_empty() {
                    if let Some(Awaiting::Slot(s)) = &state.awaiting {
                        targets.push(s.clone());
                    }
                }
                for r in &targets {
                    if !state.frame.remove(r).is_empty() {
                        changed.push(r.clone());
                        state.refs.push(r.clone());
                    }
                }
            }
            for (label, values) in &obs.delta.slots {
                for (k, v) in values.iter().enumerate() {
                    let replace = k == 0 && (obs.intent == INTENT_CORRECT || matches!(label.as_str(), "drug" | "inn"));
                    if replace {
                        state.frame.replace_last(label, v.clone());
                    } else {
                        state.frame.add(label, v.clone());
                    }
                }
                if !values.is_empty() {
                    changed.push(label.clone());
                }
            }
        }
    }
    if !changed.is_empty() {
        state.invalidate_summary();
        if changed.iter().any(|c| DRUG_SLOTS.contains(&c.as_str())) {
            state.drug_checked = false;
            if !state.drug_mentioned() {
                state.frame.resolved_ucd = None;
                state.candidates.clear();
            }
        }
    }
    Ok(())
}

/// Records the decision point and applies the effects of `action`.
pub fn apply_action(state: &mut DialogueState, action: &str, world: &World) -> Result<(), TrackerError> {
    if state.terminal {
        return Err(TrackerError::Terminal);
    }
    if !action_inventory().iter().any(|a| a == action) {
        return Err(TrackerError::UnknownAction(action.to_string()));
    }
    let features = super::features::state_feature_names(state, world.schema);
    state.history.push_back(HistoryEntry { features, position: state.n_predictions, action: action.to_string() });
    while state.history.len() > state.history_window - 1 {
        state.history.pop_front();
    }
    state.n_predictions += 1;
    state.actions_this_turn += 1;
    state.last_action = Some(action.to_string());
    match action {
        ACTION_CHECK_DRUG => {
            let previous = state.frame.resolved_ucd.take();
            let candidates = disambiguate(world.db, &state.frame).map(|o| o.candidates).unwrap_or_default();
            state.candidates = match candidates.iter().find(|c| Some(&c.ucd_code) == previous.as_ref()) {
                Some(kept) => vec![kept.clone()],
                None => candidates,
            };
            if state.candidates.len() == 1 {
                state.frame.resolved_ucd = Some(state.candidates[0].ucd_code.clone());
            }
            state.drug_checked = true;
        }
        ACTION_CHECK_PRESCRIPTION => {
            let default = PatientStub::default();
            let patient = world.patient.unwrap_or(&default);
            state.warnings = match state.candidates.first() {
                Some(rec) if state.is_resolved() => check_record(&state.frame, rec, patient),
                _ => vec![Warning { kind: WarningKind::Uncheckable, message: "no resolved drug to check".into() }],
            };
            state.checker_run = true;
        }
        PROPOSE_CANDIDATES => state.awaiting = Some(Awaiting::Choice),
        PROPOSE_SUMMARY => {
            state.summary_shown = true;
            state.awaiting = Some(Awaiting::Confirmation);
        }
        WARN_CHECKER => {
            state.warnings_shown = true;
            state.awaiting = Some(Awaiting::Confirmation);
        }
        ACK_VALIDATED => {
            state.frame.confirmed = true;
            state.terminal = true;
            state.awaiting = None;
        }
        ACK_CANCELLED => {
            state.terminal = true;
            state.awaiting = None;
        }
        REQUEST_RESTART => state.awaiting = Some(Awaiting::Restart),
        ACK_RESTART => state.reset_prescription(),
        ACK_COMMENT => {
            if state.summary_shown {
                state.awaiting = Some(Awaiting::Confirmation);
            }
        }
        UTTER_OUT_OF_SCOPE | UTTER_ASK_REPHRASE => {}
        other => {
            if let Some(slot) = requested_slot(other) {
                state.awaiting = Some(Awaiting::Slot(slot.to_string()));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlu::tokenize;
    use crate::taxonomy::SlotValue;

    fn delta(pairs: &[(&str, &str, &str)]) -> PrescriptionFrame {
        let mut f = PrescriptionFrame::new();
        for (l, v, n) in pairs {
            f.add(l, SlotValue::new(*v, *n, 0));
        }
        f
    }

    #[test]
    fn references() {
        assert_eq!(slot_references(&tokenize("remove the duration")), ["duration"]);
        assert_eq!(slot_references(&tokenize("no, delete the dose")), ["dos-val", "dos-uf"]);
        assert!(slot_references(&tokenize("no")).is_empty());
    }

    #[test]
    fn check_drug_then_negate_duration() {
        let schema = SlotSchema::builtin();
        let db = DrugDatabase::fixture();
        let world = World { schema: &schema, db: &db, patient: None };
        let mut s = DialogueState::default();
        let d = delta(&[("inn", "Ofloxacine", "ofloxacine"), ("d-dos-val", "200", "200"), ("d-dos-up", "mg", "mg"),
            ("dos-val", "2", "2"), ("dos-uf", "injections", "injection"), ("frequency", "per day", "1/day"),
            ("duration", "7 days", "7 days")]);
        observe_user(&mut s, &UserObservation::utterance("medical_prescription", d)).unwrap();
        assert!(!s.drug_checked);
        apply_action(&mut s, ACTION_CHECK_DRUG, &world).unwrap();
        assert_eq!(s.frame.resolved_ucd.as_deref(), Some("9000102"));
        apply_action(&mut s, PROPOSE_SUMMARY, &world).unwrap();
        assert_eq!(s.awaiting, Some(Awaiting::Confirmation));
        let mut neg = UserObservation::utterance("negate", PrescriptionFrame::new());
        neg.refs = vec!["duration".into()];
        observe_user(&mut s, &neg).unwrap();
        assert!(!s.frame.is_filled("duration"));
        assert!(!s.summary_shown);
        assert_eq!(s.missing(&schema), ["duration"]);
        assert_eq!(s.history.len(), 2);
        assert_eq!(s.history[0].action, ACTION_CHECK_DRUG);
    }

    #[test]
    fn choice_resolves_and_survives_recheck() {
        let schema = SlotSchema::builtin();
        let db = DrugDatabase::fixture();
        let world = World { schema: &schema, db: &db, patient: None };
        let mut s = DialogueState::default();
        let d = delta(&[("drug", "Doliprane", "doliprane"), ("d-dos-val", "500", "500"), ("d-dos-up", "mg", "mg")]);
        observe_user(&mut s, &UserObservation::utterance("medical_prescription", d)).unwrap();
        apply_action(&mut s, ACTION_CHECK_DRUG, &world).unwrap();
        assert!(s.candidates.len() > 1);
        apply_action(&mut s, PROPOSE_CANDIDATES, &world).unwrap();
        let pick = s.candidates.iter().position(|c| c.form == "effervescent tablet").unwrap();
        observe_user(&mut s, &UserObservation::choice(pick)).unwrap();
        let code = s.frame.resolved_ucd.clone().unwrap();
        observe_user(&mut s, &UserObservation::utterance("medical_prescription", delta(&[("dos-val", "1", "1"), ("dos-uf", "tablet", "tablet")]))).unwrap();
        assert!(!s.drug_checked);
        apply_action(&mut s, ACTION_CHECK_DRUG, &world).unwrap();
        assert_eq!(s.frame.resolved_ucd, Some(code));
        assert_eq!(s.candidates.len(), 1);
    }

    #[test]
    fn terminal_absorbs_and_unknown_action_fails() {
        let schema = SlotSchema::builtin();
        let db = DrugDatabase::fixture();
        let world = World { schema: &schema, db: &db, patient: None };
        let mut s = DialogueState::default();
        assert_eq!(apply_action(&mut s, "dance", &world), Err(TrackerError::UnknownAction("dance".into())));
        apply_action(&mut s, ACK_CANCELLED, &world).unwrap();
        assert!(s.terminal);
        let before = s.clone();
        assert_eq!(observe_user(&mut s, &UserObservation::button(Button::Confirm)), Err(TrackerError::Terminal));
        assert_eq!(s, before);
    }
}
