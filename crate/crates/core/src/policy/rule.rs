//! Hand-written decision table and the legality mask shared by all policies.

use super::actions::*;
use super::state::{Awaiting, Button, DialogueState};
use crate::taxonomy::{SlotSchema, INTENT_NONE};

/// Deterministic next action for `state`.
///
/// Called repeatedly within a turn: after a lookup action the state changes
/// and the table is consulted again until a reply action comes out.
pub fn rule_policy(state: &DialogueState, schema: &SlotSchema) -> SystemAction {
    SystemAction::new(rule_action(state, schema))
}

fn rule_action(state: &DialogueState, schema: &SlotSchema) -> String {
    let s = |a: &str| a.to_string();
    if state.terminal {
        return s(UTTER_ASK_REPHRASE);
    }
    match state.button() {
        Some(Button::Restart) => return s(ACK_RESTART),
        Some(Button::Cancel) => return s(ACK_CANCELLED),
        _ => {}
    }
    if state.awaiting == Some(Awaiting::Restart) {
        if state.is_confirm() {
            return s(ACK_RESTART);
        }
        if state.is_negate() {
            return s(ACK_CANCELLED);
        }
    }
    if state.is_negate() && state.refs.is_empty() {
        match state.awaiting {
            Some(Awaiting::Confirmation) => return s(ACK_CANCELLED),
            Some(Awaiting::Choice) => return s(REQUEST_RESTART),
            _ => {}
        }
    }
    let nothing_new = state.is_utterance() && state.delta_labels.is_empty() && state.refs.is_empty();
    if nothing_new && state.last_intent.as_deref() == Some(INTENT_NONE) {
        return s(UTTER_OUT_OF_SCOPE);
    }
    if state.button() == Some(Button::Comment) {
        return s(ACK_COMMENT);
    }
    if state.drug_mentioned() {
        if !state.drug_checked {
            return s(ACTION_CHECK_DRUG);
        }
        if state.candidates.is_empty() {
            return s(REQUEST_RESTART);
        }
        if state.candidates.len() > 1 && !state.is_resolved() {
            if state.awaiting == Some(Awaiting::Choice) && nothing_new {
                return s(UTTER_ASK_REPHRASE);
            }
            return s(PROPOSE_CANDIDATES);
        }
    }
    if let Some(first) = state.missing(schema).first() {
        return request_slot(first);
    }
    if !state.is_resolved() {
        // complete but unresolved only happens without a drug name
        return s(REQUEST_RESTART);
    }
    if !state.summary_shown {
        return s(PROPOSE_SUMMARY);
    }
    if state.is_confirm() {
        if !state.checker_run {
            return s(ACTION_CHECK_PRESCRIPTION);
        }
        if !state.warnings.is_empty() && !state.warnings_shown {
            return s(WARN_CHECKER);
        }
        return s(ACK_VALIDATED);
    }
    s(UTTER_ASK_REPHRASE)
}

/// Whether `action` may be taken in `state`, independent of which policy
/// proposes it.
pub fn is_legal(state: &DialogueState, action: &str, schema: &SlotSchema) -> bool {
    if state.terminal {
        return false;
    }
    let complete = state.is_complete(schema);
    let resolved = state.is_resolved();
    let confirm = state.is_confirm();
    match action {
        ACTION_CHECK_DRUG => state.drug_mentioned() && !state.drug_checked,
        ACTION_CHECK_PRESCRIPTION => complete && resolved && state.summary_shown && confirm && !state.checker_run,
        PROPOSE_CANDIDATES => state.candidates.len() > 1 && !resolved,
        PROPOSE_SUMMARY => complete && resolved,
        ACK_VALIDATED => {
            complete
                && resolved
                && state.summary_shown
                && confirm
                && state.checker_run
                && (state.warnings.is_empty() || state.warnings_shown)
        }
        ACK_CANCELLED | REQUEST_RESTART | UTTER_OUT_OF_SCOPE | UTTER_ASK_REPHRASE => true,
        ACK_RESTART => {
            state.button() == Some(Button::Restart) || (state.awaiting == Some(Awaiting::Restart) && confirm)
        }
        WARN_CHECKER => state.checker_run && !state.warnings.is_empty(),
        ACK_COMMENT => !state.frame.comments.is_empty(),
        other => match requested_slot(other) {
            Some(slot) => REQUESTABLE_SLOTS.contains(&slot) && !state.slot_satisfied(slot, schema),
            None => false,
        },
    }
}

/// Legal actions in inventory order.
pub fn legal_actions(state: &DialogueState, schema: &SlotSchema) -> Vec<String> {
    action_inventory().into_iter().filter(|a| is_legal(state, a, schema)).collect()
}
