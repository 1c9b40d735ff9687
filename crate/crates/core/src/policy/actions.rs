//! The system action inventory.

use serde::{Deserialize, Serialize};

pub const ACTION_CHECK_DRUG: &str = "action_check_drug";
pub const ACTION_CHECK_PRESCRIPTION: &str = "action_check_prescription";
pub const PROPOSE_CANDIDATES: &str = "propose_candidates";
pub const PROPOSE_SUMMARY: &str = "propose_summary";
pub const ACK_VALIDATED: &str = "ack_validated";
pub const ACK_CANCELLED: &str = "ack_cancelled";
pub const REQUEST_RESTART: &str = "request_restart";
pub const ACK_RESTART: &str = "ack_restart";
pub const WARN_CHECKER: &str = "warn_checker";
pub const UTTER_OUT_OF_SCOPE: &str = "utter_out_of_scope";
pub const UTTER_ASK_REPHRASE: &str = "utter_ask_rephrase";
pub const ACK_COMMENT: &str = "ack_comment";
pub const REQUEST_SLOT_PREFIX: &str = "request_slot:";

const GENERAL: [&str; 12] = [
    ACTION_CHECK_DRUG,
    ACTION_CHECK_PRESCRIPTION,
    PROPOSE_CANDIDATES,
    PROPOSE_SUMMARY,
    ACK_VALIDATED,
    ACK_CANCELLED,
    REQUEST_RESTART,
    ACK_RESTART,
    WARN_CHECKER,
    UTTER_OUT_OF_SCOPE,
    UTTER_ASK_REPHRASE,
    ACK_COMMENT,
];

/// Slots the system can ask for. Mandatory ones come first.
pub const REQUESTABLE_SLOTS: [&str; 19] = [
    "drug",
    "dos-val",
    "dos-uf",
    "frequency",
    "duration",
    "d-dos-val",
    "d-dos-up",
    "form",
    "route",
    "rhythm",
    "condition",
    "meal",
    "min-gap",
    "max-dose-per-24h",
    "start-day",
    "qsp",
    "dilution",
    "body-site",
    "infusion-duration",
];

/// All 31 action names: the general actions, then one request per slot.
pub fn action_inventory() -> Vec<String> {
    GENERAL
        .iter()
        .map(|s| s.to_string())
        .chain(REQUESTABLE_SLOTS.iter().map(|s| request_slot(s)))
        .collect()
}

pub fn request_slot(label: &str) -> String {
    format!("{REQUEST_SLOT_PREFIX}{label}")
}

/// The slot of a `request_slot:<label>` action.
pub fn requested_slot(action: &str) -> Option<&str> {
    action.strip_prefix(REQUEST_SLOT_PREFIX)
}

/// Requests for missing information, the actions of the prescription form.
pub fn is_form_action(action: &str) -> bool {
    requested_slot(action).is_some()
}

/// Actions that run a lookup and hand control back to the policy without
/// producing a reply.
pub fn is_internal(action: &str) -> bool {
    matches!(action, ACTION_CHECK_DRUG | ACTION_CHECK_PRESCRIPTION)
}

pub fn is_terminal(action: &str) -> bool {
    matches!(action, ACK_VALIDATED | ACK_CANCELLED)
}

/// Word features of an action name: `action_check_drug -> [action, check, drug]`.
pub fn action_tokens(action: &str) -> Vec<&str> {
    action.split(['_', ':']).filter(|w| !w.is_empty()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemAction {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<serde_json::Value>,
}

impl SystemAction {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), payload: None }
    }
}
