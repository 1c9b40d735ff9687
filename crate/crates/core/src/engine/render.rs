//! Template responses and the prescription summary.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drugdb::{DrugDatabase, DrugRecord};
use crate::policy::actions::*;
use crate::policy::DialogueState;
use crate::taxonomy::values::{format_number, parse_number, pluralize_unit};
use crate::taxonomy::{frame_missing_slots, PrescriptionFrame, SlotSchema};

use super::checker::Warning;

/// Optional labels listed after the posology, in this order.
const EXTRA_SLOTS: [&str; 12] = [
    "rhythm",
    "rhythm-hour",
    "meal",
    "condition",
    "min-gap",
    "max-dose-per-24h",
    "start-day",
    "day-pattern",
    "dilution",
    "body-site",
    "infusion-duration",
    "renewal",
];

#[derive(Debug, Error, PartialEq)]
pub enum SummaryError {
    #[error("missing mandatory slots: {0:?}")]
    Incomplete(Vec<String>),
    #[error("no resolved drug")]
    Unresolved,
    #[error("resolved code `{0}` is not in the database")]
    UnknownCode(String),
}

/// `N/day` as words: `per day`, `twice a day`, `3 times a day`.
pub fn frequency_text(normalized: &str) -> String {
    let Some((n, period)) = normalized.split_once('/') else {
        return normalized.to_string();
    };
    let Some(k) = parse_number(n) else {
        return normalized.to_string();
    };
    if k == 1.0 {
        format!("per {period}")
    } else if k == 2.0 {
        format!("twice a {period}")
    } else {
        format!("{} times a {period}", format_number(k))
    }
}

fn posology(frame: &PrescriptionFrame) -> String {
    let val = frame.last_normalized("dos-val").unwrap_or("");
    let uf = frame.last_normalized("dos-uf").unwrap_or("");
    let n = parse_number(val).unwrap_or(1.0);
    let freq = frame.last_normalized("frequency").map(frequency_text).unwrap_or_default();
    let mut s = format!("{val} {} {freq}", pluralize_unit(uf, n));
    if let Some(d) = frame.last_normalized("duration") {
        s.push_str(&format!(" for {d}"));
    }
    s.trim().to_string()
}

fn summary_body(frame: &PrescriptionFrame, record: &DrugRecord) -> String {
    let mut s = format!("{}, route of administration is {}, {}", record.label(), record.route, posology(frame));
    for label in EXTRA_SLOTS {
        for v in frame.values(label) {
            s.push_str(", ");
            s.push_str(&v.value);
        }
    }
    s.push('.');
    for c in &frame.comments {
        s.push_str(&format!(" Comment: {c}."));
    }
    s
}

/// Rendering of a complete, resolved frame followed by the confirmation question.
pub fn summarize(frame: &PrescriptionFrame, db: &DrugDatabase, schema: &SlotSchema) -> Result<String, SummaryError> {
    let missing = frame_missing_slots(frame, schema).map_err(|_| SummaryError::Incomplete(schema.mandatory_slots.clone()))?;
    if !missing.is_empty() {
        return Err(SummaryError::Incomplete(missing));
    }
    let code = frame.resolved_ucd.as_ref().ok_or(SummaryError::Unresolved)?;
    let record = db.by_ucd(code).ok_or_else(|| SummaryError::UnknownCode(code.clone()))?;
    Ok(format!("{} Do you confirm this prescription?", summary_body(frame, record)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub index: usize,
    pub ucd_code: String,
    pub label: String,
    pub form: String,
    pub route: String,
}

/// Structured part of a response for the client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UiPayload {
    Candidates { candidates: Vec<CandidateView> },
    Summary { summary: String, comments: Vec<String> },
    Warning { warnings: Vec<Warning>, summary: String },
}

fn request_text(slot: &str, schema: &SlotSchema) -> String {
    match slot {
        "drug" => "Which drug do you want to prescribe?".into(),
        "dos-val" | "dos-uf" => "What dose should be taken at each intake?".into(),
        "frequency" => "How many times a day should it be taken?".into(),
        "duration" => "Can you please specify a duration for this prescription?".into(),
        other => match schema.label(other).map(|d| d.description.as_str()).filter(|d| !d.is_empty()) {
            Some(d) => format!("Please specify the {d}."),
            None => format!("Please specify the {other}."),
        },
    }
}

/// Text and payload of a reply action in `state` (after the action applied).
pub fn render(action: &str, state: &DialogueState, db: &DrugDatabase, schema: &SlotSchema) -> (String, Option<UiPayload>) {
    let summary = || summarize(&state.frame, db, schema).unwrap_or_default();
    match action {
        PROPOSE_CANDIDATES => {
            let candidates = state
                .candidates
                .iter()
                .enumerate()
                .map(|(index, r)| CandidateView {
                    index,
                    ucd_code: r.ucd_code.clone(),
                    label: r.label(),
                    form: r.form.clone(),
                    route: r.route.clone(),
                })
                .collect();
            ("Several drugs match. Which one do you mean?".into(), Some(UiPayload::Candidates { candidates }))
        }
        PROPOSE_SUMMARY => {
            let s = summary();
            (s.clone(), Some(UiPayload::Summary { summary: s, comments: state.frame.comments.clone() }))
        }
        WARN_CHECKER => {
            let msgs: Vec<&str> = state.warnings.iter().map(|w| w.message.as_str()).collect();
            let text = format!("Warning: {}. Do you confirm this prescription anyway?", msgs.join("; "));
            (text, Some(UiPayload::Warning { warnings: state.warnings.clone(), summary: summary() }))
        }
        ACK_VALIDATED => ("The prescription is validated.".into(), None),
        ACK_CANCELLED => ("The prescription is cancelled.".into(), None),
        REQUEST_RESTART => {
            let text = if state.drug_checked && state.candidates.is_empty() {
                "I could not find this drug. Do you want to restart the prescription?"
            } else {
                "Do you want to restart the prescription?"
            };
            (text.into(), None)
        }
        ACK_RESTART => ("Let us start again. What do you want to prescribe?".into(), None),
        UTTER_OUT_OF_SCOPE => ("Sorry, I can only help with drug prescriptions.".into(), None),
        ACK_COMMENT => {
            let text = if state.summary_shown {
                "Your comment has been added. Do you confirm this prescription?"
            } else {
                "Your comment has been added."
            };
            (text.into(), None)
        }
        ACTION_CHECK_DRUG | ACTION_CHECK_PRESCRIPTION => ("One moment, I am checking.".into(), None),
        other => match requested_slot(other) {
            Some(slot) => (request_text(slot, schema), None),
            None => ("Sorry, I did not understand. Could you rephrase?".into(), None),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::SlotValue;

    fn ofloxacine_frame() -> PrescriptionFrame {
        let mut f = PrescriptionFrame::new();
        for (l, v, n) in [
            ("inn", "Ofloxacine", "ofloxacine"),
            ("d-dos-val", "200", "200"),
            ("d-dos-up", "mg", "mg"),
            ("dos-val", "2", "2"),
            ("dos-uf", "injections", "injection"),
            ("frequency", "per day", "1/day"),
            ("duration", "7 days", "7 days"),
        ] {
            f.add(l, SlotValue::new(v, n, 0));
        }
        f.resolved_ucd = Some("9000102".into());
        f
    }

    #[test]
    fn ofloxacine_summary() {
        let db = DrugDatabase::fixture();
        let schema = SlotSchema::builtin();
        let s = summarize(&ofloxacine_frame(), &db, &schema).unwrap();
        assert!(s.starts_with("OFLOXACINE 200 mg/40 ml"), "{s}");
        assert!(s.contains("solution for infusion, route of administration is intravenous"));
        assert!(s.contains("2 injections per day for 7 days"));
        assert!(s.ends_with("Do you confirm this prescription?"));
    }

    #[test]
    fn comments_verbatim_and_incomplete_rejected() {
        let db = DrugDatabase::fixture();
        let schema = SlotSchema::builtin();
        let mut f = ofloxacine_frame();
        f.comments.push("in a big glass of water".into());
        assert!(summarize(&f, &db, &schema).unwrap().contains("Comment: in a big glass of water."));
        f.remove("duration");
        assert_eq!(summarize(&f, &db, &schema), Err(SummaryError::Incomplete(vec!["duration".into()])));
    }

    #[test]
    fn frequency_words() {
        assert_eq!(frequency_text("1/day"), "per day");
        assert_eq!(frequency_text("2/day"), "twice a day");
        assert_eq!(frequency_text("3/week"), "3 times a week");
        assert_eq!(frequency_text("odd"), "odd");
    }
}
