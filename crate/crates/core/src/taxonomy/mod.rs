//! Prescription semantics: slot labels, intents, dialogue acts and the
//! prescription frame filled during a session.

pub mod values;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Schema shipped with the repository (`data/schema.json`).
pub const DEFAULT_SCHEMA_JSON: &str = include_str!("../../../../data/schema.json");

pub const INTENT_PRESCRIPTION: &str = "medical_prescription";
pub const INTENT_CONFIRM: &str = "confirm";
pub const INTENT_NEGATE: &str = "negate";
pub const INTENT_CORRECT: &str = "correct";
pub const INTENT_NONE: &str = "none";

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("io error reading schema: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("schema declares no slot labels")]
    NoLabels,
    #[error("slot label name is empty")]
    EmptyLabel,
    #[error("duplicate slot label `{0}`")]
    DuplicateLabel(String),
    #[error("mandatory slot `{0}` is not a defined label")]
    MandatoryNotDefined(String),
    #[error("label `{0}` is closed-vocabulary but has no value domain")]
    EmptyDomain(String),
    #[error("numeric label `{label}` has a non-numeric domain value `{value}`")]
    NonNumericDomain { label: String, value: String },
    #[error("label `{label}` refers to undefined label `{other}`")]
    UndefinedAlternative { label: String, other: String },
    #[error("schema declares no intents")]
    NoIntents,
    #[error("unknown slot `{0}`")]
    UnknownSlot(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    Numeric,
    ClosedVocabulary,
    FreeText,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotLabelDef {
    pub name: String,
    pub kind: SlotKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_domain: Option<Vec<String>>,
    #[serde(default)]
    pub unit_like: bool,
    /// Other labels whose presence also fills this one when it is mandatory
    /// (an INN identifies the drug as well as a brand name does).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub satisfied_by: Vec<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
}

/// Immutable slot schema. Cheap to share behind an `Arc`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotSchema {
    pub version: String,
    pub labels: Vec<SlotLabelDef>,
    pub intents: Vec<String>,
    pub mandatory_slots: Vec<String>,
}

impl SlotSchema {
    /// Parses and validates a schema document.
    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        let schema: SlotSchema = serde_json::from_str(text).map_err(|e| SchemaError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_SCHEMA_JSON).expect("shipped schema is valid")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SchemaError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.labels.is_empty() {
            return Err(SchemaError::NoLabels);
        }
        if self.intents.is_empty() {
            return Err(SchemaError::NoIntents);
        }
        let mut seen = HashSet::new();
        for label in &self.labels {
            if label.name.trim().is_empty() {
                return Err(SchemaError::EmptyLabel);
            }
            if !seen.insert(label.name.as_str()) {
                return Err(SchemaError::DuplicateLabel(label.name.clone()));
            }
            let domain = label.value_domain.as_deref().unwrap_or(&[]);
            if label.kind == SlotKind::ClosedVocabulary && domain.is_empty() {
                return Err(SchemaError::EmptyDomain(label.name.clone()));
            }
            if label.kind == SlotKind::Numeric {
                if let Some(bad) = domain
                    .iter()
                    .find(|v| !values::parse_number(v).is_some_and(|x| x >= 0.0))
                {
                    return Err(SchemaError::NonNumericDomain {
                        label: label.name.clone(),
                        value: bad.clone(),
                    });
                }
            }
        }
        for label in &self.labels {
            if let Some(other) = label.satisfied_by.iter().find(|o| !seen.contains(o.as_str())) {
                return Err(SchemaError::UndefinedAlternative {
                    label: label.name.clone(),
                    other: other.clone(),
                });
            }
        }
        if let Some(m) = self.mandatory_slots.iter().find(|m| !seen.contains(m.as_str())) {
            return Err(SchemaError::MandatoryNotDefined(m.clone()));
        }
        Ok(())
    }

    pub fn label(&self, name: &str) -> Option<&SlotLabelDef> {
        self.labels.iter().find(|l| l.name == name)
    }

    pub fn has_label(&self, name: &str) -> bool {
        self.label(name).is_some()
    }

    pub fn has_intent(&self, name: &str) -> bool {
        self.intents.iter().any(|i| i == name)
    }

    pub fn label_names(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(|l| l.name.as_str())
    }

    pub fn is_mandatory(&self, name: &str) -> bool {
        self.mandatory_slots.iter().any(|m| m == name)
    }

    /// Full BIO tag set: `O` first, then `B-x`, `I-x` per label in declaration order.
    pub fn bio_tags(&self) -> Vec<String> {
        let mut tags = vec!["O".to_string()];
        for l in &self.labels {
            tags.push(format!("B-{}", l.name));
            tags.push(format!("I-{}", l.name));
        }
        tags
    }
}

pub fn load_schema(path: impl AsRef<Path>) -> Result<SlotSchema, SchemaError> {
    let text = fs::read_to_string(path)?;
    SlotSchema::from_json(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    User,
    System,
}

/// A dialogue act of the prescription domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueAct {
    pub name: String,
    pub side: Side,
    pub payload_slots: Vec<String>,
}

impl DialogueAct {
    /// The thirteen acts used by the engine and the scenario templates.
    ///
    /// Reconstructed inventory: user acts cover prescribing, answering,
    /// confirming, negating, correcting, choosing, commenting, restarting and
    /// off-topic talk; system acts cover requests, candidate lists, summaries
    /// and warnings.
    pub fn inventory() -> Vec<DialogueAct> {
        let user = |name: &str, slots: &[&str]| DialogueAct {
            name: name.to_string(),
            side: Side::User,
            payload_slots: slots.iter().map(|s| s.to_string()).collect(),
        };
        let system = |name: &str| DialogueAct {
            name: name.to_string(),
            side: Side::System,
            payload_slots: Vec::new(),
        };
        vec![
            user("prescribe", &["drug", "inn", "d-dos-val", "d-dos-up", "dos-val", "dos-uf", "frequency", "duration"]),
            user("inform", &["dos-val", "dos-uf", "frequency", "duration", "rhythm"]),
            user("confirm", &[]),
            user("negate", &[]),
            user("correct", &["d-dos-val", "dos-val", "frequency", "duration"]),
            user("choose", &[]),
            user("comment", &[]),
            user("restart", &[]),
            user("out_of_domain", &[]),
            system("request"),
            system("propose_candidates"),
            system("propose_summary"),
            system("warn"),
        ]
    }
}

/// One value of a slot, with the turn it was captured in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotValue {
    pub value: String,
    pub normalized: String,
    pub turn: usize,
}

impl SlotValue {
    pub fn new(value: impl Into<String>, normalized: impl Into<String>, turn: usize) -> Self {
        Self { value: value.into(), normalized: normalized.into(), turn }
    }
}

/// The structured prescription under construction.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrescriptionFrame {
    pub slots: BTreeMap<String, Vec<SlotValue>>,
    pub resolved_ucd: Option<String>,
    pub confirmed: bool,
    pub comments: Vec<String>,
}

impl PrescriptionFrame {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.values().all(|v| v.is_empty())
    }

    pub fn add(&mut self, label: &str, value: SlotValue) {
        self.slots.entry(label.to_string()).or_default().push(value);
    }

    /// Replaces the most recently filled value of `label`, or adds it.
    pub fn replace_last(&mut self, label: &str, value: SlotValue) {
        let values = self.slots.entry(label.to_string()).or_default();
        match values.last_mut() {
            Some(last) => *last = value,
            None => values.push(value),
        }
    }

    pub fn remove(&mut self, label: &str) -> Vec<SlotValue> {
        self.slots.remove(label).unwrap_or_default()
    }

    pub fn is_filled(&self, label: &str) -> bool {
        self.slots.get(label).is_some_and(|v| !v.is_empty())
    }

    pub fn values(&self, label: &str) -> &[SlotValue] {
        self.slots.get(label).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn last(&self, label: &str) -> Option<&SlotValue> {
        self.values(label).last()
    }

    pub fn last_normalized(&self, label: &str) -> Option<&str> {
        self.last(label).map(|v| v.normalized.as_str())
    }

    pub fn filled_labels(&self) -> impl Iterator<Item = &str> {
        self.slots.iter().filter(|(_, v)| !v.is_empty()).map(|(k, _)| k.as_str())
    }

    pub fn check_keys(&self, schema: &SlotSchema) -> Result<(), SchemaError> {
        match self.slots.keys().find(|k| !schema.has_label(k)) {
            Some(k) => Err(SchemaError::UnknownSlot(k.clone())),
            None => Ok(()),
        }
    }

    /// Marks the frame confirmed if it is resolved and complete.
    pub fn confirm(&mut self, schema: &SlotSchema) -> Result<(), FrameError> {
        let missing = frame_missing_slots(self, schema)?;
        if !missing.is_empty() {
            return Err(FrameError::Incomplete(missing));
        }
        if self.resolved_ucd.is_none() {
            return Err(FrameError::Unresolved);
        }
        self.confirmed = true;
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FrameError {
    #[error("unknown slot `{0}`")]
    UnknownSlot(String),
    #[error("missing mandatory slots: {0:?}")]
    Incomplete(Vec<String>),
    #[error("no drug code resolved")]
    Unresolved,
}

impl From<SchemaError> for FrameError {
    fn from(e: SchemaError) -> Self {
        match e {
            SchemaError::UnknownSlot(s) => FrameError::UnknownSlot(s),
            other => FrameError::UnknownSlot(other.to_string()),
        }
    }
}

/// Mandatory slots not yet filled, in schema declaration order.
pub fn frame_missing_slots(
    frame: &PrescriptionFrame,
    schema: &SlotSchema,
) -> Result<Vec<String>, SchemaError> {
    frame.check_keys(schema)?;
    Ok(schema
        .labels
        .iter()
        .filter(|l| schema.is_mandatory(&l.name))
        .filter(|l| {
            !frame.is_filled(&l.name) && !l.satisfied_by.iter().any(|alt| frame.is_filled(alt))
        })
        .map(|l| l.name.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy_schema() -> SlotSchema {
        let label = |n: &str| SlotLabelDef {
            name: n.into(),
            kind: SlotKind::FreeText,
            value_domain: None,
            unit_like: false,
            satisfied_by: vec![],
            description: String::new(),
        };
        SlotSchema {
            version: "t".into(),
            labels: ["drug", "dose", "frequency", "duration", "route"].iter().map(|n| label(n)).collect(),
            intents: vec!["medical_prescription".into(), "none".into()],
            mandatory_slots: vec!["drug".into(), "dose".into(), "frequency".into(), "duration".into()],
        }
    }

    fn v(s: &str) -> SlotValue {
        SlotValue::new(s, s, 0)
    }

    #[test]
    fn builtin_schema_has_the_reference_labels() {
        let s = SlotSchema::builtin();
        assert!(s.labels.len() >= 39);
        assert_eq!(s.intents.len(), 5);
        for l in ["d-dos-val", "d-dos-up", "dos-val", "dos-uf", "inn"] {
            assert!(s.has_label(l), "{l}");
        }
        assert_eq!(s.bio_tags().len(), 1 + 2 * s.labels.len());
    }

    #[test]
    fn empty_label_list_rejected() {
        let doc = r#"{"version":"1","labels":[],"intents":["none"],"mandatory_slots":[]}"#;
        assert!(matches!(SlotSchema::from_json(doc), Err(SchemaError::NoLabels)));
    }

    #[test]
    fn undefined_mandatory_rejected() {
        let doc = r#"{"version":"1","labels":[{"name":"drug","kind":"free_text"}],
            "intents":["none"],"mandatory_slots":["duration"]}"#;
        match SlotSchema::from_json(doc) {
            Err(SchemaError::MandatoryNotDefined(s)) => assert_eq!(s, "duration"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_and_parse_errors() {
        let doc = r#"{"version":"1","labels":[{"name":"a","kind":"free_text"},{"name":"a","kind":"numeric"}],
            "intents":["none"],"mandatory_slots":[]}"#;
        assert!(matches!(SlotSchema::from_json(doc), Err(SchemaError::DuplicateLabel(_))));
        let broken = "{\n\"version\": \"1\",\n\"labels\": [ oops ]\n}";
        match SlotSchema::from_json(broken) {
            Err(SchemaError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let closed = r#"{"version":"1","labels":[{"name":"a","kind":"closed_vocabulary"}],
            "intents":["none"],"mandatory_slots":[]}"#;
        assert!(matches!(SlotSchema::from_json(closed), Err(SchemaError::EmptyDomain(_))));
    }

    #[test]
    fn schema_round_trips_through_file() {
        let s = SlotSchema::builtin();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("schema.json");
        s.save(&path).unwrap();
        assert_eq!(load_schema(&path).unwrap(), s);
    }

    #[test]
    fn missing_slots_in_declaration_order() {
        let schema = toy_schema();
        let mut frame = PrescriptionFrame::new();
        assert_eq!(
            frame_missing_slots(&frame, &schema).unwrap(),
            vec!["drug", "dose", "frequency", "duration"]
        );
        frame.add("drug", v("ofloxacine"));
        frame.resolved_ucd = Some("9000001".into());
        frame.add("dose", v("200 mg"));
        frame.add("frequency", v("2/day"));
        assert_eq!(frame_missing_slots(&frame, &schema).unwrap(), vec!["duration"]);
        frame.add("duration", v("7 days"));
        assert!(frame_missing_slots(&frame, &schema).unwrap().is_empty());
        frame.add("bogus", v("x"));
        assert!(matches!(frame_missing_slots(&frame, &schema), Err(SchemaError::UnknownSlot(_))));
    }

    #[test]
    fn inn_satisfies_drug_in_builtin_schema() {
        let schema = SlotSchema::builtin();
        let mut frame = PrescriptionFrame::new();
        frame.add("inn", v("ofloxacine"));
        let missing = frame_missing_slots(&frame, &schema).unwrap();
        assert_eq!(missing, vec!["dos-val", "dos-uf", "frequency", "duration"]);
    }

    #[test]
    fn confirm_requires_completion() {
        let schema = toy_schema();
        let mut frame = PrescriptionFrame::new();
        frame.add("drug", v("x"));
        assert!(matches!(frame.confirm(&schema), Err(FrameError::Incomplete(_))));
        for l in ["dose", "frequency", "duration"] {
            frame.add(l, v("1"));
        }
        assert_eq!(frame.confirm(&schema), Err(FrameError::Unresolved));
        frame.resolved_ucd = Some("1".into());
        frame.confirm(&schema).unwrap();
        assert!(frame.confirmed);
    }

    #[test]
    fn act_names_map_to_one_side() {
        let acts = DialogueAct::inventory();
        assert_eq!(acts.len(), 13);
        let names: HashSet<_> = acts.iter().map(|a| a.name.as_str()).collect();
        assert_eq!(names.len(), acts.len());
    }

    proptest! {
        #[test]
        fn adding_values_never_grows_missing(ops in proptest::collection::vec(0usize..5, 0..12)) {
            let schema = toy_schema();
            let names = ["drug", "dose", "frequency", "duration", "route"];
            let mut frame = PrescriptionFrame::new();
            let mut prev = frame_missing_slots(&frame, &schema).unwrap();
            for i in ops {
                frame.add(names[i], v("x"));
                let next = frame_missing_slots(&frame, &schema).unwrap();
                prop_assert!(next.len() <= prev.len());
                prop_assert!(next.iter().all(|n| prev.contains(n)));
                prev = next;
            }
            if frame.confirm(&schema).is_ok() {
                prop_assert!(frame_missing_slots(&frame, &schema).unwrap().is_empty());
            }
        }
    }
}
