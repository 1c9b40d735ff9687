//! Dialogue sessions as JSON lines, one session per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::Side;

#[derive(Debug, Error)]
pub enum DialogueError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("session `{session}`: {message}")]
    Invalid { session: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnSlot {
    pub label: String,
    pub value: String,
    pub normalized: String,
}

/// One line of a dialogue. User turns carry the act, the NLU-style intent and
/// slots (or the button / candidate choice); system turns carry the action name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub side: Side,
    pub act: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub slots: Vec<TurnSlot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choice: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub button: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    /// Slots a negation refers to ("remove the duration").
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub refs: Vec<String>,
}

impl DialogueTurn {
    fn new(side: Side, act: String) -> Self {
        Self { side, act, text: String::new(), intent: None, slots: Vec::new(), choice: None, button: None, comment: None, refs: Vec::new() }
    }

    pub fn system(action: impl Into<String>) -> Self {
        Self::new(Side::System, action.into())
    }

    pub fn user(act: impl Into<String>) -> Self {
        Self::new(Side::User, act.into())
    }

    pub fn is_user(&self) -> bool {
        self.side == Side::User
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueRecord {
    pub session_id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub scenario: String,
    pub turns: Vec<DialogueTurn>,
    #[serde(default)]
    pub failure_flag: bool,
}

impl DialogueRecord {
    /// A session starts with a user turn, and every turn names its act.
    pub fn validate(&self) -> Result<(), DialogueError> {
        let err = |message: &str| DialogueError::Invalid { session: self.session_id.clone(), message: message.into() };
        match self.turns.first() {
            None => return Err(err("no turns")),
            Some(t) if !t.is_user() => return Err(err("first turn is not a user turn")),
            _ => {}
        }
        if self.turns.iter().any(|t| t.act.is_empty()) {
            return Err(err("turn without act"));
        }
        Ok(())
    }
}

pub fn write_dialogues<W: Write>(records: &[DialogueRecord], mut w: W) -> Result<(), DialogueError> {
    for r in records {
        r.validate()?;
        serde_json::to_writer(&mut w, r).map_err(|e| DialogueError::Invalid {
            session: r.session_id.clone(),
            message: e.to_string(),
        })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_dialogues(records: &[DialogueRecord], path: impl AsRef<Path>) -> Result<(), DialogueError> {
    write_dialogues(records, BufWriter::new(File::create(path)?))
}

/// Reads sessions; the first malformed or invalid line aborts with its number.
pub fn read_dialogues<R: Read>(r: R) -> Result<Vec<DialogueRecord>, DialogueError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DialogueRecord =
            serde_json::from_str(&line).map_err(|e| DialogueError::Line { line: i + 1, message: e.to_string() })?;
        rec.validate().map_err(|e| DialogueError::Line { line: i + 1, message: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn import_dialogues(path: impl AsRef<Path>) -> Result<Vec<DialogueRecord>, DialogueError> {
    read_dialogues(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(first_user: bool) -> DialogueRecord {
        let mut u = DialogueTurn::user("prescribe");
        u.intent = Some("medical_prescription".into());
        u.slots.push(TurnSlot { label: "drug".into(), value: "Doliprane".into(), normalized: "doliprane".into() });
        let s = DialogueTurn::system("action_check_drug");
        DialogueRecord {
            session_id: "d1".into(),
            scenario: String::new(),
            turns: if first_user { vec![u, s] } else { vec![s, u] },
            failure_flag: true,
        }
    }

    #[test]
    fn round_trip_keeps_failure_flag() {
        let mut buf = Vec::new();
        write_dialogues(&[record(true)], &mut buf).unwrap();
        let back = read_dialogues(buf.as_slice()).unwrap();
        assert_eq!(back, vec![record(true)]);
        assert!(back[0].failure_flag);
    }

    #[test]
    fn system_first_is_rejected() {
        assert!(record(false).validate().is_err());
        let line = serde_json::to_string(&record(false)).unwrap();
        let text = format!("{}\n{line}\n", serde_json::to_string(&record(true)).unwrap());
        match read_dialogues(text.as_bytes()) {
            Err(DialogueError::Line { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn garbage_line_is_located() {
        assert!(matches!(read_dialogues("{not json\n".as_bytes()), Err(DialogueError::Line { line: 1, .. })));
    }
}
