//! Token-per-line slot annotation files.
//!
//! ```text
//! #! schema_version = 1.0
//! #! source = seed
//!
//! # sent_id = seed-001
//! # text = Doliprane 500 mg
//! # intent = medical_prescription
//! 1	Doliprane	B-drug
//! 2	500	B-d-dos-val
//! 3	mg	B-d-dos-up
//! ```
//!
//! Utterances are separated by blank lines. Columns are tab-separated; the
//! default layout is `idx, token, tag` and can be overridden on import.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nlu::{bio_transition_ok, split_bio, AnnotatedUtterance};

pub const CONLL_SCHEMA_VERSION: &str = "1.0";

#[derive(Debug, Error)]
pub enum ConllError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected {expected} tab-separated columns, found {found}")]
    ColumnCount { line: usize, expected: usize, found: usize },
    #[error("line {line}: tag `{tag}` cannot follow the previous tag")]
    InvalidBio { line: usize, tag: String },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("utterance `{id}`: {message}")]
    Export { id: String, message: String },
    #[error("bad column layout `{0}`")]
    Layout(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConllDocument {
    pub schema_version: String,
    pub source: String,
    pub utterances: Vec<AnnotatedUtterance>,
}

impl ConllDocument {
    pub fn new(source: impl Into<String>, utterances: Vec<AnnotatedUtterance>) -> Self {
        Self { schema_version: CONLL_SCHEMA_VERSION.into(), source: source.into(), utterances }
    }
}

/// Which column holds what. Unlisted columns are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnLayout {
    pub n_columns: usize,
    pub index: Option<usize>,
    pub token: usize,
    pub tag: usize,
}

impl Default for ColumnLayout {
    fn default() -> Self {
        Self { n_columns: 3, index: Some(0), token: 1, tag: 2 }
    }
}

impl ColumnLayout {
    /// Parses a comma list of column roles, e.g. `idx,token,_,tag`
    /// (`_` marks an ignored column).
    pub fn parse(spec: &str) -> Result<Self, ConllError> {
        let roles: Vec<&str> = spec.split(',').map(str::trim).collect();
        let find = |name: &str| roles.iter().position(|r| *r == name);
        let bad = || ConllError::Layout(spec.to_string());
        if roles.iter().any(|r| !matches!(*r, "idx" | "token" | "tag" | "_")) {
            return Err(bad());
        }
        for name in ["idx", "token", "tag"] {
            if roles.iter().filter(|r| **r == name).count() > 1 {
                return Err(bad());
            }
        }
        Ok(Self { n_columns: roles.len(), index: find("idx"), token: find("token").ok_or_else(bad)?, tag: find("tag").ok_or_else(bad)? })
    }
}

/// Tag column style on export.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TagStyle {
    #[default]
    Bio,
    /// Bare slot names; adjacent spans of the same label merge on re-import.
    Flat,
}

pub fn write_conll(doc: &ConllDocument, style: TagStyle) -> Result<String, ConllError> {
    let mut out = String::new();
    let _ = writeln!(out, "#! schema_version = {}", doc.schema_version);
    let _ = writeln!(out, "#! source = {}", doc.source);
    for u in &doc.utterances {
        let err = |message: String| ConllError::Export { id: u.utterance_id.clone(), message };
        if u.tokens.len() != u.bio_labels.len() {
            return Err(err("token and label counts differ".into()));
        }
        if u.utterance_id.contains('\n') || u.intent.contains('\n') {
            return Err(err("id and intent must be single-line".into()));
        }
        out.push('\n');
        let _ = writeln!(out, "# sent_id = {}", u.utterance_id);
        let _ = writeln!(out, "# text = {}", u.text());
        let _ = writeln!(out, "# intent = {}", u.intent);
        for (i, (t, l)) in u.tokens.iter().zip(&u.bio_labels).enumerate() {
            if t.text.is_empty() || t.text.chars().any(char::is_whitespace) {
                return Err(err(format!("token {} is empty or contains whitespace", i + 1)));
            }
            let tag = match style {
                TagStyle::Bio => l.as_str(),
                TagStyle::Flat => split_bio(l).map_or("O", |(_, name)| name),
            };
            let _ = writeln!(out, "{}\t{}\t{}", i + 1, t.text, tag);
        }
    }
    Ok(out)
}

pub fn export_conll(doc: &ConllDocument, path: impl AsRef<Path>) -> Result<(), ConllError> {
    fs::write(path, write_conll(doc, TagStyle::Bio)?)?;
    Ok(())
}

pub fn import_conll(path: impl AsRef<Path>) -> Result<ConllDocument, ConllError> {
    import_conll_with(path, &ColumnLayout::default())
}

pub fn import_conll_with(path: impl AsRef<Path>, layout: &ColumnLayout) -> Result<ConllDocument, ConllError> {
    parse_conll(&fs::read_to_string(path)?, layout)
}

#[derive(Default)]
struct Pending {
    id: Option<String>,
    intent: Option<String>,
    words: Vec<String>,
    tags: Vec<String>,
    first_line: usize,
}

/// Parses a document. Tags may be BIO or flat (`drug`, `O`); flat tags are
/// converted to BIO.
pub fn parse_conll(text: &str, layout: &ColumnLayout) -> Result<ConllDocument, ConllError> {
    let mut doc = ConllDocument::new("", Vec::new());
    let mut cur = Pending::default();
    let mut auto_id = 0usize;
    let mut flush = |cur: &mut Pending, doc: &mut ConllDocument| -> Result<(), ConllError> {
        let p = std::mem::take(cur);
        if p.words.is_empty() {
            if p.id.is_some() || p.intent.is_some() {
                return Err(ConllError::Syntax { line: p.first_line, message: "utterance has no tokens".into() });
            }
            return Ok(());
        }
        let intent = p.intent.ok_or(ConllError::Syntax {
            line: p.first_line,
            message: "missing `# intent =` line".into(),
        })?;
        auto_id += 1;
        let id = p.id.unwrap_or_else(|| format!("utt-{auto_id:05}"));
        doc.utterances.push(AnnotatedUtterance::from_words(id, &p.words, p.tags, intent));
        Ok(())
    };
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut cur, &mut doc)?;
            continue;
        }
        if cur.first_line == 0 {
            cur.first_line = line_no;
        }
        if let Some(rest) = line.strip_prefix("#!") {
            if let Some((k, v)) = rest.split_once('=') {
                match k.trim() {
                    "schema_version" => doc.schema_version = v.trim().to_string(),
                    "source" => doc.source = v.trim().to_string(),
                    _ => {}
                }
            }
            cur.first_line = 0;
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if !cur.words.is_empty() {
                return Err(ConllError::Syntax { line: line_no, message: "comment inside token block".into() });
            }
            if let Some((k, v)) = rest.split_once('=') {
                match k.trim() {
                    "sent_id" => cur.id = Some(v.trim().to_string()),
                    "intent" => cur.intent = Some(v.trim().to_string()),
                    _ => {}
                }
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != layout.n_columns {
            return Err(ConllError::ColumnCount { line: line_no, expected: layout.n_columns, found: cols.len() });
        }
        if let Some(ix) = layout.index {
            let expected = cur.words.len() + 1;
            if cols[ix].trim().parse::<usize>().ok() != Some(expected) {
                return Err(ConllError::Syntax {
                    line: line_no,
                    message: format!("token index `{}`, expected {expected}", cols[ix]),
                });
            }
        }
        let word = cols[layout.token].trim();
        if word.is_empty() || word.contains(char::is_whitespace) {
            return Err(ConllError::Syntax { line: line_no, message: "empty or spaced token".into() });
        }
        let raw_tag = cols[layout.tag].trim();
        let tag = match split_bio(raw_tag) {
            Some(_) => raw_tag.to_string(),
            None if raw_tag == "O" => raw_tag.to_string(),
            None if raw_tag.is_empty() || raw_tag.contains(char::is_whitespace) => {
                return Err(ConllError::Syntax { line: line_no, message: format!("malformed tag `{raw_tag}`") })
            }
            None => {
                let continues = cur.tags.last().and_then(|t| split_bio(t)).is_some_and(|(_, n)| n == raw_tag);
                format!("{}-{raw_tag}", if continues { 'I' } else { 'B' })
            }
        };
        if !bio_transition_ok(cur.tags.last().map(String::as_str), &tag) {
            return Err(ConllError::InvalidBio { line: line_no, tag });
        }
        cur.words.push(word.to_string());
        cur.tags.push(tag);
    }
    flush(&mut cur, &mut doc)?;
    Ok(doc)
}
