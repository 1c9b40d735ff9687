//! Utterance understanding: tokenization, BIO spans, the CRF slot tagger,
//! the intent classifier and a rule-based baseline tagger.

pub mod crf;
pub mod eval;
pub mod intent;
pub mod lexicon;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drugdb::normalize_text;
use crate::scalar::Scalar;
use crate::taxonomy::values::{normalize_slot_value, parse_number};
use crate::taxonomy::{PrescriptionFrame, SlotSchema, SlotValue, INTENT_NONE};

pub use crf::{crf_decode, crf_loglik_grad, crf_train, CrfModel, CrfTrainConfig, Gazetteer};
pub use eval::{evaluate_nlu, NluReport, Prf, SlotReport};
pub use intent::{intent_predict, intent_train, IntentModel, IntentTrainConfig};
pub use lexicon::lexicon_tag;

pub const NLU_MAGIC: &str = "RXNLU1";

#[derive(Debug, Error)]
pub enum NluError {
    #[error("empty training set")]
    EmptyDataset,
    #[error("label `{label}` of utterance `{utterance}` is not in the model label set")]
    UnknownLabel { utterance: String, label: String },
    #[error("training data covers a single intent `{0}`")]
    SingleClass(String),
    #[error("utterance `{id}`: {reason}")]
    InvalidUtterance { id: String, reason: String },
    #[error("model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file is not an NLU model (missing {NLU_MAGIC} header)")]
    BadMagic,
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    /// Character offsets into the utterance, end exclusive.
    pub start: usize,
    pub end: usize,
    pub normalized: String,
    pub is_numeric: bool,
}

#[derive(Clone, Copy, PartialEq)]
enum CharClass {
    Digit,
    Alpha,
    Symbol,
    Skip,
}

fn class_of(c: char) -> CharClass {
    if c.is_ascii_digit() {
        CharClass::Digit
    } else if c.is_alphanumeric() {
        CharClass::Alpha
    } else if matches!(c, '%' | 'µ') {
        CharClass::Symbol
    } else {
        CharClass::Skip
    }
}

/// Splits on whitespace and punctuation, and between digits and letters.
///
/// Decimal numbers (`2.5`, `0,25`) stay whole; `%` is a token of its own.
pub fn tokenize(utterance: &str) -> Vec<Token> {
    let chars: Vec<char> = utterance.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let cls = class_of(chars[i]);
        if cls == CharClass::Skip {
            i += 1;
            continue;
        }
        let start = i;
        i += 1;
        match cls {
            CharClass::Digit => {
                while i < chars.len() {
                    if chars[i].is_ascii_digit() {
                        i += 1;
                    } else if matches!(chars[i], '.' | ',')
                        && chars.get(i + 1).is_some_and(|c| c.is_ascii_digit())
                    {
                        i += 2;
                    } else {
                        break;
                    }
                }
            }
            CharClass::Alpha => {
                while i < chars.len() && class_of(chars[i]) == CharClass::Alpha {
                    i += 1;
                }
            }
            _ => {}
        }
        let text: String = chars[start..i].iter().collect();
        tokens.push(make_token(text, start, i));
    }
    tokens
}

fn make_token(text: String, start: usize, end: usize) -> Token {
    let is_numeric = text.starts_with(|c: char| c.is_ascii_digit()) && parse_number(&text).is_some();
    Token { normalized: normalize_text(&text), text, start, end, is_numeric }
}

/// Tokens for pre-split words, with offsets into the words joined by spaces.
pub fn tokens_from_words<W: AsRef<str>>(words: &[W]) -> Vec<Token> {
    let mut out = Vec::with_capacity(words.len());
    let mut pos = 0;
    for w in words {
        let w = w.as_ref();
        let n = w.chars().count();
        out.push(make_token(w.to_string(), pos, pos + n));
        pos += n + 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedUtterance {
    pub utterance_id: String,
    pub tokens: Vec<Token>,
    pub bio_labels: Vec<String>,
    pub intent: String,
}

impl AnnotatedUtterance {
    pub fn from_words<W: AsRef<str>>(
        id: impl Into<String>,
        words: &[W],
        labels: Vec<String>,
        intent: impl Into<String>,
    ) -> Self {
        Self {
            utterance_id: id.into(),
            tokens: tokens_from_words(words),
            bio_labels: labels,
            intent: intent.into(),
        }
    }

    pub fn text(&self) -> String {
        self.tokens.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ")
    }

    pub fn validate(&self, schema: &SlotSchema) -> Result<(), NluError> {
        let err = |reason: String| NluError::InvalidUtterance { id: self.utterance_id.clone(), reason };
        if self.tokens.len() != self.bio_labels.len() {
            return Err(err(format!("{} tokens but {} labels", self.tokens.len(), self.bio_labels.len())));
        }
        if let Some(i) = bio_violation(&self.bio_labels) {
            return Err(err(format!("invalid BIO transition at token {}", i + 1)));
        }
        for l in &self.bio_labels {
            if let Some((_, name)) = split_bio(l) {
                if !schema.has_label(name) {
                    return Err(err(format!("unknown slot label `{name}`")));
                }
            } else if l != "O" {
                return Err(err(format!("malformed tag `{l}`")));
            }
        }
        if !schema.has_intent(&self.intent) {
            return Err(err(format!("unknown intent `{}`", self.intent)));
        }
        Ok(())
    }

    pub fn spans(&self) -> Vec<Span> {
        decode_spans(&self.bio_labels)
    }
}

/// `("B", "drug")` for `B-drug`; `None` for `O` or malformed tags.
pub fn split_bio(tag: &str) -> Option<(char, &str)> {
    let (p, rest) = tag.split_once('-')?;
    match p {
        "B" => Some(('B', rest)),
        "I" => Some(('I', rest)),
        _ => None,
    }
}

/// Whether `next` may follow `prev` (`None` = sequence start).
pub fn bio_transition_ok(prev: Option<&str>, next: &str) -> bool {
    match split_bio(next) {
        Some(('I', x)) => match prev.and_then(split_bio) {
            Some((_, y)) => x == y,
            None => false,
        },
        _ => true,
    }
}

/// Index of the first tag that breaks the BIO rules.
pub fn bio_violation<T: AsRef<str>>(labels: &[T]) -> Option<usize> {
    let mut prev: Option<&str> = None;
    for (i, l) in labels.iter().enumerate() {
        if !bio_transition_ok(prev, l.as_ref()) {
            return Some(i);
        }
        prev = Some(l.as_ref());
    }
    None
}

pub fn is_valid_bio<T: AsRef<str>>(labels: &[T]) -> bool {
    bio_violation(labels).is_none()
}

/// A labelled token range, end exclusive.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

/// Spans of a BIO sequence. A stray `I-x` opens a new span.
pub fn decode_spans<T: AsRef<str>>(labels: &[T]) -> Vec<Span> {
    let mut spans: Vec<Span> = Vec::new();
    let mut open = false;
    for (i, l) in labels.iter().enumerate() {
        match split_bio(l.as_ref()) {
            Some(('I', x)) if open && spans.last().is_some_and(|s| s.label == x && s.end == i) => {
                spans.last_mut().unwrap().end = i + 1;
            }
            Some((_, x)) => {
                spans.push(Span { label: x.to_string(), start: i, end: i + 1 });
                open = true;
            }
            None => open = false,
        }
    }
    spans
}

/// BIO tags for spans over `n` tokens.
pub fn encode_spans(n: usize, spans: &[Span]) -> Vec<String> {
    let mut out = vec!["O".to_string(); n];
    for s in spans {
        for (k, slot) in out.iter_mut().enumerate().take(s.end).skip(s.start) {
            *slot = format!("{}-{}", if k == s.start { 'B' } else { 'I' }, s.label);
        }
    }
    out
}

/// Frame fragment holding the decoded spans, with surface text taken from
/// the original utterance.
pub fn spans_to_frame(utterance: &str, tokens: &[Token], spans: &[Span], turn: usize) -> PrescriptionFrame {
    let chars: Vec<char> = utterance.chars().collect();
    let mut frame = PrescriptionFrame::new();
    for s in spans {
        let (a, b) = (tokens[s.start].start, tokens[s.end - 1].end);
        let surface: String = if b <= chars.len() {
            chars[a..b].iter().collect()
        } else {
            tokens[s.start..s.end].iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ")
        };
        let normalized = normalize_slot_value(&s.label, &surface);
        frame.add(&s.label, SlotValue::new(surface, normalized, turn));
    }
    frame
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NluResult {
    pub intent: String,
    pub intent_confidence: f64,
    pub tokens: Vec<Token>,
    pub bio_labels: Vec<String>,
    pub frame_delta: PrescriptionFrame,
}

/// The trained slot tagger and intent classifier, stored together.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct NluModel<S: Scalar> {
    pub crf: CrfModel<S>,
    pub intent: IntentModel<S>,
}

impl<S: Scalar> NluModel<S> {
    pub fn to_text(&self) -> Result<String, NluError> {
        Ok(format!("{NLU_MAGIC}\n{}", serde_json::to_string(self)?))
    }

    pub fn from_text(text: &str) -> Result<Self, NluError> {
        let body = text.strip_prefix(NLU_MAGIC).ok_or(NluError::BadMagic)?;
        Ok(serde_json::from_str(body.trim_start())?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NluError> {
        fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NluError> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    pub fn parse(&self, schema: &SlotSchema, utterance: &str) -> NluResult {
        nlu_parse(&self.crf, &self.intent, schema, utterance)
    }
}

/// Tokenize, tag, decode spans into a frame fragment and classify the intent.
///
/// Spans whose label is not in `schema` are dropped. An utterance without
/// tokens yields intent `none` and an empty fragment.
pub fn nlu_parse<S: Scalar>(
    crf: &CrfModel<S>,
    intent: &IntentModel<S>,
    schema: &SlotSchema,
    utterance: &str,
) -> NluResult {
    let tokens = tokenize(utterance);
    if tokens.is_empty() {
        return NluResult {
            intent: INTENT_NONE.to_string(),
            intent_confidence: 1.0,
            tokens,
            bio_labels: Vec::new(),
            frame_delta: PrescriptionFrame::new(),
        };
    }
    let (labels, _) = crf_decode(crf, &tokens);
    let spans: Vec<Span> = decode_spans(&labels).into_iter().filter(|s| schema.has_label(&s.label)).collect();
    let frame_delta = spans_to_frame(utterance, &tokens, &spans, 0);
    let (name, confidence) = intent_predict(intent, &tokens);
    NluResult { intent: name, intent_confidence: confidence, tokens, bio_labels: labels, frame_delta }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NluTrainConfig {
    #[serde(default)]
    pub crf: CrfTrainConfig,
    #[serde(default)]
    pub intent: IntentTrainConfig,
}

/// Trains the tagger (over every BIO tag of `schema`) and the intent
/// classifier. Returns the model and the tagger's per-epoch loss.
pub fn train_nlu(
    train: &[AnnotatedUtterance],
    db: &crate::drugdb::DrugDatabase,
    schema: &SlotSchema,
    cfg: &NluTrainConfig,
) -> Result<(NluModel<f64>, Vec<f64>), NluError> {
    for u in train {
        u.validate(schema)?;
    }
    let (crf, losses) = crf_train(train, &schema.bio_tags(), Gazetteer::from_db(db), &cfg.crf)?;
    let intent = intent_train(train, &cfg.intent)?;
    Ok((NluModel { crf, intent }, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(ts: &[Token]) -> Vec<&str> {
        ts.iter().map(|t| t.text.as_str()).collect()
    }

    #[test]
    fn tokenizer_cases() {
        assert_eq!(texts(&tokenize("ofloxacine 200 mg")), ["ofloxacine", "200", "mg"]);
        assert_eq!(texts(&tokenize("200mg")), ["200", "mg"]);
        assert!(tokenize("").is_empty());
        assert_eq!(texts(&tokenize("Exocine 0,3% , 2.5ml/day")), ["Exocine", "0,3", "%", "2.5", "ml", "day"]);
        let t = tokenize("Célluvisc® x");
        assert_eq!(t[0].text, "Célluvisc");
        assert_eq!(t[0].normalized, "celluvisc");
        assert_eq!((t[1].start, t[1].end), (11, 12));
        assert!(tokenize("200mg")[0].is_numeric);
    }

    #[test]
    fn bio_rules() {
        assert!(is_valid_bio(&["B-drug", "I-drug", "O", "B-duration"]));
        assert_eq!(bio_violation(&["O", "I-drug"]), Some(1));
        assert_eq!(bio_violation(&["I-drug"]), Some(0));
        assert_eq!(bio_violation(&["B-inn", "I-drug"]), Some(1));
    }

    #[test]
    fn spans_round_trip_and_frame() {
        let labels = ["B-inn", "B-d-dos-val", "B-d-dos-up", "O", "B-duration", "I-duration"];
        let spans = decode_spans(&labels);
        assert_eq!(spans.len(), 4);
        assert_eq!(encode_spans(6, &spans), labels);
        let text = "Ofloxacine 200 mg for 7 days";
        let f = spans_to_frame(text, &tokenize(text), &spans, 2);
        assert_eq!(f.last_normalized("duration"), Some("7 days"));
        assert_eq!(f.last("inn").unwrap().value, "Ofloxacine");
        assert_eq!(f.last("d-dos-val").unwrap().turn, 2);
    }

    proptest! {
        #[test]
        fn tokens_are_ordered_and_lossless(s in "\\PC{0,40}") {
            let chars: Vec<char> = s.chars().collect();
            let toks = tokenize(&s);
            let mut prev_end = 0;
            for t in &toks {
                prop_assert!(t.start < t.end && t.end <= chars.len());
                prop_assert!(t.start >= prev_end);
                prop_assert_eq!(chars[t.start..t.end].iter().collect::<String>(), t.text.clone());
                prev_end = t.end;
            }
        }

        #[test]
        fn encode_decode_spans(tags in proptest::collection::vec(0usize..5, 0..12)) {
            let names = ["O", "B-drug", "I-drug", "B-duration", "I-duration"];
            let mut labels: Vec<String> = Vec::new();
            for t in tags {
                let cand = names[t];
                let ok = bio_transition_ok(labels.last().map(String::as_str), cand);
                labels.push(if ok { cand.to_string() } else { "O".to_string() });
            }
            let spans = decode_spans(&labels);
            prop_assert_eq!(encode_spans(labels.len(), &spans), labels);
        }
    }
}
