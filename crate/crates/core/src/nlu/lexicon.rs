//! Gazetteer and pattern tagger used to pre-annotate raw utterances.

use super::{encode_spans, Span, Token};
use crate::drugdb::{normalize_text, DrugDatabase};
use crate::taxonomy::values::{canonical_intake_unit, canonical_measure_unit, canonical_rhythm};
use crate::taxonomy::SlotSchema;

const ROUTE_WORDS: &[&str] = &[
    "intravenous", "intravenously", "iv", "intramuscular", "intramuscularly", "im", "subcutaneous",
    "subcutaneously", "orally", "oral", "rectally", "rectal", "nasal", "cutaneous",
];

fn is_period(w: &str) -> bool {
    matches!(w, "day" | "week" | "month" | "24h")
}

fn is_duration_unit(w: &str) -> bool {
    matches!(w, "day" | "days" | "week" | "weeks" | "month" | "months")
}

struct Tagger<'a> {
    words: Vec<&'a str>,
    numeric: Vec<bool>,
    spans: Vec<Span>,
    taken: Vec<bool>,
}

impl<'a> Tagger<'a> {
    fn put(&mut self, label: &str, start: usize, end: usize) -> bool {
        if end > self.words.len() || start >= end || self.taken[start..end].iter().any(|t| *t) {
            return false;
        }
        self.taken[start..end].iter_mut().for_each(|t| *t = true);
        self.spans.push(Span { label: label.to_string(), start, end });
        true
    }

    fn word(&self, i: usize) -> &str {
        self.words.get(i).copied().unwrap_or("")
    }

    fn is_count(&self, i: usize) -> bool {
        self.numeric.get(i).copied().unwrap_or(false)
            || matches!(self.word(i), "one" | "two" | "three" | "four" | "five" | "six" | "ten")
    }
}

/// Deterministic rule tagger: drug names from `db`, number + unit pairs,
/// frequency and duration patterns, rhythm and route words.
///
/// Labels missing from `schema` are never emitted; the output is valid BIO.
pub fn lexicon_tag(tokens: &[Token], db: &DrugDatabase, schema: &SlotSchema) -> Vec<String> {
    let mut tg = Tagger {
        words: tokens.iter().map(|t| t.normalized.as_str()).collect(),
        numeric: tokens.iter().map(|t| t.is_numeric).collect(),
        spans: Vec::new(),
        taken: vec![false; tokens.len()],
    };
    let n = tokens.len();

    let mut names: Vec<(Vec<String>, &str)> = Vec::new();
    for inn in db.inns() {
        names.push((normalize_text(&inn).split(' ').map(str::to_string).collect(), "inn"));
    }
    for brand in db.brand_names() {
        names.push((normalize_text(&brand).split(' ').map(str::to_string).collect(), "drug"));
        if let Some(first) = normalize_text(&brand).split(' ').next() {
            names.push((vec![first.to_string()], "drug"));
        }
    }
    names.sort_by(|a, b| b.0.len().cmp(&a.0.len()));
    for i in 0..n {
        for (words, label) in &names {
            let k = words.len();
            if i + k <= n && tg.words[i..i + k].iter().zip(words).all(|(a, b)| *a == b) && tg.put(label, i, i + k) {
                break;
            }
        }
    }

    for i in 0..n {
        let w = tg.word(i).to_string();
        if w == "every" {
            if tg.is_count(i + 1) && matches!(tg.word(i + 2), "hours" | "hour" | "h" | "days") {
                tg.put("frequency", i, i + 3);
            } else if is_period(tg.word(i + 1)) {
                tg.put("frequency", i, i + 2);
            }
        } else if tg.is_count(i) && matches!(tg.word(i + 1), "times" | "time")
            && matches!(tg.word(i + 2), "a" | "per" | "each")
            && is_period(tg.word(i + 3))
        {
            tg.put("frequency", i, i + 4);
        } else if matches!(w.as_str(), "once" | "twice" | "thrice") {
            if matches!(tg.word(i + 1), "a" | "per") && is_period(tg.word(i + 2)) {
                tg.put("frequency", i, i + 3);
            } else if matches!(tg.word(i + 1), "daily" | "weekly") {
                tg.put("frequency", i, i + 2);
            }
        } else if matches!(w.as_str(), "per" | "a") && is_period(tg.word(i + 1)) {
            tg.put("frequency", i, i + 2);
        } else if matches!(w.as_str(), "daily" | "weekly") {
            tg.put("frequency", i, i + 1);
        }
    }

    for i in 0..n {
        if matches!(tg.word(i), "for" | "during") && tg.is_count(i + 1) && is_duration_unit(tg.word(i + 2)) {
            tg.put("duration", i + 1, i + 3);
        }
    }

    for i in 0..n {
        if !tg.is_count(i) {
            continue;
        }
        let next = tg.word(i + 1).to_string();
        if canonical_measure_unit(&next).is_some() && tg.numeric[i] {
            if tg.put("d-dos-val", i, i + 1) {
                tg.put("d-dos-up", i + 1, i + 2);
            }
        } else if canonical_intake_unit(&next).is_some() && tg.put("dos-val", i, i + 1) {
            tg.put("dos-uf", i + 1, i + 2);
        }
    }

    for i in 0..n {
        let w = tg.word(i).to_string();
        if canonical_rhythm(&w).is_some() && !matches!(w.as_str(), "bed") {
            tg.put("rhythm", i, i + 1);
        } else if ROUTE_WORDS.contains(&w.as_str()) {
            tg.put("route", i, i + 1);
        }
    }

    let mut spans: Vec<Span> = tg.spans.into_iter().filter(|s| schema.has_label(&s.label)).collect();
    spans.sort();
    encode_spans(n, &spans)
}
