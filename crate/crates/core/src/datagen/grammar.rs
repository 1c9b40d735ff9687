//! Feature-based context-free grammar with slot-annotated terminals.
//!
//! See `docs/grammar.md` for the file format.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drugdb::{normalize_text, DrugDatabase, DrugRecord};
use crate::nlu::{tokenize, AnnotatedUtterance, Token};
use crate::taxonomy::values::{canonical_intake_unit, format_number, parse_number, pluralize_unit};
use crate::taxonomy::{SlotSchema, INTENT_PRESCRIPTION};

pub const DEFAULT_MAX_DEPTH: usize = 12;

/// Shipped prescription grammar (`data/grammar.cfg`).
pub const DEFAULT_GRAMMAR: &str = include_str!("../../../../data/grammar.cfg");

#[derive(Debug, Error, PartialEq)]
pub enum GrammarError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("undefined nonterminal `{0}`")]
    Undefined(String),
    #[error("start symbol `{0}` is not defined")]
    UnreachableStart(String),
    #[error("nonterminal `{0}` has no finite derivation")]
    Unproductive(String),
    #[error("`{symbol}` needs depth {needed}, limit is {limit}")]
    DepthExceeded { symbol: String, needed: usize, limit: usize },
    #[error("unknown slot label `{label}` in rule for `{symbol}`")]
    UnknownLabel { symbol: String, label: String },
    #[error("no start symbols")]
    NoStart,
    #[error("database has no records to fill placeholders")]
    EmptyDatabase,
    #[error("grammar file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    High,
    Intermediate,
    Terminal,
}

/// A value placeholder bound to the sampled drug record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Placeholder {
    Brand,
    Inn,
    DoseValue,
    DoseUnit,
    Form,
    Route,
    IntakeUnit,
    Int(i64, i64),
}

impl Placeholder {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "brand" => Placeholder::Brand,
            "inn" => Placeholder::Inn,
            "dose_value" => Placeholder::DoseValue,
            "dose_unit" => Placeholder::DoseUnit,
            "form" => Placeholder::Form,
            "route" => Placeholder::Route,
            "intake_unit" => Placeholder::IntakeUnit,
            _ => {
                let rest = s.strip_prefix("int:")?;
                let (a, b) = rest.split_once(':')?;
                let (a, b) = (a.parse().ok()?, b.parse().ok()?);
                if a > b {
                    return None;
                }
                Placeholder::Int(a, b)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Piece {
    Word(String),
    Slot(Placeholder),
}

/// Keyword (literal words and placeholders), slot label and slot value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminalTriplet {
    pub keyword: Vec<Piece>,
    /// `"O"` for unlabelled words.
    pub slot_label: String,
    /// Normalized value, if fixed in the grammar.
    pub slot_value: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Symbol {
    N(String),
    T(TerminalTriplet),
}

/// `(feature, rule)`; the only rule understood is `number`: intake units
/// agree in number with the count emitted before them.
pub type FeatureConstraint = (String, String);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Grammar {
    pub rules: BTreeMap<String, Vec<Vec<Symbol>>>,
    pub tiers: BTreeMap<String, Tier>,
    pub start_symbols: Vec<String>,
    pub start_intents: BTreeMap<String, String>,
    pub feature_constraints: Vec<FeatureConstraint>,
    pub max_depth: usize,
    /// Minimum derivation depth per nonterminal.
    #[serde(skip)]
    min_depth: HashMap<String, usize>,
    /// Slot labels each nonterminal can emit.
    #[serde(skip)]
    reach: HashMap<String, BTreeSet<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierCount {
    pub nonterminals: usize,
    pub productions: usize,
}

fn is_nonterminal_name(s: &str) -> bool {
    s.chars().next().is_some_and(|c| c.is_ascii_uppercase())
        && s.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}

/// Splits a rule body on whitespace, keeping quoted runs together.
fn split_items(body: &str, line: usize) -> Result<Vec<String>, GrammarError> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    for c in body.chars() {
        match c {
            '"' => {
                quoted = !quoted;
                cur.push(c);
            }
            c if c.is_whitespace() && !quoted => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if quoted {
        return Err(GrammarError::Syntax { line, message: "unterminated quote".into() });
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    Ok(out)
}

fn parse_terminal(item: &str, line: usize) -> Result<TerminalTriplet, GrammarError> {
    let err = |m: &str| GrammarError::Syntax { line, message: format!("{m} in `{item}`") };
    let (text, rest) = if let Some(stripped) = item.strip_prefix('"') {
        let end = stripped.find('"').ok_or_else(|| err("unterminated quote"))?;
        (&stripped[..end], &stripped[end + 1..])
    } else {
        match item.find('@') {
            Some(i) => (&item[..i], &item[i..]),
            None => (item, ""),
        }
    };
    let (label, value) = if rest.is_empty() {
        ("O".to_string(), None)
    } else {
        let r = rest.strip_prefix('@').ok_or_else(|| err("expected `@label`"))?;
        match r.split_once('=') {
            Some((l, v)) => (l.to_string(), Some(v.trim_matches('"').to_string())),
            None => (r.to_string(), None),
        }
    };
    if label.is_empty() || text.trim().is_empty() {
        return Err(err("empty terminal"));
    }
    let mut keyword = Vec::new();
    for w in text.split_whitespace() {
        if let Some(p) = w.strip_prefix('$') {
            keyword.push(Piece::Slot(Placeholder::parse(p).ok_or_else(|| err("unknown placeholder"))?));
        } else {
            keyword.push(Piece::Word(w.to_string()));
        }
    }
    Ok(TerminalTriplet { keyword, slot_label: label, slot_value: value })
}

impl Grammar {
    pub fn parse(text: &str) -> Result<Self, GrammarError> {
        let mut g = Grammar {
            rules: BTreeMap::new(),
            tiers: BTreeMap::new(),
            start_symbols: Vec::new(),
            start_intents: BTreeMap::new(),
            feature_constraints: Vec::new(),
            max_depth: DEFAULT_MAX_DEPTH,
            min_depth: HashMap::new(),
            reach: HashMap::new(),
        };
        let mut tier = Tier::Intermediate;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let l = raw.split(" #").next().unwrap_or("").trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let syntax = |m: String| GrammarError::Syntax { line, message: m };
            if let Some(d) = l.strip_prefix('%') {
                let parts: Vec<&str> = d.split_whitespace().collect();
                match parts.as_slice() {
                    ["start", sym] => {
                        g.start_symbols.push(sym.to_string());
                        g.start_intents.insert(sym.to_string(), INTENT_PRESCRIPTION.to_string());
                    }
                    ["start", sym, intent] => {
                        g.start_symbols.push(sym.to_string());
                        g.start_intents.insert(sym.to_string(), intent.to_string());
                    }
                    ["agree", feat] => g.feature_constraints.push((feat.to_string(), "agree".to_string())),
                    ["depth", n] => {
                        g.max_depth = n.parse().map_err(|_| syntax(format!("bad depth `{n}`")))?;
                    }
                    _ => return Err(syntax(format!("unknown directive `%{d}`"))),
                }
                continue;
            }
            if l.starts_with('[') {
                tier = match l {
                    "[high]" => Tier::High,
                    "[intermediate]" => Tier::Intermediate,
                    "[terminal]" => Tier::Terminal,
                    _ => return Err(syntax(format!("unknown section `{l}`"))),
                };
                continue;
            }
            let (lhs, body) = l.split_once("->").ok_or_else(|| syntax("expected `NT -> ...`".into()))?;
            let lhs = lhs.trim();
            if !is_nonterminal_name(lhs) {
                return Err(syntax(format!("`{lhs}` is not a nonterminal name")));
            }
            if let Some(t) = g.tiers.get(lhs) {
                if *t != tier {
                    return Err(syntax(format!("`{lhs}` defined in two tiers")));
                }
            }
            g.tiers.insert(lhs.to_string(), tier);
            for alt in body.split('|') {
                let items = split_items(alt, line)?;
                if items.is_empty() {
                    return Err(syntax(format!("empty alternative for `{lhs}`")));
                }
                let mut prod = Vec::new();
                for it in items {
                    if is_nonterminal_name(&it) {
                        if tier == Tier::Terminal {
                            return Err(syntax(format!("terminal rule `{lhs}` references `{it}`")));
                        }
                        prod.push(Symbol::N(it));
                    } else {
                        prod.push(Symbol::T(parse_terminal(&it, line)?));
                    }
                }
                g.rules.entry(lhs.to_string()).or_default().push(prod);
            }
        }
        g.finish()?;
        Ok(g)
    }

    fn finish(&mut self) -> Result<(), GrammarError> {
        if self.start_symbols.is_empty() {
            return Err(GrammarError::NoStart);
        }
        for prods in self.rules.values() {
            for p in prods {
                for s in p {
                    if let Symbol::N(n) = s {
                        if !self.rules.contains_key(n) {
                            return Err(GrammarError::Undefined(n.clone()));
                        }
                    }
                }
            }
        }
        for s in &self.start_symbols {
            if !self.rules.contains_key(s) {
                return Err(GrammarError::UnreachableStart(s.clone()));
            }
        }
        // Depth probe: least fixed point of the minimum derivation depth.
        let mut depth: HashMap<String, usize> = HashMap::new();
        loop {
            let mut changed = false;
            for (nt, prods) in &self.rules {
                let best = prods
                    .iter()
                    .filter_map(|p| {
                        p.iter()
                            .map(|s| match s {
                                Symbol::T(_) => Some(0),
                                Symbol::N(n) => depth.get(n).copied(),
                            })
                            .try_fold(0usize, |acc, d| d.map(|d| acc.max(d)))
                            .map(|d| d + 1)
                    })
                    .min();
                if let Some(b) = best {
                    if depth.get(nt).is_none_or(|&d| b < d) {
                        depth.insert(nt.clone(), b);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if let Some(nt) = self.rules.keys().find(|n| !depth.contains_key(*n)) {
            return Err(GrammarError::Unproductive(nt.clone()));
        }
        for s in &self.start_symbols {
            if depth[s] > self.max_depth {
                return Err(GrammarError::DepthExceeded { symbol: s.clone(), needed: depth[s], limit: self.max_depth });
            }
        }
        self.min_depth = depth;

        let mut reach: HashMap<String, BTreeSet<String>> =
            self.rules.keys().map(|k| (k.clone(), BTreeSet::new())).collect();
        loop {
            let mut changed = false;
            for (nt, prods) in &self.rules {
                let mut acc = reach[nt].clone();
                for p in prods {
                    for s in p {
                        match s {
                            Symbol::T(t) if t.slot_label != "O" => {
                                acc.insert(t.slot_label.clone());
                            }
                            Symbol::N(n) => acc.extend(reach[n].iter().cloned()),
                            _ => {}
                        }
                    }
                }
                if acc.len() != reach[nt].len() {
                    reach.insert(nt.clone(), acc);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        self.reach = reach;
        Ok(())
    }

    /// Every terminal label must be a schema label or `O`.
    pub fn validate_labels(&self, schema: &SlotSchema) -> Result<(), GrammarError> {
        for (nt, prods) in &self.rules {
            for s in prods.iter().flatten() {
                if let Symbol::T(t) = s {
                    if t.slot_label != "O" && !schema.has_label(&t.slot_label) {
                        return Err(GrammarError::UnknownLabel { symbol: nt.clone(), label: t.slot_label.clone() });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn tier_counts(&self) -> BTreeMap<Tier, TierCount> {
        let mut out: BTreeMap<Tier, TierCount> = BTreeMap::new();
        for (nt, prods) in &self.rules {
            let c = out.entry(self.tiers[nt]).or_default();
            c.nonterminals += 1;
            c.productions += prods.len();
        }
        out
    }

    pub fn min_depth(&self, nt: &str) -> Option<usize> {
        self.min_depth.get(nt).copied()
    }

    /// Slot labels derivable from `nt`.
    pub fn reachable_labels(&self, nt: &str) -> BTreeSet<String> {
        self.reach.get(nt).cloned().unwrap_or_default()
    }

    /// Slot labels derivable from any start symbol.
    pub fn reachable_from_start(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for s in &self.start_symbols {
            out.extend(self.reachable_labels(s));
        }
        for (nt, tier) in &self.tiers {
            if *tier != Tier::High {
                out.extend(self.reachable_labels(nt));
            }
        }
        out
    }

    /// Intent attached to an expansion rooted at `nt`.
    pub fn intent_for(&self, nt: &str) -> &str {
        self.start_intents.get(nt).map(String::as_str).unwrap_or(INTENT_PRESCRIPTION)
    }

    pub fn agrees_number(&self) -> bool {
        self.feature_constraints.iter().any(|(f, _)| f == "number")
    }

    fn production_depth(&self, p: &[Symbol]) -> usize {
        p.iter()
            .map(|s| match s {
                Symbol::T(_) => 0,
                Symbol::N(n) => self.min_depth[n],
            })
            .max()
            .unwrap_or(0)
            + 1
    }

    fn production_reaches(&self, p: &[Symbol], label: &str) -> bool {
        p.iter().any(|s| match s {
            Symbol::T(t) => t.slot_label == label,
            Symbol::N(n) => self.reach[n].contains(label),
        })
    }
}

pub fn load_grammar(path: impl AsRef<Path>) -> Result<Grammar, GrammarError> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| GrammarError::Io(e.to_string()))?;
    Grammar::parse(&text)
}

struct Expander<'a, R: Rng> {
    g: &'a Grammar,
    record: &'a DrugRecord,
    rng: &'a mut R,
    words: Vec<String>,
    labels: Vec<String>,
    last_count: Option<f64>,
}

impl<R: Rng> Expander<'_, R> {
    /// Expands `nt` within `budget` levels. With `target`, the derivation is
    /// steered so that the label is emitted at least once.
    fn expand(&mut self, nt: &str, budget: usize, target: Option<&str>) {
        let prods = &self.g.rules[nt];
        let fits: Vec<&Vec<Symbol>> = prods
            .iter()
            .filter(|p| self.g.production_depth(p) <= budget)
            .filter(|p| target.is_none_or(|t| self.g.production_reaches(p, t)))
            .collect();
        let prod = *fits.choose(self.rng).expect("depth budget checked by caller");
        let carrier = target.map(|t| {
            let idx: Vec<usize> = prod
                .iter()
                .enumerate()
                .filter(|(_, s)| match s {
                    Symbol::T(tt) => tt.slot_label == t,
                    Symbol::N(n) => self.g.reach[n].contains(t),
                })
                .map(|(i, _)| i)
                .collect();
            *idx.choose(self.rng).unwrap()
        });
        for (i, s) in prod.iter().enumerate() {
            match s {
                Symbol::T(t) => self.emit(t),
                Symbol::N(n) => {
                    let tgt = if carrier == Some(i) { target } else { None };
                    self.expand(n, budget - 1, tgt);
                }
            }
        }
    }

    fn emit(&mut self, t: &TerminalTriplet) {
        let mut text = Vec::new();
        for p in &t.keyword {
            text.push(match p {
                Piece::Word(w) => {
                    if !matches!(w.as_str(), "a" | "an" | "once" | "twice" | "thrice") {
                        if let Some(n) = parse_number(w) {
                            self.last_count = Some(n);
                        }
                    }
                    w.clone()
                }
                Piece::Slot(ph) => self.fill(ph),
            });
        }
        let surface = text.join(" ");
        let toks = tokenize(&surface);
        // A brand spelled like its INN is annotated as the INN.
        let label = if t.slot_label == "drug"
            && t.keyword == [Piece::Slot(Placeholder::Brand)]
            && normalize_text(&self.record.brand_name) == normalize_text(&self.record.inn)
        {
            "inn"
        } else {
            t.slot_label.as_str()
        };
        for (k, tok) in toks.iter().enumerate() {
            self.words.push(tok.text.clone());
            self.labels.push(if label == "O" {
                "O".to_string()
            } else if k == 0 {
                format!("B-{label}")
            } else {
                format!("I-{label}")
            });
        }
    }

    fn fill(&mut self, ph: &Placeholder) -> String {
        let r = self.record;
        match ph {
            Placeholder::Brand => r.brand_name.clone(),
            Placeholder::Inn => r.inn.clone(),
            Placeholder::DoseValue => format_number(r.dose_value),
            Placeholder::DoseUnit => r.dose_unit.clone(),
            Placeholder::Form => r.form.clone(),
            Placeholder::Route => r.route.clone(),
            Placeholder::IntakeUnit => {
                let unit = r.intake_unit();
                let n = if self.g.agrees_number() { self.last_count.unwrap_or(1.0) } else { 1.0 };
                pluralize_unit(unit, n)
            }
            Placeholder::Int(a, b) => {
                let v = self.rng.gen_range(*a..=*b);
                self.last_count = Some(v as f64);
                v.to_string()
            }
        }
    }
}

/// Expands `start` with every placeholder bound to `record`.
pub fn expand_with_record<R: Rng>(
    g: &Grammar,
    start: &str,
    record: &DrugRecord,
    target: Option<&str>,
    rng: &mut R,
) -> Result<(Vec<String>, Vec<String>), GrammarError> {
    let need = g.min_depth(start).ok_or_else(|| GrammarError::Undefined(start.to_string()))?;
    if need > g.max_depth {
        return Err(GrammarError::DepthExceeded { symbol: start.to_string(), needed: need, limit: g.max_depth });
    }
    if let Some(t) = target {
        if !g.reachable_labels(start).contains(t) {
            return Err(GrammarError::UnknownLabel { symbol: start.to_string(), label: t.to_string() });
        }
    }
    let mut ex = Expander { g, record, rng, words: Vec::new(), labels: Vec::new(), last_count: None };
    ex.expand(start, g.max_depth, target);
    Ok((ex.words, ex.labels))
}

/// Samples one record uniformly and expands `start` as an annotated utterance.
pub fn expand<R: Rng>(
    g: &Grammar,
    start: &str,
    db: &DrugDatabase,
    id: &str,
    rng: &mut R,
) -> Result<AnnotatedUtterance, GrammarError> {
    expand_targeted(g, start, db, None, id, rng)
}

pub fn expand_targeted<R: Rng>(
    g: &Grammar,
    start: &str,
    db: &DrugDatabase,
    target: Option<&str>,
    id: &str,
    rng: &mut R,
) -> Result<AnnotatedUtterance, GrammarError> {
    let record = db.records().choose(rng).ok_or(GrammarError::EmptyDatabase)?.clone();
    let (words, labels) = expand_with_record(g, start, &record, target, rng)?;
    Ok(AnnotatedUtterance::from_words(id, &words, labels, g.intent_for(start)))
}

/// Grammar membership oracle: decides whether a labelled token sequence is
/// derivable from `start`, with placeholders ranging over `db`.
pub struct MembershipOracle<'a> {
    g: &'a Grammar,
    domains: HashMap<String, Vec<Vec<String>>>,
}

fn token_texts(s: &str) -> Vec<String> {
    tokenize(s).into_iter().map(|t| t.normalized).collect()
}

impl<'a> MembershipOracle<'a> {
    pub fn new(g: &'a Grammar, db: &DrugDatabase) -> Self {
        let mut sets: BTreeMap<&str, BTreeSet<Vec<String>>> = BTreeMap::new();
        for r in db.records() {
            sets.entry("brand").or_default().insert(token_texts(&r.brand_name));
            sets.entry("inn").or_default().insert(token_texts(&r.inn));
            sets.entry("dose_value").or_default().insert(token_texts(&format_number(r.dose_value)));
            sets.entry("dose_unit").or_default().insert(token_texts(&r.dose_unit));
            sets.entry("form").or_default().insert(token_texts(&r.form));
            sets.entry("route").or_default().insert(token_texts(&r.route));
            let u = r.intake_unit();
            sets.entry("intake_unit").or_default().insert(token_texts(u));
            sets.entry("intake_unit").or_default().insert(token_texts(&pluralize_unit(u, 2.0)));
        }
        let domains = sets.into_iter().map(|(k, v)| (k.to_string(), v.into_iter().collect())).collect();
        Self { g, domains }
    }

    pub fn accepts(&self, start: &str, tokens: &[Token], labels: &[String]) -> bool {
        if tokens.len() != labels.len() || !self.g.rules.contains_key(start) {
            return false;
        }
        let words: Vec<&str> = tokens.iter().map(|t| t.normalized.as_str()).collect();
        let mut memo: HashMap<(String, usize), BTreeSet<usize>> = HashMap::new();
        self.ends_of(start, 0, &words, labels, &mut memo).contains(&words.len())
    }

    fn ends_of(
        &self,
        nt: &str,
        pos: usize,
        words: &[&str],
        labels: &[String],
        memo: &mut HashMap<(String, usize), BTreeSet<usize>>,
    ) -> BTreeSet<usize> {
        let key = (nt.to_string(), pos);
        if let Some(v) = memo.get(&key) {
            return v.clone();
        }
        memo.insert(key.clone(), BTreeSet::new());
        let mut out = BTreeSet::new();
        for prod in &self.g.rules[nt] {
            let mut cur: BTreeSet<usize> = [pos].into();
            for s in prod {
                let mut next = BTreeSet::new();
                for &p in &cur {
                    match s {
                        Symbol::N(n) => next.extend(self.ends_of(n, p, words, labels, memo)),
                        Symbol::T(t) => next.extend(self.match_terminal(t, p, words, labels)),
                    }
                }
                cur = next;
                if cur.is_empty() {
                    break;
                }
            }
            out.extend(cur);
        }
        memo.insert(key, out.clone());
        out
    }

    fn match_terminal(&self, t: &TerminalTriplet, pos: usize, words: &[&str], labels: &[String]) -> BTreeSet<usize> {
        let mut cur: BTreeSet<usize> = [pos].into();
        for piece in &t.keyword {
            let mut next = BTreeSet::new();
            for &p in &cur {
                match piece {
                    Piece::Word(w) => {
                        let seq = token_texts(w);
                        if words.len() >= p + seq.len() && words[p..p + seq.len()].iter().zip(&seq).all(|(a, b)| a == b) {
                            next.insert(p + seq.len());
                        }
                    }
                    Piece::Slot(Placeholder::Int(a, b)) => {
                        if let Some(v) = words.get(p).and_then(|w| w.parse::<i64>().ok()) {
                            if (*a..=*b).contains(&v) {
                                next.insert(p + 1);
                            }
                        }
                    }
                    Piece::Slot(ph) => {
                        let key = match ph {
                            Placeholder::Brand => "brand",
                            Placeholder::Inn => "inn",
                            Placeholder::DoseValue => "dose_value",
                            Placeholder::DoseUnit => "dose_unit",
                            Placeholder::Form => "form",
                            Placeholder::Route => "route",
                            Placeholder::IntakeUnit => "intake_unit",
                            Placeholder::Int(..) => unreachable!(),
                        };
                        for seq in self.domains.get(key).into_iter().flatten() {
                            if words.len() >= p + seq.len() && words[p..p + seq.len()].iter().zip(seq).all(|(a, b)| a == b) {
                                next.insert(p + seq.len());
                            }
                        }
                    }
                }
            }
            cur = next;
        }
        cur.into_iter()
            .filter(|&end| {
                end > pos
                    && (pos..end).all(|k| {
                        let want = if t.slot_label == "O" {
                            "O".to_string()
                        } else if k == pos {
                            format!("B-{}", t.slot_label)
                        } else {
                            format!("I-{}", t.slot_label)
                        };
                        labels[k] == want
                    })
            })
            .collect()
    }
}

/// Whether an intake unit spelled in an utterance names the record's unit.
pub fn unit_matches_record(surface: &str, record: &DrugRecord) -> bool {
    let s = normalize_text(surface);
    canonical_intake_unit(&s).unwrap_or(&s) == record.intake_unit()
}
