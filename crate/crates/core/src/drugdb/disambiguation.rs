use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{normalize_text, DrugDatabase, DrugRecord};
use crate::taxonomy::values::{canonical_intake_unit, parse_number, to_base_unit};
use crate::taxonomy::PrescriptionFrame;

pub const INJECTABLE_ROUTES: &[&str] = &["intravenous", "intramuscular", "subcutaneous"];

/// A filter over drug records derived from the frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    /// Normalized brand contains the words, or the INN equals them.
    Name { name: String },
    Inn { inn: String },
    Dose { value: f64, unit: Option<String> },
    Form { form: String },
    Route { route: String },
    /// Inferred from the intake unit: the form contains this word.
    FormContains { word: String },
    /// Inferred from the intake unit: the route is one of these.
    RouteIn { routes: Vec<String> },
}

impl Constraint {
    pub fn name(&self) -> &'static str {
        match self {
            Constraint::Name { .. } => "name",
            Constraint::Inn { .. } => "inn",
            Constraint::Dose { .. } => "dose",
            Constraint::Form { .. } => "form",
            Constraint::Route { .. } => "route",
            Constraint::FormContains { .. } => "implicit_form",
            Constraint::RouteIn { .. } => "implicit_route",
        }
    }

    /// Record field the constraint filters on.
    pub fn field(&self) -> &'static str {
        match self {
            Constraint::Name { .. } => "brand_name",
            Constraint::Inn { .. } => "inn",
            Constraint::Dose { .. } => "dose",
            Constraint::Form { .. } | Constraint::FormContains { .. } => "form",
            Constraint::Route { .. } | Constraint::RouteIn { .. } => "route",
        }
    }

    pub fn matches(&self, r: &DrugRecord) -> bool {
        match self {
            Constraint::Name { name } => {
                contains_words(&normalize_text(&r.brand_name), name) || normalize_text(&r.inn) == *name
            }
            Constraint::Inn { inn } => {
                normalize_text(&r.inn) == *inn || contains_words(&normalize_text(&r.brand_name), inn)
            }
            Constraint::Dose { value, unit } => match unit {
                None => approx_eq(r.dose_value, *value),
                Some(u) => match (to_base_unit(*value, u), to_base_unit(r.dose_value, &r.dose_unit)) {
                    (Some((a, ua)), Some((b, ub))) => ua == ub && approx_eq(a, b),
                    _ => normalize_text(u) == normalize_text(&r.dose_unit) && approx_eq(r.dose_value, *value),
                },
            },
            Constraint::Form { form } => form_matches(&r.form, form),
            Constraint::Route { route } => canonical_route(&r.route) == canonical_route(route),
            Constraint::FormContains { word } => form_matches(&r.form, word),
            Constraint::RouteIn { routes } => {
                let rr = canonical_route(&r.route);
                routes.iter().any(|x| *x == rr)
            }
        }
    }
}

fn approx_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Whole-word subsequence test on normalized strings.
fn contains_words(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    let h: Vec<&str> = haystack.split(' ').collect();
    let n: Vec<&str> = needle.split(' ').collect();
    h.windows(n.len()).any(|w| w == n.as_slice())
}

fn singular(w: &str) -> &str {
    if w.len() > 3 && w.ends_with('s') && !w.ends_with("ss") {
        &w[..w.len() - 1]
    } else {
        w
    }
}

/// Every word of `query` (singularized) appears in the record form.
fn form_matches(record_form: &str, query: &str) -> bool {
    let rf = normalize_text(record_form);
    let words: Vec<&str> = rf.split(' ').map(singular).collect();
    let q = normalize_text(query);
    let q: Vec<&str> = q.split(' ').filter(|w| !w.is_empty()).map(singular).collect();
    !q.is_empty() && q.iter().all(|w| words.contains(w))
}

pub fn canonical_route(route: &str) -> String {
    let r = normalize_text(route);
    let words: Vec<&str> = r
        .split(' ')
        .filter(|w| !matches!(*w, "route" | "by" | "way" | "the" | "via"))
        .collect();
    let joined = words.join(" ");
    match joined.as_str() {
        "iv" | "intravenously" | "intravenous" | "intraveineuse" => "intravenous".into(),
        "im" | "intramuscularly" | "intramuscular" => "intramuscular".into(),
        "sc" | "subcutaneously" | "subcutaneous" | "sous cutanee" => "subcutaneous".into(),
        "mouth" | "orally" | "per os" | "oral" | "orale" => "oral".into(),
        "eye" | "ocular" | "ophthalmic" => "ocular".into(),
        "rectally" | "rectal" => "rectal".into(),
        "skin" | "cutaneous" | "topical" => "cutaneous".into(),
        _ => joined,
    }
}

/// Constraints implied by the intake unit (`10 drops` implies a drop form).
pub fn infer_implicit_constraints(frame: &PrescriptionFrame) -> Vec<Constraint> {
    let Some(uf) = frame.last("dos-uf") else {
        return Vec::new();
    };
    let unit = canonical_intake_unit(&uf.normalized)
        .or_else(|| canonical_intake_unit(&uf.value))
        .unwrap_or("");
    let routes = |rs: &[&str]| Constraint::RouteIn { routes: rs.iter().map(|s| s.to_string()).collect() };
    let form = |w: &str| Constraint::FormContains { word: w.to_string() };
    match unit {
        "drop" => vec![form("drops")],
        "injection" => vec![routes(INJECTABLE_ROUTES)],
        "tablet" => vec![form("tablet")],
        "capsule" => vec![form("capsule")],
        "sachet" => vec![form("sachet")],
        "suppository" => vec![form("suppository")],
        "patch" => vec![form("patch")],
        "puff" => vec![routes(&["inhalation", "nasal"])],
        "application" => vec![routes(&["cutaneous"])],
        _ => Vec::new(),
    }
}

/// Explicit constraints in application order: name, INN, dose, form, route,
/// followed by the implicit ones.
pub fn ordered_constraints(frame: &PrescriptionFrame) -> Vec<Constraint> {
    let mut out = Vec::new();
    if let Some(v) = frame.last("drug") {
        let name = normalize_text(&v.value);
        if !name.is_empty() {
            out.push(Constraint::Name { name });
        }
    }
    if let Some(v) = frame.last("inn") {
        let inn = normalize_text(&v.value);
        if !inn.is_empty() {
            out.push(Constraint::Inn { inn });
        }
    }
    if let Some(value) = frame.last("d-dos-val").and_then(|v| parse_number(&v.normalized)) {
        let unit = frame.last_normalized("d-dos-up").map(str::to_string);
        out.push(Constraint::Dose { value, unit });
    }
    if let Some(f) = frame.last("form") {
        out.push(Constraint::Form { form: normalize_text(&f.value) });
    }
    if let Some(r) = frame.last("route") {
        out.push(Constraint::Route { route: canonical_route(&r.value) });
    }
    out.extend(infer_implicit_constraints(frame));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisambiguationStatus {
    None,
    Unique,
    Multiple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisambiguationOutcome {
    pub status: DisambiguationStatus,
    pub candidates: Vec<DrugRecord>,
    pub constraints_applied: Vec<String>,
}

impl DisambiguationOutcome {
    pub fn unique(&self) -> Option<&DrugRecord> {
        match self.status {
            DisambiguationStatus::Unique => self.candidates.first(),
            _ => None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DisambiguationError {
    #[error("the frame names no drug and implies no constraint")]
    NoDrugMentioned,
}

/// Narrows the database one constraint at a time, stopping as soon as at most
/// one candidate remains. Candidates are sorted by UCD code.
pub fn disambiguate(
    db: &DrugDatabase,
    frame: &PrescriptionFrame,
) -> Result<DisambiguationOutcome, DisambiguationError> {
    let constraints = ordered_constraints(frame);
    let named = constraints.iter().any(|c| matches!(c, Constraint::Name { .. } | Constraint::Inn { .. }));
    let implicit = constraints
        .iter()
        .any(|c| matches!(c, Constraint::FormContains { .. } | Constraint::RouteIn { .. }));
    if !named && !implicit {
        return Err(DisambiguationError::NoDrugMentioned);
    }
    let mut candidates: Vec<&DrugRecord> = db.records().iter().collect();
    candidates.sort_by(|a, b| a.ucd_code.cmp(&b.ucd_code));
    let mut applied = Vec::new();
    for c in &constraints {
        candidates.retain(|r| c.matches(r));
        applied.push(c.name().to_string());
        if candidates.len() <= 1 {
            break;
        }
    }
    let status = match candidates.len() {
        0 => DisambiguationStatus::None,
        1 => DisambiguationStatus::Unique,
        _ => DisambiguationStatus::Multiple,
    };
    Ok(DisambiguationOutcome {
        status,
        candidates: candidates.into_iter().cloned().collect(),
        constraints_applied: applied,
    })
}
