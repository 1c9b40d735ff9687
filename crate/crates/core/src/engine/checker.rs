//! Mock e-prescription checker: daily-dose ceiling and allergy lookup.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drugdb::{normalize_text, DrugDatabase, DrugRecord};
use crate::taxonomy::values::{canonical_measure_unit, format_number, intakes_per_day, parse_number, to_base_unit};
use crate::taxonomy::PrescriptionFrame;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PatientStub {
    pub id: String,
    /// INN → (value, unit) per day, replacing the database ceiling.
    #[serde(default)]
    pub max_daily_dose_overrides: BTreeMap<String, (f64, String)>,
    #[serde(default)]
    pub allergy_inns: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningKind {
    Overdose,
    Allergy,
    Uncheckable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warning {
    pub kind: WarningKind,
    pub message: String,
}

#[derive(Debug, Error, PartialEq)]
pub enum CheckError {
    #[error("no resolved drug in the frame")]
    Unresolved,
    #[error("resolved code `{0}` is not in the database")]
    UnknownCode(String),
}

/// Dose of one intake in base units, e.g. `2 tablets` of a 500 mg record
/// is `(1000, "mg")`.
pub fn dose_per_intake(frame: &PrescriptionFrame, record: &DrugRecord) -> Option<(f64, &'static str)> {
    let n = parse_number(frame.last_normalized("dos-val")?)?;
    let uf = frame.last_normalized("dos-uf")?;
    match canonical_measure_unit(uf) {
        Some(u) => to_base_unit(n, u),
        None => to_base_unit(n * record.dose_value, &record.dose_unit),
    }
}

/// Daily dose in base units: dose per intake × intakes per day.
pub fn daily_dose(frame: &PrescriptionFrame, record: &DrugRecord) -> Option<(f64, &'static str)> {
    let (per, unit) = dose_per_intake(frame, record)?;
    let k = intakes_per_day(frame.last_normalized("frequency")?)?;
    Some((per * k, unit))
}

/// Warnings for a resolved frame. An empty list means the prescription passes.
pub fn check_prescription(
    frame: &PrescriptionFrame,
    patient: &PatientStub,
    db: &DrugDatabase,
) -> Result<Vec<Warning>, CheckError> {
    let code = frame.resolved_ucd.as_deref().ok_or(CheckError::Unresolved)?;
    let record = db.by_ucd(code).ok_or_else(|| CheckError::UnknownCode(code.to_string()))?;
    Ok(check_record(frame, record, patient))
}

pub fn check_record(frame: &PrescriptionFrame, record: &DrugRecord, patient: &PatientStub) -> Vec<Warning> {
    let mut out = Vec::new();
    let inn = normalize_text(&record.inn);
    let ceiling = patient
        .max_daily_dose_overrides
        .iter()
        .find(|(k, _)| normalize_text(k) == inn)
        .map(|(_, v)| v.clone())
        .or_else(|| record.max_daily_dose.clone());
    if let Some((max_v, max_u)) = ceiling {
        let max = to_base_unit(max_v, &max_u);
        match (daily_dose(frame, record), max) {
            (Some((d, du)), Some((m, mu))) if du == mu => {
                if d > m * (1.0 + 1e-9) {
                    out.push(Warning {
                        kind: WarningKind::Overdose,
                        message: format!(
                            "the daily dose of {} {du} exceeds the usual maximum of {} {mu} per day",
                            format_number(d),
                            format_number(m)
                        ),
                    });
                }
            }
            _ => out.push(Warning {
                kind: WarningKind::Uncheckable,
                message: "the daily dose could not be computed from the dosage and frequency".into(),
            }),
        }
    }
    if patient.allergy_inns.iter().any(|a| normalize_text(a) == inn) {
        out.push(Warning { kind: WarningKind::Allergy, message: format!("the patient is allergic to {}", record.inn) });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::SlotValue;

    fn frame(code: &str, n: &str, uf: &str, freq: &str) -> PrescriptionFrame {
        let mut f = PrescriptionFrame::new();
        f.resolved_ucd = Some(code.into());
        f.add("dos-val", SlotValue::new(n, n, 0));
        f.add("dos-uf", SlotValue::new(uf, uf, 0));
        f.add("frequency", SlotValue::new(freq, freq, 0));
        f.add("duration", SlotValue::new("5 days", "5 days", 0));
        f
    }

    #[test]
    fn overdose_against_record_ceiling() {
        let db = DrugDatabase::fixture();
        let p = PatientStub::default();
        let w = check_prescription(&frame("9000201", "1", "tablet", "10/day"), &p, &db).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].kind, WarningKind::Overdose);
        assert!(w[0].message.contains("5000 mg"));
        assert!(check_prescription(&frame("9000201", "1", "tablet", "3/day"), &p, &db).unwrap().is_empty());
        // measure-unit dosage: 2 g per intake, 2 per day = 4 g > 3 g
        let w = check_prescription(&frame("9000201", "2", "g", "2/day"), &p, &db).unwrap();
        assert_eq!(w[0].kind, WarningKind::Overdose);
    }

    #[test]
    fn allergy_and_override() {
        let db = DrugDatabase::fixture();
        let mut p = PatientStub { id: "p".into(), ..Default::default() };
        p.allergy_inns.insert("Paracetamol".into());
        p.max_daily_dose_overrides.insert("paracetamol".into(), (1.0, "g".into()));
        let kinds: Vec<_> = check_prescription(&frame("9000201", "1", "tablet", "3/day"), &p, &db)
            .unwrap()
            .into_iter()
            .map(|w| w.kind)
            .collect();
        assert_eq!(kinds, [WarningKind::Overdose, WarningKind::Allergy]);
    }

    #[test]
    fn uncheckable_and_unresolved() {
        let db = DrugDatabase::fixture();
        let p = PatientStub::default();
        let w = check_prescription(&frame("9000201", "1", "tablet", "sometimes"), &p, &db).unwrap();
        assert_eq!(w[0].kind, WarningKind::Uncheckable);
        // no ceiling in the record: nothing to check
        assert!(check_prescription(&frame("9000301", "1", "drop", "sometimes"), &p, &db).unwrap().is_empty());
        let mut f = frame("9000201", "1", "tablet", "3/day");
        f.resolved_ucd = None;
        assert_eq!(check_prescription(&f, &p, &db), Err(CheckError::Unresolved));
    }
}
