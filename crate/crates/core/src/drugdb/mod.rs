//! Drug database: ingestion of delimiter-separated drug tables, text
//! normalization, and constraint-narrowing disambiguation to a single
//! dispensation code (UCD).

mod disambiguation;

pub use disambiguation::{
    disambiguate, infer_implicit_constraints, ordered_constraints, Constraint,
    DisambiguationError, DisambiguationOutcome, DisambiguationStatus, INJECTABLE_ROUTES,
};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::taxonomy::values::{canonical_intake_unit, canonical_measure_unit, format_number};

/// Fixture database shipped with the repository (`data/drugs_fixture.tsv`).
pub const FIXTURE_TSV: &str = include_str!("../../../../data/drugs_fixture.tsv");

/// Lowercases, folds accents, strips trademark symbols and collapses whitespace.
pub fn normalize_text(s: &str) -> String {
    let folded: String = s
        .to_lowercase()
        .nfd()
        .filter(|c| !is_combining_mark(*c) && !matches!(c, '®' | '™' | '©'))
        .collect();
    folded.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrugRecord {
    pub ucd_code: String,
    pub brand_name: String,
    pub inn: String,
    pub dose_value: f64,
    pub dose_unit: String,
    pub form: String,
    pub route: String,
    #[serde(default)]
    pub per_container: Option<String>,
    /// Usual maximum daily dose, used by the prescription checker.
    #[serde(default)]
    pub max_daily_dose: Option<(f64, String)>,
}

impl DrugRecord {
    /// Human-readable designation, e.g. `OFLOXACINE 200 mg/40 ml, solution for infusion`.
    pub fn label(&self) -> String {
        let strength = match &self.per_container {
            Some(pc) if !pc.is_empty() => pc.clone(),
            _ => format!("{} {}", format_number(self.dose_value), self.dose_unit),
        };
        format!("{} {}, {}", self.brand_name.to_uppercase(), strength, self.form)
    }

    /// Unit a prescriber counts one intake of this presentation in.
    pub fn intake_unit(&self) -> &'static str {
        intake_unit_for_form(&self.form)
    }
}

/// Maps a pharmaceutical form to the unit of one intake.
pub fn intake_unit_for_form(form: &str) -> &'static str {
    let f = normalize_text(form);
    if f.contains("drops") {
        "drop"
    } else if f.contains("infusion") || f.contains("injectable") {
        "injection"
    } else if f.contains("tablet") {
        "tablet"
    } else if f.contains("capsule") {
        "capsule"
    } else if f.contains("sachet") {
        "sachet"
    } else if f.contains("suppository") {
        "suppository"
    } else if f.contains("spray") || f.contains("inhalation") {
        "puff"
    } else if f.contains("cream") || f.contains("gel") {
        "application"
    } else if f.contains("patch") {
        "patch"
    } else {
        "ml"
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing mandatory column `{0}`")]
    MissingColumn(String),
    #[error("duplicate UCD code `{0}`")]
    DuplicateUcd(String),
    #[error("line {line}: unparseable dose `{value}`")]
    BadDose { line: usize, value: String },
    #[error("line {line}: empty `{field}`")]
    EmptyField { line: usize, field: String },
    #[error("bad column mapping `{0}`, expected field=column")]
    BadMapping(String),
}

/// Header names to read each record field from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub ucd_code: String,
    pub brand_name: String,
    pub inn: String,
    pub dose_value: String,
    pub dose_unit: String,
    pub form: String,
    pub route: String,
    pub per_container: String,
    pub max_daily_value: String,
    pub max_daily_unit: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            ucd_code: "ucd_code".into(),
            brand_name: "brand_name".into(),
            inn: "inn".into(),
            dose_value: "dose_value".into(),
            dose_unit: "dose_unit".into(),
            form: "form".into(),
            route: "route".into(),
            per_container: "per_container".into(),
            max_daily_value: "max_daily_value".into(),
            max_daily_unit: "max_daily_unit".into(),
        }
    }
}

impl ColumnMap {
    /// Applies `field=column` overrides, e.g. `ucd_code=CODE_UCD,inn=DCI`.
    pub fn with_overrides(mut self, spec: &str) -> Result<Self, IngestError> {
        for pair in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (field, column) =
                pair.split_once('=').ok_or_else(|| IngestError::BadMapping(pair.to_string()))?;
            let slot = match field.trim() {
                "ucd_code" => &mut self.ucd_code,
                "brand_name" => &mut self.brand_name,
                "inn" => &mut self.inn,
                "dose_value" => &mut self.dose_value,
                "dose_unit" => &mut self.dose_unit,
                "form" => &mut self.form,
                "route" => &mut self.route,
                "per_container" => &mut self.per_container,
                "max_daily_value" => &mut self.max_daily_value,
                "max_daily_unit" => &mut self.max_daily_unit,
                _ => return Err(IngestError::BadMapping(pair.to_string())),
            };
            *slot = column.trim().to_string();
        }
        Ok(self)
    }
}

/// Immutable, indexed drug collection.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DrugDatabase {
    records: Vec<DrugRecord>,
    name_index: BTreeMap<String, Vec<usize>>,
}

impl DrugDatabase {
    pub fn from_records(records: Vec<DrugRecord>) -> Result<Self, IngestError> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.ucd_code.clone()) {
                return Err(IngestError::DuplicateUcd(r.ucd_code.clone()));
            }
        }
        let mut name_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            let brand = normalize_text(&r.brand_name);
            let mut keys = vec![normalize_text(&r.inn), brand.clone()];
            if let Some(first) = brand.split(' ').next() {
                keys.push(first.to_string());
            }
            keys.sort();
            keys.dedup();
            for k in keys.into_iter().filter(|k| !k.is_empty()) {
                name_index.entry(k).or_default().push(i);
            }
        }
        Ok(Self { records, name_index })
    }

    /// The fixture database compiled into the crate.
    pub fn fixture() -> Self {
        Self::from_reader(FIXTURE_TSV.as_bytes(), &ColumnMap::default())
            .expect("shipped fixture is valid")
    }

    pub fn from_reader<R: Read>(reader: R, columns: &ColumnMap) -> Result<Self, IngestError> {
        let mut buf = String::new();
        let mut reader = reader;
        reader.read_to_string(&mut buf)?;
        let header = buf.lines().next().unwrap_or("");
        let delimiter = if header.contains('\t') {
            b'\t'
        } else if header.contains(';') {
            b';'
        } else {
            b','
        };
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .flexible(true)
            .from_reader(buf.as_bytes());
        let headers = rdr.headers()?.clone();
        let position: HashMap<&str, usize> =
            headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
        let required = |name: &str| {
            position.get(name).copied().ok_or_else(|| IngestError::MissingColumn(name.to_string()))
        };
        let c_ucd = required(&columns.ucd_code)?;
        let c_brand = required(&columns.brand_name)?;
        let c_inn = required(&columns.inn)?;
        let c_dose = required(&columns.dose_value)?;
        let c_unit = required(&columns.dose_unit)?;
        let c_form = required(&columns.form)?;
        let c_route = required(&columns.route)?;
        let c_pc = position.get(columns.per_container.as_str()).copied();
        let c_maxv = position.get(columns.max_daily_value.as_str()).copied();
        let c_maxu = position.get(columns.max_daily_unit.as_str()).copied();

        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let line = i + 2;
            let get = |c: usize| row.get(c).unwrap_or("").trim().to_string();
            let non_empty = |c: usize, field: &str| {
                let v = get(c);
                if v.is_empty() {
                    Err(IngestError::EmptyField { line, field: field.to_string() })
                } else {
                    Ok(v)
                }
            };
            let dose_raw = get(c_dose);
            let dose_value = parse_decimal(&dose_raw)
                .filter(|d| *d > 0.0)
                .ok_or(IngestError::BadDose { line, value: dose_raw })?;
            let max_daily_dose = match (c_maxv.map(get), c_maxu.map(get)) {
                (Some(v), Some(u)) if !v.is_empty() && !u.is_empty() => {
                    let value = parse_decimal(&v)
                        .filter(|d| *d > 0.0)
                        .ok_or(IngestError::BadDose { line, value: v })?;
                    Some((value, canonical_unit_or_raw(&u)))
                }
                _ => None,
            };
            records.push(DrugRecord {
                ucd_code: non_empty(c_ucd, "ucd_code")?,
                brand_name: non_empty(c_brand, "brand_name")?,
                inn: non_empty(c_inn, "inn")?,
                dose_value,
                dose_unit: canonical_unit_or_raw(&non_empty(c_unit, "dose_unit")?),
                form: non_empty(c_form, "form")?,
                route: non_empty(c_route, "route")?,
                per_container: c_pc.map(get).filter(|s| !s.is_empty()),
                max_daily_dose,
            });
        }
        Self::from_records(records)
    }

    pub fn records(&self) -> &[DrugRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn name_index(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.name_index
    }

    pub fn by_ucd(&self, code: &str) -> Option<&DrugRecord> {
        self.records.iter().find(|r| r.ucd_code == code)
    }

    /// Records whose normalized brand or INN is indexed under `key`.
    pub fn lookup_name(&self, key: &str) -> Vec<&DrugRecord> {
        self.name_index
            .get(&normalize_text(key))
            .map(|ids| ids.iter().map(|&i| &self.records[i]).collect())
            .unwrap_or_default()
    }

    /// Distinct normalized brand names (each may span several words).
    pub fn brand_names(&self) -> Vec<String> {
        let mut names: Vec<String> =
            self.records.iter().map(|r| normalize_text(&r.brand_name)).collect();
        names.sort();
        names.dedup();
        names
    }

    pub fn inns(&self) -> Vec<String> {
        let mut names: Vec<String> = self.records.iter().map(|r| normalize_text(&r.inn)).collect();
        names.sort();
        names.dedup();
        names
    }
}

/// Reads a drug table from a file, detecting tab, semicolon or comma separators.
pub fn ingest(path: impl AsRef<Path>, columns: &ColumnMap) -> Result<DrugDatabase, IngestError> {
    DrugDatabase::from_reader(File::open(path)?, columns)
}

fn parse_decimal(s: &str) -> Option<f64> {
    s.trim().replace(',', ".").parse::<f64>().ok().filter(|x| x.is_finite())
}

fn canonical_unit_or_raw(u: &str) -> String {
    canonical_measure_unit(u)
        .or_else(|| canonical_intake_unit(u))
        .map(str::to_string)
        .unwrap_or_else(|| normalize_text(u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_text("Doliprane®"), "doliprane");
        assert_eq!(normalize_text("OFLOXACINE  200 Mg"), "ofloxacine 200 mg");
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("  Gélule\tcomprimé effervescent™ "), "gelule comprime effervescent");
    }

    const FIVE_ROWS: &str = "ucd_code\tbrand_name\tinn\tdose_value\tdose_unit\tform\troute\tper_container\n\
        1\tDoliprane\tparacetamol\t500\tmg\ttablet\toral\t\n\
        2\tDoliprane\tparacetamol\t500\tmg\teffervescent tablet\toral\t\n\
        3\tOflocet\tofloxacine\t200\tmg\ttablet\toral\t\n\
        4\tCelluvisc\tcarmellose\t4\tmg\teye drops\tocular\t4 mg/0.4 ml\n\
        5\tXanax\talprazolam\t0,25\tmg\ttablet\toral\t\n";

    #[test]
    fn ingest_five_rows() {
        let db = DrugDatabase::from_reader(FIVE_ROWS.as_bytes(), &ColumnMap::default()).unwrap();
        assert_eq!(db.len(), 5);
        assert!(db.name_index().len() >= 5);
        assert_eq!(db.records()[4].dose_value, 0.25);
        assert_eq!(db.lookup_name("DOLIPRANE").len(), 2);
        for ids in db.name_index().values() {
            assert!(ids.iter().all(|&i| i < db.len()));
        }
    }

    #[test]
    fn duplicate_ucd_is_named() {
        let text = "ucd_code;brand_name;inn;dose_value;dose_unit;form;route\n\
            7;A;a;1;mg;tablet;oral\n7;B;b;2;mg;tablet;oral\n";
        match DrugDatabase::from_reader(text.as_bytes(), &ColumnMap::default()) {
            Err(IngestError::DuplicateUcd(code)) => assert_eq!(code, "7"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_dose_and_missing_column() {
        let text = "ucd_code;brand_name;inn;dose_value;dose_unit;form;route\n1;A;a;lots;mg;tablet;oral\n";
        assert!(matches!(
            DrugDatabase::from_reader(text.as_bytes(), &ColumnMap::default()),
            Err(IngestError::BadDose { line: 2, .. })
        ));
        let text = "ucd_code;brand_name;dose_value;dose_unit;form;route\n";
        assert!(matches!(
            DrugDatabase::from_reader(text.as_bytes(), &ColumnMap::default()),
            Err(IngestError::MissingColumn(c)) if c == "inn"
        ));
    }

    #[test]
    fn header_only_gives_empty_db() {
        let text = "ucd_code\tbrand_name\tinn\tdose_value\tdose_unit\tform\troute\n";
        let db = DrugDatabase::from_reader(text.as_bytes(), &ColumnMap::default()).unwrap();
        assert!(db.is_empty());
    }

    #[test]
    fn column_overrides() {
        let text = "CODE;NAME;DCI;DOSE;UNIT;FORME;VOIE\n1;Spasfon;phloroglucinol;80;mg;tablet;oral\n";
        let map = ColumnMap::default()
            .with_overrides("ucd_code=CODE,brand_name=NAME,inn=DCI,dose_value=DOSE,dose_unit=UNIT,form=FORME,route=VOIE")
            .unwrap();
        let db = DrugDatabase::from_reader(text.as_bytes(), &map).unwrap();
        assert_eq!(db.records()[0].inn, "phloroglucinol");
        assert!(ColumnMap::default().with_overrides("nope").is_err());
    }

    #[test]
    fn fixture_loads() {
        let db = DrugDatabase::fixture();
        assert!(db.len() >= 50, "{}", db.len());
        let ofl = db.by_ucd("9000102").unwrap();
        assert_eq!(ofl.label(), "OFLOXACINE 200 mg/40 ml, solution for infusion");
        assert_eq!(ofl.intake_unit(), "injection");
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in any::<String>()) {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once);
        }

        #[test]
        fn normalize_is_idempotent_on_latin(s in "[A-Za-zÀ-ÿ®™ \t]{0,40}") {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once.clone());
            prop_assert!(!once.contains("  "));
        }
    }
}
