//! Slot value normalization: numbers, units, frequencies and durations.

use crate::drugdb::normalize_text;

const NUMBER_WORDS: &[(&str, f64)] = &[
    ("zero", 0.0),
    ("one", 1.0),
    ("a", 1.0),
    ("an", 1.0),
    ("once", 1.0),
    ("two", 2.0),
    ("twice", 2.0),
    ("three", 3.0),
    ("thrice", 3.0),
    ("four", 4.0),
    ("five", 5.0),
    ("six", 6.0),
    ("seven", 7.0),
    ("eight", 8.0),
    ("nine", 9.0),
    ("ten", 10.0),
    ("eleven", 11.0),
    ("twelve", 12.0),
    ("fifteen", 15.0),
    ("twenty", 20.0),
    ("thirty", 30.0),
    ("half", 0.5),
];

/// Strength and volume units. Keys are normalized spellings.
const MEASURE_UNITS: &[(&str, &str)] = &[
    ("mg", "mg"),
    ("milligram", "mg"),
    ("milligrams", "mg"),
    ("milligramme", "mg"),
    ("milligrammes", "mg"),
    ("g", "g"),
    ("gram", "g"),
    ("grams", "g"),
    ("gramme", "g"),
    ("grammes", "g"),
    ("mcg", "mcg"),
    ("µg", "mcg"),
    ("ug", "mcg"),
    ("microgram", "mcg"),
    ("micrograms", "mcg"),
    ("ml", "ml"),
    ("milliliter", "ml"),
    ("milliliters", "ml"),
    ("millilitre", "ml"),
    ("millilitres", "ml"),
    ("l", "l"),
    ("liter", "l"),
    ("litre", "l"),
    ("ui", "ui"),
    ("iu", "ui"),
    ("%", "%"),
    ("percent", "%"),
];

/// Units in which one intake is counted.
const INTAKE_UNITS: &[(&str, &str)] = &[
    ("tablet", "tablet"),
    ("tablets", "tablet"),
    ("pill", "tablet"),
    ("pills", "tablet"),
    ("comprime", "tablet"),
    ("comprimes", "tablet"),
    ("capsule", "capsule"),
    ("capsules", "capsule"),
    ("gelule", "capsule"),
    ("gelules", "capsule"),
    ("drop", "drop"),
    ("drops", "drop"),
    ("goutte", "drop"),
    ("gouttes", "drop"),
    ("injection", "injection"),
    ("injections", "injection"),
    ("infusion", "injection"),
    ("infusions", "injection"),
    ("sachet", "sachet"),
    ("sachets", "sachet"),
    ("suppository", "suppository"),
    ("suppositories", "suppository"),
    ("puff", "puff"),
    ("puffs", "puff"),
    ("spray", "puff"),
    ("sprays", "puff"),
    ("application", "application"),
    ("applications", "application"),
    ("spoonful", "spoonful"),
    ("spoonfuls", "spoonful"),
    ("spoon", "spoonful"),
    ("spoons", "spoonful"),
    ("vial", "vial"),
    ("vials", "vial"),
    ("patch", "patch"),
    ("patches", "patch"),
];

const RHYTHM: &[(&str, &str)] = &[
    ("morning", "morning"),
    ("mornings", "morning"),
    ("breakfast", "morning"),
    ("matin", "morning"),
    ("noon", "noon"),
    ("midday", "noon"),
    ("lunch", "noon"),
    ("midi", "noon"),
    ("evening", "evening"),
    ("evenings", "evening"),
    ("dinner", "evening"),
    ("soir", "evening"),
    ("night", "night"),
    ("nights", "night"),
    ("nuit", "night"),
    ("bedtime", "bedtime"),
    ("bed", "bedtime"),
];

fn lookup(table: &[(&str, &'static str)], key: &str) -> Option<&'static str> {
    table.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
}

/// Parses digits (`2`, `2.5`, `2,5`) or a small number word.
pub fn parse_number(s: &str) -> Option<f64> {
    let t = normalize_text(s);
    if t.is_empty() {
        return None;
    }
    if t.chars().all(|c| c.is_ascii_digit() || c == '.' || c == ',') {
        return t.replace(',', ".").parse::<f64>().ok().filter(|x| x.is_finite());
    }
    NUMBER_WORDS.iter().find(|(w, _)| *w == t).map(|(_, v)| *v)
}

/// Decimal rendering without trailing zeros: `2.0 -> "2"`, `0.50 -> "0.5"`.
pub fn format_number(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        let s = format!("{:.6}", x);
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

pub fn canonical_measure_unit(s: &str) -> Option<&'static str> {
    lookup(MEASURE_UNITS, &normalize_text(s))
}

pub fn canonical_intake_unit(s: &str) -> Option<&'static str> {
    lookup(INTAKE_UNITS, &normalize_text(s))
}

pub fn canonical_rhythm(s: &str) -> Option<&'static str> {
    let t = normalize_text(s);
    t.split(' ').find_map(|w| lookup(RHYTHM, w))
}

/// Base dimension and scale factor of a measure unit (`g -> ("mg", 1000)`).
pub fn unit_scale(unit: &str) -> Option<(&'static str, f64)> {
    match canonical_measure_unit(unit)? {
        "mg" => Some(("mg", 1.0)),
        "g" => Some(("mg", 1000.0)),
        "mcg" => Some(("mg", 0.001)),
        "ml" => Some(("ml", 1.0)),
        "l" => Some(("ml", 1000.0)),
        "ui" => Some(("ui", 1.0)),
        "%" => Some(("%", 1.0)),
        _ => None,
    }
}

/// Converts `value unit` to the base unit of its dimension.
pub fn to_base_unit(value: f64, unit: &str) -> Option<(f64, &'static str)> {
    unit_scale(unit).map(|(base, k)| (value * k, base))
}

/// English plural of an intake unit, or the unit itself when `n == 1`.
pub fn pluralize_unit(unit: &str, n: f64) -> String {
    if n <= 1.0 || canonical_measure_unit(unit).is_some() {
        return unit.to_string();
    }
    match unit {
        "suppository" => "suppositories".into(),
        "patch" => "patches".into(),
        u if u.ends_with('s') => u.to_string(),
        u => format!("{u}s"),
    }
}

fn period_of(word: &str) -> Option<&'static str> {
    match word {
        "day" | "days" | "daily" | "jour" | "24h" => Some("day"),
        "week" | "weeks" | "weekly" | "semaine" => Some("week"),
        "month" | "months" | "monthly" | "mois" => Some("month"),
        _ => None,
    }
}

/// Normalizes a frequency expression to `N/day`, `N/week` or `N/month`.
///
/// `"per day" -> 1/day`, `"3 times a day" -> 3/day`, `"twice daily" -> 2/day`,
/// `"every 8 hours" -> 3/day`, `"every 2 days" -> 0.5/day`.
pub fn normalize_frequency(s: &str) -> Option<String> {
    let t = normalize_text(s);
    let words: Vec<&str> = t.split(' ').filter(|w| !w.is_empty()).collect();
    if words.is_empty() {
        return None;
    }
    let number_at = |i: usize| words.get(i).and_then(|w| parse_number(w));
    if let Some(pos) = words.iter().position(|w| *w == "every") {
        let (k, unit_idx) = match number_at(pos + 1) {
            Some(k) if !matches!(words[pos + 1], "a" | "an") => (k, pos + 2),
            _ => (1.0, pos + 1),
        };
        let unit = words.get(unit_idx).copied().unwrap_or("");
        if k <= 0.0 {
            return None;
        }
        return match unit {
            "hour" | "hours" | "h" => Some(format!("{}/day", format_number(24.0 / k))),
            "other" => Some("0.5/day".to_string()),
            u => period_of(u).map(|p| format!("{}/{}", format_number(1.0 / k), p)),
        };
    }
    let period = words.iter().rev().find_map(|w| period_of(w))?;
    let count = words
        .iter()
        .enumerate()
        .find_map(|(i, w)| match *w {
            "once" => Some(1.0),
            "twice" => Some(2.0),
            "thrice" => Some(3.0),
            _ if matches!(words.get(i + 1), Some(&"times") | Some(&"time") | Some(&"fois")) => {
                parse_number(w)
            }
            _ => None,
        })
        .unwrap_or(1.0);
    Some(format!("{}/{}", format_number(count), period))
}

/// Intakes per day implied by a normalized frequency.
pub fn intakes_per_day(normalized: &str) -> Option<f64> {
    let (n, period) = normalized.split_once('/')?;
    let n: f64 = n.parse().ok()?;
    match period {
        "day" => Some(n),
        "week" => Some(n / 7.0),
        "month" => Some(n / 30.0),
        _ => None,
    }
}

/// Normalizes a duration to `<n> <day|days|week|weeks|month|months>`.
pub fn normalize_duration(s: &str) -> Option<String> {
    let t = normalize_text(s);
    let words: Vec<&str> = t.split(' ').filter(|w| !w.is_empty()).collect();
    let unit_pos = words.iter().position(|w| duration_unit(w).is_some())?;
    let unit = duration_unit(words[unit_pos])?;
    let n = words[..unit_pos].iter().rev().find_map(|w| parse_number(w)).unwrap_or(1.0);
    if n <= 0.0 {
        return None;
    }
    let plural = if n == 1.0 { unit.to_string() } else { format!("{unit}s") };
    Some(format!("{} {}", format_number(n), plural))
}

fn duration_unit(w: &str) -> Option<&'static str> {
    match w {
        "day" | "days" | "d" | "jour" | "jours" => Some("day"),
        "week" | "weeks" | "semaine" | "semaines" => Some("week"),
        "month" | "months" | "mois" => Some("month"),
        _ => None,
    }
}

/// Number of days of a normalized duration.
pub fn duration_days(normalized: &str) -> Option<f64> {
    let (n, unit) = normalized.split_once(' ')?;
    let n: f64 = n.parse().ok()?;
    let k = match unit.trim_end_matches('s') {
        "day" => 1.0,
        "week" => 7.0,
        "month" => 30.0,
        _ => return None,
    };
    Some(n * k)
}

/// Canonical value of a slot given its surface text.
///
/// Falls back to [`normalize_text`] when the label has no dedicated parser or
/// the text does not parse.
pub fn normalize_slot_value(label: &str, text: &str) -> String {
    let parsed = match label {
        "d-dos-val" | "dos-val" | "d-vol-val" | "renewal" | "quantity" => {
            parse_number(text).map(format_number)
        }
        "d-dos-up" | "d-vol-up" => canonical_measure_unit(text).map(str::to_string),
        "dos-uf" => canonical_intake_unit(text)
            .or_else(|| canonical_measure_unit(text))
            .map(str::to_string),
        "frequency" => normalize_frequency(text),
        "duration" => normalize_duration(text),
        "rhythm" => canonical_rhythm(text).map(str::to_string),
        _ => None,
    };
    parsed.unwrap_or_else(|| normalize_text(text))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers() {
        assert_eq!(parse_number("200"), Some(200.0));
        assert_eq!(parse_number("2,5"), Some(2.5));
        assert_eq!(parse_number("Two"), Some(2.0));
        assert_eq!(parse_number("mg"), None);
        assert_eq!(format_number(200.0), "200");
        assert_eq!(format_number(0.5), "0.5");
        assert_eq!(format_number(2.0 / 3.0), "0.666667");
    }

    #[test]
    fn units() {
        assert_eq!(canonical_measure_unit("Milligrammes"), Some("mg"));
        assert_eq!(canonical_intake_unit("injections"), Some("injection"));
        assert_eq!(to_base_unit(0.5, "g"), Some((500.0, "mg")));
        assert_eq!(pluralize_unit("injection", 2.0), "injections");
        assert_eq!(pluralize_unit("tablet", 1.0), "tablet");
        assert_eq!(pluralize_unit("mg", 3.0), "mg");
    }

    #[test]
    fn frequencies() {
        assert_eq!(normalize_frequency("per day").as_deref(), Some("1/day"));
        assert_eq!(normalize_frequency("3 times a day").as_deref(), Some("3/day"));
        assert_eq!(normalize_frequency("twice daily").as_deref(), Some("2/day"));
        assert_eq!(normalize_frequency("every 8 hours").as_deref(), Some("3/day"));
        assert_eq!(normalize_frequency("every 2 days").as_deref(), Some("0.5/day"));
        assert_eq!(normalize_frequency("once a week").as_deref(), Some("1/week"));
        assert_eq!(normalize_frequency("every day").as_deref(), Some("1/day"));
        assert_eq!(normalize_frequency("hello"), None);
        assert_eq!(intakes_per_day("3/day"), Some(3.0));
        assert_eq!(intakes_per_day("7/week"), Some(1.0));
    }

    #[test]
    fn durations() {
        assert_eq!(normalize_duration("7 days").as_deref(), Some("7 days"));
        assert_eq!(normalize_duration("a week").as_deref(), Some("1 week"));
        assert_eq!(normalize_duration("two months").as_deref(), Some("2 months"));
        assert_eq!(normalize_duration("soon"), None);
        assert_eq!(duration_days("1 week"), Some(7.0));
    }

    #[test]
    fn slot_values() {
        assert_eq!(normalize_slot_value("d-dos-up", "milligrams"), "mg");
        assert_eq!(normalize_slot_value("dos-uf", "drops"), "drop");
        assert_eq!(normalize_slot_value("dos-val", "2"), "2");
        assert_eq!(normalize_slot_value("duration", "7 days"), "7 days");
        assert_eq!(normalize_slot_value("inn", "Ofloxacine"), "ofloxacine");
        assert_eq!(normalize_slot_value("rhythm", "in the morning"), "morning");
    }
}
