//! Session event logs and dialogue metrics: duration, turns, events, task
//! success and drug association, aggregated per participant group.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::Side;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventType {
    SessionStart,
    Utterance,
    Button,
    Choice,
    SystemAction,
    SystemError,
    DrugResolved,
    PrescriptionValidated,
    PrescriptionCancelled,
    RestartRequested,
}

impl EventType {
    pub fn is_user_action(self) -> bool {
        matches!(self, Self::Utterance | Self::Button | Self::Choice)
    }

    pub fn parse(s: &str) -> Option<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).ok()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::SessionStart => "session_start",
            Self::Utterance => "utterance",
            Self::Button => "button",
            Self::Choice => "choice",
            Self::SystemAction => "system_action",
            Self::SystemError => "system_error",
            Self::DrugResolved => "drug_resolved",
            Self::PrescriptionValidated => "prescription_validated",
            Self::PrescriptionCancelled => "prescription_cancelled",
            Self::RestartRequested => "restart_requested",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub session_id: String,
    /// Seconds, non-decreasing within a session.
    pub ts: f64,
    pub side: Side,
    pub event_type: EventType,
    #[serde(default)]
    pub payload: String,
}

impl SessionEvent {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("events serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub sessions: BTreeMap<String, Vec<SessionEvent>>,
    pub rejects: Vec<Reject>,
}

impl EventLog {
    fn push(&mut self, e: SessionEvent) {
        self.sessions.entry(e.session_id.clone()).or_default().push(e);
    }

    /// Stable sort by timestamp, so equal timestamps keep file order.
    fn finish(mut self) -> Self {
        for evs in self.sessions.values_mut() {
            evs.sort_by(|a, b| a.ts.total_cmp(&b.ts));
        }
        self
    }
}

/// Parses newline-delimited JSON events. Malformed lines are collected as
/// rejects instead of failing the whole log.
pub fn parse_events<R: Read>(r: R) -> io::Result<EventLog> {
    let mut log = EventLog::default();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<SessionEvent>(&line) {
            Ok(e) if e.ts.is_finite() && e.ts >= 0.0 && !e.session_id.is_empty() => log.push(e),
            Ok(_) => log.rejects.push(Reject { line: i + 1, reason: "bad session id or timestamp".into() }),
            Err(err) => log.rejects.push(Reject { line: i + 1, reason: err.to_string() }),
        }
    }
    Ok(log.finish())
}

pub fn parse_event_log(path: impl AsRef<Path>) -> io::Result<EventLog> {
    parse_events(File::open(path)?)
}

/// Tab-separated dump with columns `session_id ts side event_type payload`
/// and an optional header line.
pub fn parse_event_table<R: Read>(r: R) -> io::Result<EventLog> {
    let mut log = EventLog::default();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || (i == 0 && line.starts_with("session_id")) {
            continue;
        }
        let cols: Vec<&str> = line.splitn(5, '\t').collect();
        let reject = |reason: &str| Reject { line: i + 1, reason: reason.to_string() };
        if cols.len() < 4 {
            log.rejects.push(reject("expected at least 4 columns"));
            continue;
        }
        let side = match cols[2] {
            "user" => Side::User,
            "system" => Side::System,
            _ => {
                log.rejects.push(reject("side must be user or system"));
                continue;
            }
        };
        let (Ok(ts), Some(event_type)) = (cols[1].parse::<f64>(), EventType::parse(cols[3])) else {
            log.rejects.push(reject("bad timestamp or event type"));
            continue;
        };
        let payload = cols.get(4).unwrap_or(&"").to_string();
        log.push(SessionEvent { session_id: cols[0].to_string(), ts, side, event_type, payload });
    }
    Ok(log.finish())
}

pub fn write_events<W: Write>(events: &[SessionEvent], mut w: W) -> io::Result<()> {
    for e in events {
        writeln!(w, "{}", e.to_line())?;
    }
    w.flush()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub duration_s: f64,
    pub n_turns: usize,
    pub n_events: usize,
    pub success: bool,
    pub drug_associated: bool,
    pub n_errors: usize,
    pub n_restarts: usize,
    pub error_turn_ratio: f64,
}

/// Metrics of one session's ordered events. A turn is a user action
/// directly answered by a system action; events other than user actions and
/// system actions do not break the pairing.
pub fn session_metrics(events: &[SessionEvent]) -> SessionMetrics {
    let mut m = SessionMetrics { n_events: events.len(), ..Default::default() };
    if let (Some(a), Some(b)) = (events.first(), events.last()) {
        m.duration_s = (b.ts - a.ts).max(0.0);
    }
    let actions: Vec<EventType> = events
        .iter()
        .map(|e| e.event_type)
        .filter(|t| t.is_user_action() || *t == EventType::SystemAction)
        .collect();
    m.n_turns = actions.windows(2).filter(|w| w[0].is_user_action() && w[1] == EventType::SystemAction).count();
    for e in events {
        match e.event_type {
            EventType::PrescriptionValidated => m.success = true,
            EventType::DrugResolved => m.drug_associated = true,
            EventType::SystemError => m.n_errors += 1,
            EventType::RestartRequested => m.n_restarts += 1,
            _ => {}
        }
    }
    m.error_turn_ratio = if m.n_turns == 0 { 0.0 } else { m.n_errors as f64 / m.n_turns as f64 };
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    NonExpert,
    Physician,
    OtherExpert,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::NonExpert => "non_expert",
            Self::Physician => "physician",
            Self::OtherExpert => "other_expert",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantMeta {
    pub participant_id: String,
    pub category: Category,
    pub age_band: String,
    pub gender: String,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("participants file: {0}")]
    Csv(#[from] csv::Error),
    #[error("session `{0}` has no session_start event naming its participant")]
    NoParticipant(String),
    #[error("session `{session}` belongs to unknown participant `{participant}`")]
    UnknownParticipant { session: String, participant: String },
}

/// Reads `participant_id,category,age_band,gender` rows.
pub fn read_participants<R: Read>(r: R) -> Result<Vec<ParticipantMeta>, MetricsError> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let rows: Result<Vec<ParticipantMeta>, csv::Error> = rd.deserialize().collect();
    Ok(rows?)
}

pub fn load_participants(path: impl AsRef<Path>) -> Result<Vec<ParticipantMeta>, MetricsError> {
    read_participants(File::open(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    Category,
    AgeBand,
    Gender,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub group: String,
    pub n_sessions: usize,
    pub mean_duration_s: f64,
    pub mean_turns: f64,
    pub mean_events: f64,
    pub success_rate: f64,
    pub drug_association_rate: f64,
    pub mean_error_turn_ratio: f64,
}

fn row(group: String, ms: &[&SessionMetrics]) -> MetricsRow {
    let n = ms.len() as f64;
    let mean = |f: &dyn Fn(&SessionMetrics) -> f64| ms.iter().map(|m| f(m)).sum::<f64>() / n;
    MetricsRow {
        group,
        n_sessions: ms.len(),
        mean_duration_s: mean(&|m| m.duration_s),
        mean_turns: mean(&|m| m.n_turns as f64),
        mean_events: mean(&|m| m.n_events as f64),
        success_rate: mean(&|m| m.success as u8 as f64),
        drug_association_rate: mean(&|m| m.drug_associated as u8 as f64),
        mean_error_turn_ratio: mean(&|m| m.error_turn_ratio),
    }
}

/// Participant named by the session's `session_start` event.
pub fn session_participant(events: &[SessionEvent]) -> Option<&str> {
    events.iter().find(|e| e.event_type == EventType::SessionStart).map(|e| e.payload.as_str()).filter(|p| !p.is_empty())
}

/// Per-group means and rates, rows sorted by group name.
pub fn aggregate(
    sessions: &BTreeMap<String, Vec<SessionEvent>>,
    meta: &[ParticipantMeta],
    group_by: GroupBy,
) -> Result<Vec<MetricsRow>, MetricsError> {
    let by_id: BTreeMap<&str, &ParticipantMeta> = meta.iter().map(|m| (m.participant_id.as_str(), m)).collect();
    let mut metrics: Vec<(String, SessionMetrics)> = Vec::with_capacity(sessions.len());
    for (id, evs) in sessions {
        let group = if group_by == GroupBy::None {
            "all".to_string()
        } else {
            let pid = session_participant(evs).ok_or_else(|| MetricsError::NoParticipant(id.clone()))?;
            let p = by_id.get(pid).ok_or_else(|| MetricsError::UnknownParticipant {
                session: id.clone(),
                participant: pid.to_string(),
            })?;
            match group_by {
                GroupBy::Category => p.category.as_str().to_string(),
                GroupBy::AgeBand => p.age_band.clone(),
                GroupBy::Gender => p.gender.clone(),
                GroupBy::None => unreachable!(),
            }
        };
        metrics.push((group, session_metrics(evs)));
    }
    let mut groups: BTreeMap<String, Vec<&SessionMetrics>> = BTreeMap::new();
    for (g, m) in &metrics {
        groups.entry(g.clone()).or_default().push(m);
    }
    Ok(groups.into_iter().map(|(g, ms)| row(g, &ms)).collect())
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], w: W) -> Result<(), MetricsError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}
