//! Append-only JSON-lines event log, one file per UTC day.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::DateTime;

use rxdialog::metrics::{EventType, SessionEvent};

pub struct EventSink {
    dir: PathBuf,
    open: Mutex<Option<(String, File)>>,
}

/// `events-YYYY-MM-DD.jsonl` for an event time in seconds since the epoch.
pub fn file_name(ts: f64) -> String {
    let day = DateTime::from_timestamp(ts.floor() as i64, 0).unwrap_or_default().format("%Y-%m-%d");
    format!("events-{day}.jsonl")
}

fn ends_session(t: EventType) -> bool {
    matches!(t, EventType::PrescriptionValidated | EventType::PrescriptionCancelled)
}

impl EventSink {
    pub fn new(dir: impl AsRef<Path>) -> io::Result<Self> {
        fs::create_dir_all(dir.as_ref())?;
        Ok(Self { dir: dir.as_ref().to_path_buf(), open: Mutex::new(None) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes the events in order; the file is synced to disk after an
    /// event that ends a session.
    pub fn append(&self, events: &[SessionEvent]) -> io::Result<()> {
        let mut guard = self.open.lock().unwrap_or_else(|e| e.into_inner());
        for ev in events {
            let name = file_name(ev.ts);
            if guard.as_ref().map(|(n, _)| n != &name).unwrap_or(true) {
                let f = OpenOptions::new().create(true).append(true).open(self.dir.join(&name))?;
                *guard = Some((name, f));
            }
            let (_, f) = guard.as_mut().expect("file opened above");
            writeln!(f, "{}", ev.to_line())?;
            if ends_session(ev.event_type) {
                f.flush()?;
                f.sync_data()?;
            }
        }
        if let Some((_, f)) = guard.as_mut() {
            f.flush()?;
        }
        Ok(())
    }

    /// Log files, oldest day first.
    pub fn files(&self) -> io::Result<Vec<PathBuf>> {
        let mut out: Vec<PathBuf> = fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("events-") && n.ends_with(".jsonl")))
            .collect();
        out.sort();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rxdialog::metrics::parse_event_log;
    use rxdialog::taxonomy::Side;

    fn ev(ts: f64, t: EventType) -> SessionEvent {
        SessionEvent { session_id: "a".into(), ts, side: Side::System, event_type: t, payload: String::new() }
    }

    #[test]
    fn days_split_files_and_lines_parse_back() {
        let dir = tempfile::tempdir().unwrap();
        let sink = EventSink::new(dir.path()).unwrap();
        assert_eq!(file_name(0.0), "events-1970-01-01.jsonl");
        sink.append(&[ev(86_399.0, EventType::SessionStart), ev(86_400.5, EventType::PrescriptionValidated)]).unwrap();
        let files = sink.files().unwrap();
        assert_eq!(files.len(), 2);
        for f in files {
            let log = parse_event_log(f).unwrap();
            assert!(log.rejects.is_empty());
            assert_eq!(log.sessions["a"].len(), 1);
        }
    }
}
