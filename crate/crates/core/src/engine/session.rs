//! The dialogue engine: one call per user input, returning the reply and
//! the events to log.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::checker::PatientStub;
use super::render::{render, UiPayload};
use crate::drugdb::DrugDatabase;
use crate::metrics::{EventType, SessionEvent};
use crate::nlu::NluModel;
use crate::policy::actions::*;
use crate::policy::{
    apply_action, observe_user, rule_policy, slot_references, ted_select_legal, Awaiting, Button, DialogueState,
    SystemAction, TedModel, TrackerError, UserObservation, World, MAX_ACTIONS_PER_TURN,
};
use crate::policy::state::DEFAULT_HISTORY;
use crate::taxonomy::{SlotSchema, Side, INTENT_NEGATE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UserInput {
    Utterance { text: String },
    Choice { index: usize },
    Button {
        button: Button,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        comment: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemResponse {
    /// The reply action, the last one taken.
    pub action: String,
    /// Every action taken for this input, lookups included.
    pub actions: Vec<String>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ui_payload: Option<UiPayload>,
    pub session_terminal: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    #[default]
    Rule,
    Ted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EngineConfig {
    pub policy: PolicyKind,
    pub history: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self { policy: PolicyKind::Rule, history: DEFAULT_HISTORY }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub state: DialogueState,
    pub patient: PatientStub,
    pub participant: Option<String>,
    pub turn_index: usize,
    pub last_ts: f64,
}

impl Session {
    pub fn is_terminal(&self) -> bool {
        self.state.terminal
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub response: SystemResponse,
    pub events: Vec<SessionEvent>,
}

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("the drug database is empty")]
    EmptyDatabase,
    #[error("a learned policy was requested but no model was given")]
    NoPolicyModel,
    #[error("session `{0}` is over")]
    Terminal(String),
    #[error("no candidate list is open")]
    NoChoiceExpected,
    #[error("choice {index} is out of range (0..{n})")]
    ChoiceOutOfRange { index: usize, n: usize },
    #[error("empty utterance")]
    EmptyUtterance,
    #[error(transparent)]
    Tracker(#[from] TrackerError),
}

pub struct Engine {
    pub schema: SlotSchema,
    pub db: DrugDatabase,
    pub nlu: NluModel<f64>,
    pub ted: Option<TedModel<f64>>,
    pub config: EngineConfig,
}

fn event(session: &Session, ts: f64, side: Side, event_type: EventType, payload: impl Into<String>) -> SessionEvent {
    SessionEvent { session_id: session.id.clone(), ts, side, event_type, payload: payload.into() }
}

impl Engine {
    pub fn new(
        schema: SlotSchema,
        db: DrugDatabase,
        nlu: NluModel<f64>,
        ted: Option<TedModel<f64>>,
        config: EngineConfig,
    ) -> Result<Self, EngineError> {
        if db.is_empty() {
            return Err(EngineError::EmptyDatabase);
        }
        if config.policy == PolicyKind::Ted && ted.is_none() {
            return Err(EngineError::NoPolicyModel);
        }
        Ok(Self { schema, db, nlu, ted, config })
    }

    pub fn start_session(
        &self,
        id: impl Into<String>,
        participant: Option<String>,
        patient: PatientStub,
        now: f64,
    ) -> (Session, SessionEvent) {
        let s = Session {
            id: id.into(),
            state: DialogueState::new(self.config.history),
            patient,
            participant,
            turn_index: 0,
            last_ts: now,
        };
        let ev = event(&s, now, Side::System, EventType::SessionStart, s.participant.clone().unwrap_or_default());
        (s, ev)
    }

    fn observe(&self, session: &Session, input: &UserInput) -> Result<(UserObservation, EventType, String), EngineError> {
        Ok(match input {
            UserInput::Utterance { text } => {
                if text.trim().is_empty() {
                    return Err(EngineError::EmptyUtterance);
                }
                let mut r = self.nlu.parse(&self.schema, text);
                for v in r.frame_delta.slots.values_mut().flatten() {
                    v.turn = session.turn_index;
                }
                let refs = if r.intent == INTENT_NEGATE { slot_references(&r.tokens) } else { Vec::new() };
                let mut obs = UserObservation::utterance(r.intent, r.frame_delta);
                obs.refs = refs;
                (obs, EventType::Utterance, text.clone())
            }
            UserInput::Choice { index } => {
                if session.state.awaiting != Some(Awaiting::Choice) {
                    return Err(EngineError::NoChoiceExpected);
                }
                let n = session.state.candidates.len();
                if *index >= n {
                    return Err(EngineError::ChoiceOutOfRange { index: *index, n });
                }
                (UserObservation::choice(*index), EventType::Choice, index.to_string())
            }
            UserInput::Button { button, comment } => {
                let mut obs = UserObservation::button(*button);
                obs.comment = comment.clone();
                let payload = match comment {
                    Some(c) => format!("{}:{c}", button.as_str()),
                    None => button.as_str().to_string(),
                };
                (obs, EventType::Button, payload)
            }
        })
    }

    fn select(&self, state: &DialogueState) -> SystemAction {
        match (self.config.policy, &self.ted) {
            (PolicyKind::Ted, Some(m)) => ted_select_legal(m, state, &self.schema),
            _ => rule_policy(state, &self.schema),
        }
    }

    /// Processes one user input at time `now` (seconds). Timestamps earlier
    /// than the previous event are clamped to it.
    pub fn step_at(&self, session: &mut Session, input: &UserInput, now: f64) -> Result<StepOutcome, EngineError> {
        if session.is_terminal() {
            return Err(EngineError::Terminal(session.id.clone()));
        }
        let (obs, user_event, payload) = self.observe(session, input)?;
        let ts = now.max(session.last_ts);
        session.last_ts = ts;
        let mut events = vec![event(session, ts, Side::User, user_event, payload)];

        let world = World { schema: &self.schema, db: &self.db, patient: Some(&session.patient) };
        let mut announced = session.state.frame.resolved_ucd.clone();
        observe_user(&mut session.state, &obs)?;
        let mut taken: Vec<SystemAction> = Vec::new();
        loop {
            let resolved = &session.state.frame.resolved_ucd;
            if resolved.is_some() && *resolved != announced {
                announced = resolved.clone();
                events.push(event(session, ts, Side::System, EventType::DrugResolved, announced.clone().unwrap()));
            }
            if session.state.terminal
                || taken.len() >= MAX_ACTIONS_PER_TURN
                || taken.last().is_some_and(|a| !is_internal(&a.name))
            {
                break;
            }
            let a = self.select(&session.state);
            apply_action(&mut session.state, &a.name, &world)?;
            events.push(event(session, ts, Side::System, EventType::SystemAction, a.name.clone()));
            let extra = match a.name.as_str() {
                UTTER_ASK_REPHRASE | UTTER_OUT_OF_SCOPE => Some((EventType::SystemError, a.name.clone())),
                ACK_VALIDATED => Some((
                    EventType::PrescriptionValidated,
                    session.state.frame.resolved_ucd.clone().unwrap_or_default(),
                )),
                ACK_CANCELLED => Some((EventType::PrescriptionCancelled, String::new())),
                ACK_RESTART => Some((EventType::RestartRequested, String::new())),
                _ => None,
            };
            if let Some((t, p)) = extra {
                events.push(event(session, ts, Side::System, t, p));
            }
            taken.push(a);
        }
        session.turn_index += 1;
        let action = taken.last().map(|a| a.name.clone()).unwrap_or_else(|| UTTER_ASK_REPHRASE.to_string());
        let (text, ui_payload) = render(&action, &session.state, &self.db, &self.schema);
        let response = SystemResponse {
            action,
            actions: taken.into_iter().map(|a| a.name).collect(),
            text,
            ui_payload,
            session_terminal: session.state.terminal,
        };
        Ok(StepOutcome { response, events })
    }
}
