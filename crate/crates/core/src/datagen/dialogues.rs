//! Scenario-driven dialogue sessions for policy training.
//!
//! A scenario is a script of user acts and expected system actions. User
//! turns are grammar expansions bound to one drug record per session; system
//! turns come from the rule policy and the tracker. A sampled session that
//! misses an expected action is discarded and sampled again.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::grammar::{expand_with_record, Grammar, GrammarError};
use crate::corpusio::{DialogueRecord, DialogueTurn};
use crate::drugdb::{disambiguate, normalize_text, DrugDatabase, DrugRecord};
use crate::nlu::{decode_spans, spans_to_frame, tokenize, tokens_from_words};
use crate::policy::{
    action_inventory, is_terminal, observe_user, respond, rule_policy, slot_references, turn_from_observation,
    Awaiting, Button, DialogueState, TrackerError, UserObservation, World,
};
use crate::taxonomy::{PrescriptionFrame, SlotSchema, INTENT_NONE};

pub const DEFAULT_SCENARIOS: &str = include_str!("../../../../data/scenarios.json");
pub const DEFAULT_SMALLTALK: &str = include_str!("../../../../data/smalltalk.txt");

const MAX_ATTEMPTS: usize = 60;
const MAX_SAMPLES: usize = 400;
const COMMENTS: [&str; 4] =
    ["check renal function first", "to be taken with a glass of water", "patient prefers generics", "see me if no improvement"];

#[derive(Debug, Error)]
pub enum DialogueGenError {
    #[error("scenario `{name}`: {reason}")]
    InvalidTemplate { name: String, reason: String },
    #[error("scenario `{name}`: no valid session after {attempts} attempts ({last})")]
    Exhausted { name: String, attempts: usize, last: String },
    #[error("need at least one scenario and one session")]
    Empty,
    #[error("scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
}

/// One step of a scenario script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum ScriptStep {
    /// A prescription utterance. `complete` forces all mandatory slots in
    /// (true) or at least one out (false); `ambiguous` draws a drug whose
    /// mention leaves several candidates.
    Prescribe {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        complete: Option<bool>,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        ambiguous: bool,
    },
    /// Answers requests for slots and candidate choices until none is pending.
    Answer,
    /// Confirms, again after a checker warning.
    Confirm,
    /// Deletes one of `slots` by name, or says no when empty.
    Negate {
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        slots: Vec<String>,
    },
    /// Restates one of `slots` with the correction intent.
    Correct { slots: Vec<String> },
    Comment,
    Restart,
    Cancel,
    OutOfDomain,
    /// The next system action starting with `action` since the last expectation.
    Expect { action: String },
}

impl ScriptStep {
    fn is_user(&self) -> bool {
        !matches!(self, Self::Expect { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTemplate {
    pub name: String,
    pub turn_script: Vec<ScriptStep>,
    /// Alternative scripts, drawn uniformly together with `turn_script`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub branching: Vec<Vec<ScriptStep>>,
}

impl ScenarioTemplate {
    /// Every script opens with a user act and ends expecting a terminal action.
    pub fn validate(&self) -> Result<(), DialogueGenError> {
        let bad = |reason: String| DialogueGenError::InvalidTemplate { name: self.name.clone(), reason };
        let inventory = action_inventory();
        for (k, script) in std::iter::once(&self.turn_script).chain(&self.branching).enumerate() {
            match script.first() {
                Some(s) if s.is_user() => {}
                _ => return Err(bad(format!("script {k} does not start with a user act"))),
            }
            match script.last() {
                Some(ScriptStep::Expect { action }) if is_terminal(action) => {}
                _ => return Err(bad(format!("script {k} does not end with a terminal action"))),
            }
            for s in script {
                if let ScriptStep::Expect { action } = s {
                    if !inventory.iter().any(|a| a.starts_with(action.as_str())) {
                        return Err(bad(format!("unknown action `{action}`")));
                    }
                }
                if let ScriptStep::Correct { slots } = s {
                    if slots.is_empty() {
                        return Err(bad("correction without slots".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn parse_scenarios(text: &str) -> Result<Vec<ScenarioTemplate>, DialogueGenError> {
    let templates: Vec<ScenarioTemplate> = serde_json::from_str(text)?;
    for t in &templates {
        t.validate()?;
    }
    Ok(templates)
}

pub fn load_scenarios(path: impl AsRef<Path>) -> Result<Vec<ScenarioTemplate>, DialogueGenError> {
    parse_scenarios(&fs::read_to_string(path)?)
}

pub fn default_scenarios() -> Vec<ScenarioTemplate> {
    parse_scenarios(DEFAULT_SCENARIOS).expect("shipped scenarios are valid")
}

pub fn default_smalltalk() -> Vec<String> {
    DEFAULT_SMALLTALK.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect()
}

/// Sources the generator draws from.
pub struct DialogueSources<'a> {
    pub grammar: &'a Grammar,
    pub db: &'a DrugDatabase,
    pub schema: &'a SlotSchema,
    pub smalltalk: &'a [String],
}

/// `n` sessions, scenarios taken in turn, each sampled from its own seed.
pub fn generate_dialogues(
    templates: &[ScenarioTemplate],
    src: &DialogueSources,
    n: usize,
    rng_seed: u64,
) -> Result<Vec<DialogueRecord>, DialogueGenError> {
    if templates.is_empty() || n == 0 {
        return Err(DialogueGenError::Empty);
    }
    for t in templates {
        t.validate()?;
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = &templates[i % templates.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64));
        let mut last = String::new();
        let mut done = None;
        for _ in 0..MAX_ATTEMPTS {
            let script = pick_script(t, &mut rng);
            match Session::run(script, src, &mut rng) {
                Ok(turns) => {
                    done = Some(turns);
                    break;
                }
                Err(e) => last = e,
            }
        }
        let turns = done.ok_or_else(|| DialogueGenError::Exhausted { name: t.name.clone(), attempts: MAX_ATTEMPTS, last })?;
        out.push(DialogueRecord { session_id: format!("{}-{i:05}", t.name), scenario: t.name.clone(), turns, failure_flag: false });
    }
    Ok(out)
}

fn pick_script<'t, R: Rng>(t: &'t ScenarioTemplate, rng: &mut R) -> &'t [ScriptStep] {
    let k = rng.gen_range(0..=t.branching.len());
    if k == 0 {
        &t.turn_script
    } else {
        &t.branching[k - 1]
    }
}

/// Records sharing a brand or INN with at least one other record.
fn ambiguous_records(db: &DrugDatabase) -> Vec<&DrugRecord> {
    db.records()
        .iter()
        .filter(|r| {
            db.records().iter().filter(|o| normalize_text(&o.brand_name) == normalize_text(&r.brand_name)).count() > 1
        })
        .collect()
}

struct Session<'a, 'r, R: Rng> {
    src: &'a DialogueSources<'a>,
    rng: &'r mut R,
    record: DrugRecord,
    state: DialogueState,
    turns: Vec<DialogueTurn>,
    system: Vec<String>,
}

type StepResult = Result<(), String>;

impl<'a, 'r, R: Rng> Session<'a, 'r, R> {
    fn run(script: &[ScriptStep], src: &'a DialogueSources<'a>, rng: &'r mut R) -> Result<Vec<DialogueTurn>, String> {
        let record = src.db.records().choose(rng).ok_or("empty database")?.clone();
        let mut s = Session { src, rng, record, state: DialogueState::default(), turns: Vec::new(), system: Vec::new() };
        let mut cursor = 0;
        for step in script {
            if s.state.terminal && step.is_user() {
                return Err(format!("dialogue ended before {step:?}"));
            }
            match step {
                ScriptStep::Expect { action } => {
                    let found = s.system[cursor..].iter().position(|a| a.starts_with(action.as_str()));
                    match found {
                        Some(k) => cursor += k + 1,
                        None => return Err(format!("expected `{action}`, system said {:?}", &s.system[cursor..])),
                    }
                }
                ScriptStep::Prescribe { complete, ambiguous } => s.prescribe(*complete, *ambiguous)?,
                ScriptStep::Answer => s.answer()?,
                ScriptStep::Confirm => s.confirm()?,
                ScriptStep::Negate { slots } => s.negate(slots)?,
                ScriptStep::Correct { slots } => s.correct(slots)?,
                ScriptStep::Comment => {
                    let mut obs = UserObservation::button(Button::Comment);
                    obs.comment = Some(COMMENTS.choose(s.rng).unwrap().to_string());
                    s.user(obs, "comment", "")?;
                }
                ScriptStep::Restart => s.user(UserObservation::button(Button::Restart), "restart", "")?,
                ScriptStep::Cancel => s.user(UserObservation::button(Button::Cancel), "cancel", "")?,
                ScriptStep::OutOfDomain => {
                    let text = s.src.smalltalk.choose(s.rng).ok_or("empty small-talk pool")?.clone();
                    s.user(UserObservation::utterance(INTENT_NONE, PrescriptionFrame::new()), "out_of_domain", &text)?;
                }
            }
        }
        if !s.state.terminal {
            return Err("script ended before a terminal action".into());
        }
        Ok(s.turns)
    }

    fn world(&self) -> World<'a> {
        World { schema: self.src.schema, db: self.src.db, patient: None }
    }

    /// Logs a user turn and the system turns it triggers.
    fn user(&mut self, obs: UserObservation, act: &str, text: &str) -> StepResult {
        let index = self.turns.len();
        let mut obs = obs;
        for values in obs.delta.slots.values_mut() {
            values.iter_mut().for_each(|v| v.turn = index);
        }
        self.turns.push(turn_from_observation(&obs, act, text));
        observe_user(&mut self.state, &obs).map_err(|e: TrackerError| e.to_string())?;
        let schema = self.src.schema;
        let world = self.world();
        let actions = respond(&mut self.state, &world, |st| rule_policy(st, schema)).map_err(|e| e.to_string())?;
        for a in actions {
            self.turns.push(DialogueTurn::system(a.name.clone()));
            self.system.push(a.name);
        }
        Ok(())
    }

    /// Expansion of `start` for the session record: text and frame fragment.
    fn utterance(&mut self, start: &str, target: Option<&str>) -> Result<(String, PrescriptionFrame), String> {
        let (words, labels) =
            expand_with_record(self.src.grammar, start, &self.record, target, self.rng).map_err(|e| e.to_string())?;
        let text = words.join(" ");
        let tokens = tokens_from_words(&words);
        let frame = spans_to_frame(&text, &tokens, &decode_spans(&labels), 0);
        Ok((text, frame))
    }

    fn prescribe(&mut self, complete: Option<bool>, ambiguous: bool) -> StepResult {
        if ambiguous {
            let pool = ambiguous_records(self.src.db);
            self.record = (*pool.choose(self.rng).ok_or("no ambiguous drug")?).clone();
        }
        let mandatory = self.src.schema.mandatory_slots.clone();
        for _ in 0..MAX_SAMPLES {
            let (text, delta) = self.utterance("PRESCRIPTION", None)?;
            let filled = |l: &str| {
                delta.is_filled(l) || self.src.schema.label(l).is_some_and(|d| d.satisfied_by.iter().any(|a| delta.is_filled(a)))
            };
            let all = mandatory.iter().all(|m| filled(m));
            if complete.is_some_and(|c| c != all) {
                continue;
            }
            if ambiguous && disambiguate(self.src.db, &delta).map(|o| o.candidates.len()).unwrap_or(0) < 2 {
                continue;
            }
            return self.user(UserObservation::utterance(self.src.grammar.intent_for("PRESCRIPTION"), delta), "prescribe", &text);
        }
        Err("no prescription matched the step constraints".into())
    }

    fn answer(&mut self) -> StepResult {
        for _ in 0..12 {
            match self.state.awaiting.clone() {
                Some(Awaiting::Choice) => {
                    let i = self.state.candidates.iter().position(|c| c.ucd_code == self.record.ucd_code).unwrap_or(0);
                    self.user(UserObservation::choice(i), "choose", "")?;
                }
                Some(Awaiting::Slot(slot)) => {
                    let start = match slot.as_str() {
                        "drug" | "inn" => "ANSWER_DRUG",
                        "dos-val" | "dos-uf" => "ANSWER_DOSE",
                        "frequency" | "rhythm" => "ANSWER_FREQUENCY",
                        "duration" => "ANSWER_DURATION",
                        _ => "COMPLEMENT",
                    };
                    let target = if self.src.grammar.reachable_labels(start).contains(&slot) { Some(slot.as_str()) } else { None };
                    let (text, delta) = self.utterance(start, target)?;
                    let intent = self.src.grammar.intent_for(start).to_string();
                    self.user(UserObservation::utterance(intent, delta), "inform", &text)?;
                }
                _ => return Ok(()),
            }
            if self.state.terminal {
                return Ok(());
            }
        }
        Err("answers did not settle the requests".into())
    }

    fn confirm(&mut self) -> StepResult {
        for _ in 0..3 {
            if self.rng.gen_bool(0.5) {
                self.user(UserObservation::button(Button::Confirm), "confirm", "")?;
            } else {
                let (text, _) = self.utterance("CONFIRMATION", None)?;
                let obs = UserObservation::utterance(self.src.grammar.intent_for("CONFIRMATION"), PrescriptionFrame::new());
                self.user(obs, "confirm", &text)?;
            }
            if self.state.terminal || self.state.last_action.as_deref() != Some(crate::policy::actions::WARN_CHECKER) {
                return Ok(());
            }
        }
        Ok(())
    }

    fn negate(&mut self, slots: &[String]) -> StepResult {
        if slots.is_empty() {
            let (text, _) = self.utterance("NEGATION", None)?;
            let obs = UserObservation::utterance(self.src.grammar.intent_for("NEGATION"), PrescriptionFrame::new());
            return self.user(obs, "negate", &text);
        }
        let slot = slots.choose(self.rng).unwrap().clone();
        for _ in 0..MAX_SAMPLES {
            let (text, delta) = self.utterance("DELETION", None)?;
            let refs = slot_references(&tokenize(&text));
            if !refs.contains(&slot) {
                continue;
            }
            let mut obs = UserObservation::utterance(self.src.grammar.intent_for("DELETION"), delta);
            obs.refs = refs;
            return self.user(obs, "negate", &text);
        }
        Err(format!("no deletion phrase names `{slot}`"))
    }

    fn correct(&mut self, slots: &[String]) -> StepResult {
        let slot = slots.choose(self.rng).unwrap().clone();
        let (text, delta) = self.utterance("CORRECTION", Some(&slot))?;
        self.user(UserObservation::utterance(self.src.grammar.intent_for("CORRECTION"), delta), "correct", &text)
    }
}
