//! Conversion between logged dialogue turns and tracker inputs, and replay
//! of logged sessions through the tracker.

use thiserror::Error;

use super::state::{apply_action, observe_user, Button, DialogueState, InputKind, TrackerError, UserObservation, World};
use crate::corpusio::{DialogueRecord, DialogueTurn, TurnSlot};
use crate::taxonomy::{PrescriptionFrame, SlotValue, INTENT_NONE};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("session `{session}` turn {turn}: {source}")]
    Tracker { session: String, turn: usize, source: TrackerError },
    #[error("session `{session}` turn {turn}: {message}")]
    BadTurn { session: String, turn: usize, message: String },
}

/// Tracker input of a logged user turn.
pub fn observation_from_turn(turn: &DialogueTurn, index: usize) -> Result<UserObservation, String> {
    if let Some(b) = &turn.button {
        let b = Button::parse(b).ok_or_else(|| format!("unknown button `{b}`"))?;
        let mut obs = UserObservation::button(b);
        obs.comment = turn.comment.clone();
        return Ok(obs);
    }
    if let Some(i) = turn.choice {
        return Ok(UserObservation::choice(i));
    }
    let mut delta = PrescriptionFrame::new();
    for s in &turn.slots {
        delta.add(&s.label, SlotValue::new(s.value.clone(), s.normalized.clone(), index));
    }
    let mut obs = UserObservation::utterance(turn.intent.clone().unwrap_or_else(|| INTENT_NONE.into()), delta);
    obs.refs = turn.refs.clone();
    Ok(obs)
}

/// Logged form of a tracker input.
pub fn turn_from_observation(obs: &UserObservation, act: &str, text: &str) -> DialogueTurn {
    let mut t = DialogueTurn::user(act);
    t.text = text.to_string();
    match &obs.kind {
        InputKind::Button(b) => {
            t.button = Some(b.as_str().into());
            t.comment = obs.comment.clone();
        }
        InputKind::Choice(i) => t.choice = Some(*i),
        InputKind::Utterance => {
            t.intent = Some(obs.intent.clone());
            t.refs = obs.refs.clone();
            for (label, values) in &obs.delta.slots {
                for v in values {
                    t.slots.push(TurnSlot { label: label.clone(), value: v.value.clone(), normalized: v.normalized.clone() });
                }
            }
        }
    }
    t
}

/// Runs a session through the tracker, calling `visit` with the state
/// before each system action and the action taken.
fn replay_with<F: FnMut(&DialogueState, &str)>(
    record: &DialogueRecord,
    world: &World,
    history: usize,
    mut visit: F,
) -> Result<(), ReplayError> {
    let mut state = DialogueState::new(history);
    for (i, turn) in record.turns.iter().enumerate() {
        let tracker = |source| ReplayError::Tracker { session: record.session_id.clone(), turn: i, source };
        if turn.is_user() {
            let obs = observation_from_turn(turn, i)
                .map_err(|message| ReplayError::BadTurn { session: record.session_id.clone(), turn: i, message })?;
            observe_user(&mut state, &obs).map_err(tracker)?;
        } else {
            visit(&state, &turn.act);
            apply_action(&mut state, &turn.act, world).map_err(tracker)?;
        }
    }
    Ok(())
}

/// Decision points of a session: active feature names, position and the
/// logged action.
pub fn replay_session(
    record: &DialogueRecord,
    world: &World,
    history: usize,
) -> Result<Vec<(Vec<String>, usize, String)>, ReplayError> {
    let mut out = Vec::new();
    replay_with(record, world, history, |s, a| {
        out.push((super::features::state_feature_names(s, world.schema), s.n_predictions, a.to_string()))
    })?;
    Ok(out)
}

/// States before each system action, paired with the logged action.
pub fn replay_states(
    record: &DialogueRecord,
    world: &World,
    history: usize,
) -> Result<Vec<(DialogueState, String)>, ReplayError> {
    let mut out = Vec::new();
    replay_with(record, world, history, |s, a| out.push((s.clone(), a.to_string())))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observation_round_trip() {
        let mut d = PrescriptionFrame::new();
        d.add("duration", SlotValue::new("7 days", "7 days", 2));
        let mut obs = UserObservation::utterance("negate", d);
        obs.refs = vec!["frequency".into()];
        let t = turn_from_observation(&obs, "negate", "not the frequency, 7 days");
        assert_eq!(observation_from_turn(&t, 2).unwrap(), obs);
        let b = UserObservation::button(Button::Restart);
        assert_eq!(observation_from_turn(&turn_from_observation(&b, "restart", ""), 0).unwrap(), b);
        let mut bad = DialogueTurn::user("x");
        bad.button = Some("explode".into());
        assert!(observation_from_turn(&bad, 0).is_err());
    }
}
