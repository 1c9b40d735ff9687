//! Dialogue state tracking and next-action policies.

pub mod actions;
pub mod features;
pub mod replay;
pub mod rule;
pub mod state;
pub mod ted;

pub use actions::{action_inventory, is_form_action, is_internal, is_terminal, request_slot, requested_slot, SystemAction};
pub use features::{featurize_state, state_feature_names, FeatureVocab, StateFeatures};
pub use replay::{observation_from_turn, replay_session, replay_states, turn_from_observation, ReplayError};
pub use rule::{is_legal, legal_actions, rule_policy};
pub use state::{
    apply_action, observe_user, slot_references, Awaiting, Button, DialogueState, InputKind, TrackerError,
    UserObservation, World,
};
pub use ted::{
    evaluate_policy, ted_loss, ted_select, ted_select_legal, ted_similarity, ted_train, Optimizer, PolicyReport,
    TedConfig, TedError, TedModel, TrainingLog,
};


/// Upper bound on system actions taken for one user input.
pub const MAX_ACTIONS_PER_TURN: usize = 4;

/// Applies actions from `select` until one of them is a reply (not an
/// internal lookup) or the per-turn budget is spent.
pub fn respond<F: FnMut(&DialogueState) -> SystemAction>(
    state: &mut DialogueState,
    world: &World,
    mut select: F,
) -> Result<Vec<SystemAction>, TrackerError> {
    let mut out = Vec::new();
    while out.len() < MAX_ACTIONS_PER_TURN && !state.terminal {
        let a = select(state);
        apply_action(state, &a.name, world)?;
        let reply = !is_internal(&a.name);
        out.push(a);
        if reply {
            break;
        }
    }
    Ok(out)
}
