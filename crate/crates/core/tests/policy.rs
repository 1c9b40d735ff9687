mod common;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rxdialog::policy::{
    apply_action, is_legal, legal_actions, observe_user, replay_states, rule_policy, ted_select_legal, Button,
    DialogueState, UserObservation,
};
use rxdialog::taxonomy::{PrescriptionFrame, SlotValue};

#[test]
fn drug_mention_triggers_a_lookup() {
    let res = common::resources();
    let ted = common::ted();
    let mut delta = PrescriptionFrame::new();
    delta.add("inn", SlotValue::new("Ofloxacine", "ofloxacine", 0));
    delta.add("d-dos-val", SlotValue::new("200", "200", 0));
    delta.add("d-dos-up", SlotValue::new("mg", "mg", 0));
    let mut s = DialogueState::new(10);
    observe_user(&mut s, &UserObservation::utterance("medical_prescription", delta)).unwrap();
    assert_eq!(ted_select_legal(ted, &s, &res.schema).name, "action_check_drug");
    assert_eq!(rule_policy(&s, &res.schema).name, "action_check_drug");
}

fn random_observation(rng: &mut ChaCha8Rng) -> UserObservation {
    let mut d = PrescriptionFrame::new();
    let pick = |rng: &mut ChaCha8Rng| -> (&'static str, &'static str) {
        *[("inn", "ofloxacine"), ("drug", "doliprane"), ("duration", "7 days"), ("frequency", "2/day"), ("dos-val", "1")]
            .choose(rng)
            .unwrap()
    };
    match rng.gen_range(0..8) {
        0 => UserObservation::button(*[Button::Confirm, Button::Cancel, Button::Restart, Button::Comment].choose(rng).unwrap()),
        1 => UserObservation::choice(rng.gen_range(0..3)),
        k => {
            for _ in 0..rng.gen_range(0..3) {
                let (l, v) = pick(rng);
                d.add(l, SlotValue::new(v, v, 0));
            }
            let intent = ["medical_prescription", "confirm", "negate", "correct", "none"][k % 5];
            UserObservation::utterance(intent, d)
        }
    }
}

/// The learned policy under the mask only ever picks legal actions, on
/// logged states and on states reached by random inputs.
#[test]
fn masked_selection_is_always_legal() {
    let res = common::resources();
    let world = res.world();
    let ted = common::ted();
    let mut checked = 0;
    for r in res.dialogues(100, 77).unwrap() {
        for (s, _) in replay_states(&r, &world, 10).unwrap() {
            let a = ted_select_legal(ted, &s, &res.schema);
            assert!(is_legal(&s, &a.name, &res.schema), "{}: {}", r.session_id, a.name);
            checked += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = DialogueState::new(10);
    while checked < 10_000 {
        if s.terminal {
            s = DialogueState::new(10);
        }
        observe_user(&mut s, &random_observation(&mut rng)).unwrap();
        for _ in 0..4 {
            assert!(!legal_actions(&s, &res.schema).is_empty());
            let a = ted_select_legal(ted, &s, &res.schema);
            assert!(is_legal(&s, &a.name, &res.schema), "{}", a.name);
            checked += 1;
            apply_action(&mut s, &a.name, &world).unwrap();
            if s.terminal || !rxdialog::policy::is_internal(&a.name) {
                break;
            }
        }
    }
}
