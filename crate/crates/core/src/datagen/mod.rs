//! Synthetic training data: grammar expansion, class balancing and
//! scenario-driven dialogue sessions.

pub mod balance;
pub mod corpus;
pub mod dialogues;
pub mod grammar;

pub use corpus::{build_nlu_corpus, default_seed_corpus, smalltalk_utterance, BuiltCorpus, CorpusConfig, DEFAULT_SEED_CONLL};
pub use balance::{generate_balanced, imbalance_ratio, slot_distribution, BalanceOutcome, BalanceTarget};
pub use grammar::{
    expand, expand_targeted, expand_with_record, load_grammar, Grammar, GrammarError, MembershipOracle,
    TerminalTriplet, Tier,
};
pub use dialogues::{
    default_scenarios, default_smalltalk, generate_dialogues, load_scenarios, parse_scenarios, DialogueGenError,
    DialogueSources, ScenarioTemplate, ScriptStep,
};
