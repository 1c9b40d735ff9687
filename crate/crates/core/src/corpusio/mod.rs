//! Corpus files: CoNLL-style slot annotation and JSON-lines dialogue sessions.

pub mod conll;
pub mod dialogues;

pub use conll::{
    export_conll, import_conll, import_conll_with, parse_conll, write_conll, ColumnLayout, ConllDocument,
    ConllError, TagStyle,
};
pub use dialogues::{
    export_dialogues, import_dialogues, read_dialogues, write_dialogues, DialogueError, DialogueRecord,
    DialogueTurn, TurnSlot,
};
