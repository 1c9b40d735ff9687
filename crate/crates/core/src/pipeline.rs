//! End-to-end helpers: bundled resources, corpus construction and training
//! of both models with their held-out reports.

use serde::{Deserialize, Serialize};

use crate::corpusio::DialogueRecord;
use crate::datagen::grammar::DEFAULT_GRAMMAR;
use crate::datagen::{
    build_nlu_corpus, default_scenarios, default_seed_corpus, default_smalltalk, generate_dialogues, BuiltCorpus,
    CorpusConfig, DialogueGenError, DialogueSources, Grammar, GrammarError, ScenarioTemplate,
};
use crate::drugdb::DrugDatabase;
use crate::nlu::{evaluate_nlu, train_nlu, AnnotatedUtterance, NluError, NluModel, NluReport, NluTrainConfig};
use crate::policy::{evaluate_policy, ted_train, PolicyReport, TedConfig, TedError, TedModel, TrainingLog, World};
use crate::taxonomy::SlotSchema;

/// Everything the generators and trainers read.
#[derive(Debug, Clone)]
pub struct Resources {
    pub schema: SlotSchema,
    pub db: DrugDatabase,
    pub grammar: Grammar,
    pub seed_corpus: Vec<AnnotatedUtterance>,
    pub scenarios: Vec<ScenarioTemplate>,
    pub smalltalk: Vec<String>,
}

impl Resources {
    /// The files shipped under `data/`.
    pub fn builtin() -> Self {
        Self {
            schema: SlotSchema::builtin(),
            db: DrugDatabase::fixture(),
            grammar: Grammar::parse(DEFAULT_GRAMMAR).expect("bundled grammar parses"),
            seed_corpus: default_seed_corpus(),
            scenarios: default_scenarios(),
            smalltalk: default_smalltalk(),
        }
    }

    pub fn sources(&self) -> DialogueSources<'_> {
        DialogueSources { grammar: &self.grammar, db: &self.db, schema: &self.schema, smalltalk: &self.smalltalk }
    }

    pub fn world(&self) -> World<'_> {
        World { schema: &self.schema, db: &self.db, patient: None }
    }

    pub fn nlu_corpus(&self, cfg: &CorpusConfig) -> Result<BuiltCorpus, GrammarError> {
        build_nlu_corpus(&self.grammar, &self.seed_corpus, &self.db, &self.schema, &self.smalltalk, cfg)
    }

    pub fn dialogues(&self, n: usize, seed: u64) -> Result<Vec<DialogueRecord>, DialogueGenError> {
        generate_dialogues(&self.scenarios, &self.sources(), n, seed)
    }

    /// Slot labels scored by the NLU evaluation: every schema label.
    pub fn slot_labels(&self) -> Vec<String> {
        self.schema.label_names().map(str::to_string).collect()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NluPipelineConfig {
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub train: NluTrainConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Nlu(#[from] NluError),
    #[error(transparent)]
    Dialogues(#[from] DialogueGenError),
    #[error(transparent)]
    Ted(#[from] TedError),
}

/// Builds the corpus, trains on its train split and scores the test split.
pub fn train_nlu_pipeline(
    res: &Resources,
    cfg: &NluPipelineConfig,
) -> Result<(NluModel<f64>, NluReport, BuiltCorpus), PipelineError> {
    let corpus = res.nlu_corpus(&cfg.corpus)?;
    let (model, _) = train_nlu(&corpus.train, &res.db, &res.schema, &cfg.train)?;
    let report = evaluate_nlu(&model.crf, &model.intent, &corpus.test, &res.slot_labels());
    Ok((model, report, corpus))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyPipelineConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    #[serde(default)]
    pub ted: TedConfig,
}

impl Default for PolicyPipelineConfig {
    fn default() -> Self {
        Self { n_train: 200, n_test: 140, seed: 1, ted: TedConfig::default() }
    }
}

/// Generates train and test sessions from disjoint seeds, trains the policy
/// and scores it on the test sessions.
pub fn train_policy_pipeline(
    res: &Resources,
    cfg: &PolicyPipelineConfig,
) -> Result<(TedModel<f64>, TrainingLog, PolicyReport), PipelineError> {
    let train = res.dialogues(cfg.n_train, cfg.seed)?;
    let test = res.dialogues(cfg.n_test, cfg.seed.wrapping_add(1_000_003))?;
    let (model, log) = ted_train(&train, &res.world(), &cfg.ted)?;
    let report = evaluate_policy(&model, &test, &res.world())?;
    Ok((model, log, report))
}
