//! Dialogue-driven drug prescription: slot schema, drug database,
//! utterance understanding, synthetic data, dialogue policies, the session
//! engine, corpus I/O and evaluation metrics.

pub mod corpusio;
pub mod datagen;
pub mod drugdb;
pub mod engine;
pub mod metrics;
pub mod nlu;
pub mod pipeline;
pub mod policy;
pub mod scalar;
pub mod taxonomy;

pub use scalar::Scalar;

pub type Crf = nlu::CrfModel<f64>;
pub type IntentClassifier = nlu::IntentModel<f64>;
pub type Nlu = nlu::NluModel<f64>;
pub type Ted = policy::TedModel<f64>;
