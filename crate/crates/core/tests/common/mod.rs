//! Models shared by the tests of one binary, trained on first use.

#![allow(dead_code)]

use std::sync::OnceLock;

use rxdialog::nlu::NluModel;
use rxdialog::pipeline::{train_nlu_pipeline, train_policy_pipeline, NluPipelineConfig, PolicyPipelineConfig, Resources};
use rxdialog::policy::TedModel;

pub fn resources() -> &'static Resources {
    static R: OnceLock<Resources> = OnceLock::new();
    R.get_or_init(Resources::builtin)
}

pub fn nlu() -> &'static NluModel<f64> {
    static M: OnceLock<NluModel<f64>> = OnceLock::new();
    M.get_or_init(|| train_nlu_pipeline(resources(), &NluPipelineConfig::default()).unwrap().0)
}

pub fn ted() -> &'static TedModel<f64> {
    static M: OnceLock<TedModel<f64>> = OnceLock::new();
    M.get_or_init(|| train_policy_pipeline(resources(), &PolicyPipelineConfig::default()).unwrap().0)
}
