//! Session engine: understanding, tracking, policy and response rendering.

pub mod checker;
pub mod render;
pub mod session;

pub use checker::{check_prescription, check_record, daily_dose, CheckError, PatientStub, Warning, WarningKind};
pub use render::{frequency_text, summarize, CandidateView, SummaryError, UiPayload};
pub use session::{
    Engine, EngineConfig, EngineError, PolicyKind, Session, StepOutcome, SystemResponse, UserInput,
};
