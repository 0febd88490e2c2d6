//! Energy and accuracy benchmarking of LLM code-completion endpoints across
//! prompting techniques and prompt configurations.
//!
//! The pipeline: [`corpus`] draws evaluation snippets and shot examples,
//! [`prompt`] renders chat prompts, [`client`] queries the endpoint inside
//! an [`energy`] measurement window, [`metrics`] scores answers, [`runner`]
//! persists every run and [`report`] summarizes a run directory.

pub mod client;
pub mod corpus;
pub mod energy;
pub mod metrics;
pub mod prompt;
pub mod report;
pub mod runner;

pub use client::{ClientError, CompletionResult, EndpointConfig, LlmClient};
pub use corpus::{CorpusSplit, Snippet};
pub use energy::{EnergyMeter, Measurement, MeterBackend, MeterConfig, PowerSample};
pub use metrics::{ScoredAnswer, ScoringConfig, SummaryCell};
pub use prompt::{ChatMessage, ChatPrompt, ConfigId, Pet, PetKind, PromptConfig, Role, TagSpacing};
pub use runner::{ExperimentPlan, RunManifest, RunOptions, RunRecord, RunStatus};
