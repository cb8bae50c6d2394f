//! Political-bias scoring for language-model responses.
//!
//! The pipeline runs in stages that communicate through files:
//!
//! 1. [`collect`] gathers responses from chat-completion endpoints.
//! 2. [`metrics`] scores each response for partisanship, topicality,
//!    sentiment, and objectivity using classifiers from [`backends`], and
//!    blends them into a composite bias score.
//! 3. [`aggregate`] summarizes scores per model.
//! 4. [`report`] renders tables, compass plots, and a markdown summary.

pub mod aggregate;
pub mod backends;
pub mod clock;
pub mod collect;
pub mod config;
pub mod corpus;
pub mod http;
pub mod metrics;
pub mod report;
pub mod text;

pub use backends::{BackendKind, BackendSet, BackendSpec, Role};
pub use corpus::{Category, Corpus, PromptRecord, Refusal, ResponseRecord};
pub use metrics::{PolarityPair, ScoreRecord, Weights};
