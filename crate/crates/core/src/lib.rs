//! Grounded observer: a guardrails layer around a chat-completion model.
//!
//! Each candidate reply from the base model is turned into a
//! [`FeatureVector`](extract::FeatureVector), checked against declarative
//! [`OverlayRule`](config::OverlayRule)s, and passed through a rigidity-aware
//! [gate](gate::decide) that accepts it, accepts it while queueing advice for
//! the next turn, or rejects it with a forced directive and asks for a
//! regeneration.
//!
//! The crate is organised as:
//!
//! - [`config`] and [`conversation`]: domain types, config and rule files
//! - [`extract`]: pure feature extractors (brevity, tone, specificity,
//!   coherence, assistance)
//! - [`overlay`]: rule evaluation into ranked descriptors
//! - [`gate`]: the accept / implicit / reject decision and candidate ranking
//! - [`observer`]: feedback directive synthesis
//! - [`engine`]: the per-turn generate / score / gate / regenerate loop
//! - [`client`]: chat and embedding providers, including scripted mocks
//! - [`service`]: HTTP proxy with persistence and an SSE trace stream
//! - [`harness`]: corpus ingestion, automated scoring, statistics, reports
//!   and the CLI behind the `observer` binary

pub mod client;
pub mod config;
pub mod conversation;
pub mod engine;
pub mod extract;
pub mod gate;
pub mod harness;
pub mod observer;
pub mod overlay;
pub mod service;

pub use config::{EngineConfig, Feature, OverlayRule, RuleSet, ToneWeights};
pub use conversation::{Conversation, Speaker, Turn};
pub use engine::{Engine, EvaluationRecord, SessionState};
pub use extract::FeatureVector;
pub use gate::{DecisionKind, GateDecision, RngState};
pub use observer::{DirectiveKind, FeedbackDirective};
pub use overlay::Descriptor;
