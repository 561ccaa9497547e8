//! Corpus ingestion, automated scoring, statistics, reports and the CLI.

pub mod cli;
pub mod corpus;
pub mod report;
pub mod scoring;
pub mod stats;

pub use corpus::{ingest_corpus, Corpus, Criterion, LikertAnnotation, TurnRecord};
pub use report::{render, ReportInput, TriggerRates};
pub use scoring::{auto_score, human_likeness, HumanLikenessScore};
pub use stats::{brown_forsythe, cohens_kappa, holm_correct, paired_t, wilcoxon_signed_rank};
