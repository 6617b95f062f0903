//! Core of a screenshot-driven recommender.
//!
//! Browsing sessions carry viewport screenshots. A multimodal backend turns
//! batches of screenshots into a [`KeywordSummary`], which is decomposed into a
//! [`ConstraintSet`] (price band, color). Recommendations come from two routes:
//!
//! * constrained expected-revenue maximization under a multinomial-logit
//!   choice model ([`choice`]), and
//! * re-ranking a session model's top-k predictions by cosine similarity
//!   between the summary embedding and item attribute embeddings ([`rerank`]).
//!
//! [`eval`] measures Recall@k / MRR@k for the session models with and without
//! re-ranking.
//!
//! Data-parallel loops (subset enumeration, per-session evaluation, attribute
//! embedding) run on rayon when the `parallel` feature is enabled and fall back
//! to sequential iteration otherwise. See [`exec::Exec`].

pub mod catalog;
pub mod choice;
pub mod constraints;
pub mod digest;
pub mod eval;
pub mod exec;
pub mod models;
pub mod money;
pub mod rerank;
pub mod screenshots;
pub mod session;
pub mod summarizer;

pub use catalog::{CatalogError, CatalogSnapshot, CatalogStore, Item};
pub use choice::{Assortment, ChoiceError, FeasibleSpec, MnlParameters};
pub use constraints::{ConstraintSet, ValidationReport};
pub use eval::{EvalConfig, EvalReport};
pub use exec::Exec;
pub use models::{ModelKind, RankedPredictions, SessionModel};
pub use money::Money;
pub use rerank::{EmbeddingProvider, EmbeddingVector, HashEmbedder};
pub use session::{InteractionEvent, ScreenshotKind, ScreenshotRef, Session};
pub use summarizer::{KeywordSummary, PromptSpec, SummarizerBackend};
