//! Subjecthood probing over dependency treebanks.
//!
//! The pipeline labels noun arguments of verbs as A, O, S or passive S
//! ([`role`]), pairs them with per-layer contextual embeddings
//! ([`store`]), trains small A-vs-O probes ([`probe`]) and measures how those
//! probes treat intransitive and passive subjects within a language and
//! across languages ([`experiment`], [`analysis`]). [`synth`] generates
//! languages with a known alignment for end-to-end checks.

pub mod analysis;
pub mod cli;
pub mod conllu;
pub mod experiment;
pub mod instances;
pub mod lang;
pub mod probe;
pub mod role;
pub mod seed;
pub mod store;
pub mod synth;

pub use conllu::{parse_document, Sentence, TokenRow};
pub use lang::Alignment;
pub use probe::{ProbeModel, TrainConfig};
pub use role::{Role, RoleInstance};
pub use store::{EmbeddingStore, StoreHeader};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
