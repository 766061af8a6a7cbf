//! Trust assessment of pending transactions from an agent's own history.
//!
//! An agent keeps a log of past transactions described by numeric features
//! and labelled successful or unsuccessful. For a new candidate it trains a
//! Fisher linear discriminant and an ID3 decision tree on the matching
//! context, and reports the more confident verdict. When the local history
//! is too thin, it asks trusted peers for their discriminant models over a
//! knowledge-sharing overlay and combines them by trust weight.
//!
//! The [`sim`] module drives a synthetic population to compare these
//! models with simple baselines, and [`cli`] exposes everything on the
//! command line.

pub mod baselines;
pub mod cli;
pub mod csvio;
pub mod dtree;
pub mod engine;
pub mod lda;
pub mod lkson;
pub mod prediction;
pub mod sim;
pub mod transaction;

pub use engine::{
    Assessment, Engine, EngineConfig, EngineError, KnowledgeOverlay, KnowledgeSource,
    SharedKnowledge,
};
pub use prediction::{Algorithm, Prediction};
pub use transaction::{AgentId, CoreError, Outcome, Transaction, TransactionLog, TxId};
