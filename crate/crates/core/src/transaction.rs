//! Transactions and the per-agent knowledge base.
//!
//! A [`TransactionLog`] is the trustor's local record of completed
//! interactions. Every entry carries a dense feature vector of the log's
//! declared dimensionality and a resolved binary [`Outcome`]; candidates that
//! have not happened yet are plain [`Transaction`]s with no outcome.

use std::collections::HashSet;
use std::fmt;
use std::io;

use thiserror::Error;

/// Binary rating of a completed transaction. There is no neutral state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Outcome {
    Successful,
    Unsuccessful,
}

impl Outcome {
    pub fn is_successful(self) -> bool {
        matches!(self, Outcome::Successful)
    }

    /// `1` for successful, `0` for unsuccessful (the CSV encoding).
    pub fn as_flag(self) -> u8 {
        match self {
            Outcome::Successful => 1,
            Outcome::Unsuccessful => 0,
        }
    }

    pub fn flipped(self) -> Outcome {
        match self {
            Outcome::Successful => Outcome::Unsuccessful,
            Outcome::Unsuccessful => Outcome::Successful,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Successful => f.write_str("successful"),
            Outcome::Unsuccessful => f.write_str("unsuccessful"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AgentId(pub String);

impl AgentId {
    pub fn new(id: impl Into<String>) -> Self {
        AgentId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        AgentId(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TxId(pub String);

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TxId {
    fn from(s: &str) -> Self {
        TxId(s.to_owned())
    }
}

/// One historical or candidate interaction.
///
/// `outcome` is `None` while the transaction is pending (a candidate being
/// assessed); logged entries always carry a resolved outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Transaction {
    pub id: TxId,
    pub counterparty: AgentId,
    pub context: String,
    pub features: Vec<f64>,
    pub outcome: Option<Outcome>,
}

impl Transaction {
    pub fn completed(
        id: impl Into<String>,
        counterparty: impl Into<String>,
        context: impl Into<String>,
        features: Vec<f64>,
        outcome: Outcome,
    ) -> Self {
        Transaction {
            id: TxId(id.into()),
            counterparty: AgentId(counterparty.into()),
            context: context.into(),
            features,
            outcome: Some(outcome),
        }
    }

    pub fn pending(
        id: impl Into<String>,
        counterparty: impl Into<String>,
        context: impl Into<String>,
        features: Vec<f64>,
    ) -> Self {
        Transaction {
            id: TxId(id.into()),
            counterparty: AgentId(counterparty.into()),
            context: context.into(),
            features,
            outcome: None,
        }
    }

    pub fn is_pending(&self) -> bool {
        self.outcome.is_none()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CoreError {
    #[error("transaction log is empty")]
    EmptyLog,
    #[error("expected {expected} features, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("duplicate transaction id `{0}`")]
    DuplicateId(TxId),
    #[error("transaction `{0}` has no resolved outcome")]
    Unresolved(TxId),
    #[error("transaction `{0}` has a non-finite feature value")]
    NonFinite(TxId),
}

/// An agent's local knowledge base of completed transactions.
#[derive(Debug, Clone)]
pub struct TransactionLog {
    owner: AgentId,
    dimensionality: usize,
    entries: Vec<Transaction>,
    ids: HashSet<TxId>,
}

impl TransactionLog {
    pub fn new(owner: AgentId, dimensionality: usize) -> Self {
        TransactionLog {
            owner,
            dimensionality,
            entries: Vec::new(),
            ids: HashSet::new(),
        }
    }

    pub fn from_entries(
        owner: AgentId,
        dimensionality: usize,
        entries: impl IntoIterator<Item = Transaction>,
    ) -> Result<Self, CoreError> {
        let mut log = TransactionLog::new(owner, dimensionality);
        for tx in entries {
            log.push(tx)?;
        }
        Ok(log)
    }

    pub fn owner(&self) -> &AgentId {
        &self.owner
    }

    pub fn dimensionality(&self) -> usize {
        self.dimensionality
    }

    pub fn entries(&self) -> &[Transaction] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains_id(&self, id: &TxId) -> bool {
        self.ids.contains(id)
    }

    /// Checks a transaction against the log's invariants without inserting it.
    pub fn validate(&self, tx: &Transaction) -> Result<(), CoreError> {
        if tx.features.len() != self.dimensionality {
            return Err(CoreError::DimensionMismatch {
                expected: self.dimensionality,
                actual: tx.features.len(),
            });
        }
        if tx.features.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite(tx.id.clone()));
        }
        if tx.outcome.is_none() {
            return Err(CoreError::Unresolved(tx.id.clone()));
        }
        if self.ids.contains(&tx.id) {
            return Err(CoreError::DuplicateId(tx.id.clone()));
        }
        Ok(())
    }

    /// Appends a completed transaction. Repeated counterparties are kept as
    /// separate entries; only transaction ids must be unique.
    pub fn push(&mut self, tx: Transaction) -> Result<(), CoreError> {
        self.validate(&tx)?;
        self.ids.insert(tx.id.clone());
        self.entries.push(tx);
        Ok(())
    }

    /// `(n_s, n_u)` over the whole log.
    pub fn class_counts(&self) -> (usize, usize) {
        class_counts(self.entries.iter())
    }

    /// `(n_s, n_u)` restricted to one context, without materializing a sub-log.
    pub fn context_counts(&self, context: &str) -> (usize, usize) {
        class_counts(self.in_context(context))
    }

    pub fn in_context<'a>(
        &'a self,
        context: &'a str,
    ) -> impl Iterator<Item = &'a Transaction> + 'a {
        self.entries.iter().filter(move |tx| tx.context == context)
    }

    /// Writes the log in the `id,counterparty,context,outcome,f1,...,fd` format.
    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), csv::Error> {
        crate::csvio::write_log(self, out)
    }
}

pub(crate) fn class_counts<'a>(txs: impl Iterator<Item = &'a Transaction>) -> (usize, usize) {
    txs.fold((0, 0), |(s, u), tx| match tx.outcome {
        Some(Outcome::Successful) => (s + 1, u),
        Some(Outcome::Unsuccessful) => (s, u + 1),
        None => (s, u),
    })
}

/// Splits the log into the successful and unsuccessful groups, preserving
/// entry order within each group.
pub fn partition(
    log: &TransactionLog,
) -> Result<(Vec<&Transaction>, Vec<&Transaction>), CoreError> {
    if log.is_empty() {
        return Err(CoreError::EmptyLog);
    }
    Ok(log
        .entries
        .iter()
        .partition(|tx| tx.outcome == Some(Outcome::Successful)))
}

/// Sub-log of the entries whose context equals `context` exactly.
pub fn filter_by_context(log: &TransactionLog, context: &str) -> TransactionLog {
    let entries: Vec<Transaction> = log.in_context(context).cloned().collect();
    let ids = entries.iter().map(|tx| tx.id.clone()).collect();
    TransactionLog {
        owner: log.owner.clone(),
        dimensionality: log.dimensionality,
        entries,
        ids,
    }
}
