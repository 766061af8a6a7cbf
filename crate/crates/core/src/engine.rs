//! Trust calculation engine.
//!
//! Runs every enabled classifier on the trustor's history for the
//! candidate's context and returns the most confident recommendation. When
//! the history holds fewer than `min_class_count` entries of either class,
//! the engine asks the knowledge-sharing overlay instead.

use thiserror::Error;

use crate::dtree::{self, DtreeError};
use crate::lda::{self, LdaError, LdaOptions};
use crate::lkson::{self, KnowledgeTuple, LksonError};
use crate::prediction::{Algorithm, Prediction};
use crate::transaction::{CoreError, Transaction, TransactionLog};

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("insufficient knowledge: {successful} successful / {unsuccessful} unsuccessful in context `{context}`, need {required} of each")]
    InsufficientKnowledge {
        context: String,
        successful: usize,
        unsuccessful: usize,
        required: usize,
    },
    #[error("candidate `{0}` already has an outcome")]
    NotPending(String),
    #[error("candidate has {actual} features, log has {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("no algorithm enabled")]
    NoAlgorithm,
    #[error("overlay: {0}")]
    Overlay(#[from] LksonError),
    #[error(transparent)]
    Tree(#[from] DtreeError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    pub min_class_count: usize,
    pub max_bins: usize,
    pub lda: LdaOptions,
    pub use_lda: bool,
    pub use_tree: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            min_class_count: 3,
            max_bins: dtree::DEFAULT_MAX_BINS,
            lda: LdaOptions::default(),
            use_lda: true,
            use_tree: true,
        }
    }
}

impl EngineConfig {
    pub fn lda_only() -> Self {
        EngineConfig {
            use_tree: false,
            ..Self::default()
        }
    }

    pub fn tree_only() -> Self {
        EngineConfig {
            use_lda: false,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnowledgeSource {
    Local,
    Overlay,
}

/// A provider's answer to a knowledge request, with the requester's trust in it.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedKnowledge {
    pub tuple: KnowledgeTuple,
    pub trust: f64,
}

/// Access to third-party knowledge for one requester.
pub trait KnowledgeOverlay {
    /// Tuples from every provider that can answer for `context`.
    fn request(&self, context: &str, dimensionality: usize) -> Vec<SharedKnowledge>;
}

impl KnowledgeOverlay for Vec<SharedKnowledge> {
    fn request(&self, context: &str, dimensionality: usize) -> Vec<SharedKnowledge> {
        self.iter()
            .filter(|k| k.tuple.context == context && k.tuple.dimensionality() == dimensionality)
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assessment {
    pub predictions: Vec<Prediction>,
    pub chosen: Prediction,
    pub source: KnowledgeSource,
    /// Local `(n_s, n_u)` in the candidate's context.
    pub class_counts: (usize, usize),
    /// Tuples that were combined, when the overlay was used.
    pub consulted: Vec<KnowledgeTuple>,
}

/// Highest confidence wins; earlier entries win ties.
fn select(predictions: &[Prediction]) -> Prediction {
    let mut best = predictions[0];
    for p in &predictions[1..] {
        if p.confidence > best.confidence {
            best = *p;
        }
    }
    best
}

#[derive(Debug, Clone, Default)]
pub struct Engine {
    pub config: EngineConfig,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Self {
        Engine { config }
    }

    /// Assesses a pending candidate. Never mutates the log.
    pub fn assess(
        &self,
        log: &TransactionLog,
        candidate: &Transaction,
        overlay: Option<&dyn KnowledgeOverlay>,
    ) -> Result<Assessment, EngineError> {
        if !candidate.is_pending() {
            return Err(EngineError::NotPending(candidate.id.0.clone()));
        }
        let d = log.dimensionality();
        if candidate.features.len() != d {
            return Err(EngineError::DimensionMismatch {
                expected: d,
                actual: candidate.features.len(),
            });
        }
        if !self.config.use_lda && !self.config.use_tree {
            return Err(EngineError::NoAlgorithm);
        }

        let entries: Vec<&Transaction> = log.in_context(&candidate.context).collect();
        let counts = crate::transaction::class_counts(entries.iter().copied());
        let required = self.config.min_class_count;
        if counts.0 >= required && counts.1 >= required {
            let predictions = self.local_predictions(&entries, d, &candidate.features)?;
            return Ok(Assessment {
                chosen: select(&predictions),
                predictions,
                source: KnowledgeSource::Local,
                class_counts: counts,
                consulted: Vec::new(),
            });
        }

        let Some(overlay) = overlay else {
            return Err(EngineError::InsufficientKnowledge {
                context: candidate.context.clone(),
                successful: counts.0,
                unsuccessful: counts.1,
                required,
            });
        };
        let responses = overlay.request(&candidate.context, d);
        let (tuples, scores): (Vec<KnowledgeTuple>, Vec<f64>) =
            responses.into_iter().map(|k| (k.tuple, k.trust)).unzip();
        let combined = lkson::combine(&tuples, &scores)?;
        let prediction = lkson::classify_with_combined(&combined, &candidate.features)?;
        Ok(Assessment {
            predictions: vec![prediction],
            chosen: prediction,
            source: KnowledgeSource::Overlay,
            class_counts: counts,
            consulted: tuples,
        })
    }

    fn local_predictions(
        &self,
        entries: &[&Transaction],
        d: usize,
        p: &[f64],
    ) -> Result<Vec<Prediction>, EngineError> {
        let mut predictions = Vec::with_capacity(2);
        if self.config.use_lda {
            let options = LdaOptions {
                min_class_count: self.config.min_class_count,
                ..self.config.lda
            };
            let prediction = match lda::train_entries(entries.iter().copied(), &options) {
                Ok(model) => match model.classify(p) {
                    Ok(discriminant) => discriminant.prediction(),
                    Err(LdaError::DimensionMismatch { expected, actual }) => {
                        return Err(EngineError::DimensionMismatch { expected, actual })
                    }
                    Err(_) => Prediction::uninformative(Algorithm::Lda),
                },
                // Coincident centroids or an unsolvable scatter: no direction to project on.
                Err(_) => Prediction::uninformative(Algorithm::Lda),
            };
            predictions.push(prediction);
        }
        if self.config.use_tree {
            let tree = dtree::train_entries(entries, d, self.config.max_bins)?;
            predictions.push(tree.classify(p)?.prediction());
        }
        Ok(predictions)
    }
}

/// Appends a completed transaction so later assessments see it.
pub fn record_outcome(log: &mut TransactionLog, completed: Transaction) -> Result<(), CoreError> {
    log.push(completed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transaction::{AgentId, Outcome};
    use nalgebra::DVector;

    fn separable_log() -> TransactionLog {
        let mut log = TransactionLog::new(AgentId::from("me"), 2);
        let pts = [
            ([0.0, 0.1], Outcome::Successful),
            ([0.1, 0.0], Outcome::Successful),
            ([0.05, 0.05], Outcome::Successful),
            ([1.0, 0.9], Outcome::Unsuccessful),
            ([0.9, 1.0], Outcome::Unsuccessful),
            ([0.95, 1.05], Outcome::Unsuccessful),
        ];
        for (i, (f, o)) in pts.iter().enumerate() {
            log.push(Transaction::completed(
                format!("t{i}"),
                "s",
                "book",
                f.to_vec(),
                *o,
            ))
            .unwrap();
        }
        log
    }

    fn candidate(f: &[f64]) -> Transaction {
        Transaction::pending("new", "stranger", "book", f.to_vec())
    }

    #[test]
    fn local_assessment_picks_most_confident() {
        let log = separable_log();
        let a = Engine::default()
            .assess(&log, &candidate(&[0.05, 0.08]), None)
            .unwrap();
        assert_eq!(a.source, KnowledgeSource::Local);
        assert_eq!(a.class_counts, (3, 3));
        assert_eq!(a.predictions.len(), 2);
        assert_eq!(a.predictions[0].algorithm, Algorithm::Lda);
        assert_eq!(a.predictions[1].algorithm, Algorithm::DecisionTree);
        let max = a
            .predictions
            .iter()
            .map(|p| p.confidence)
            .fold(0.0, f64::max);
        assert_eq!(a.chosen.confidence, max);
        assert_eq!(a.chosen.label, Outcome::Successful);
    }

    #[test]
    fn confidence_tie_goes_to_lda() {
        let preds = [
            Prediction::new(Outcome::Successful, 1.0, Algorithm::Lda),
            Prediction::new(Outcome::Unsuccessful, 1.0, Algorithm::DecisionTree),
        ];
        assert_eq!(select(&preds).algorithm, Algorithm::Lda);
    }

    #[test]
    fn degenerate_lda_is_uninformative() {
        let mut log = TransactionLog::new(AgentId::from("me"), 1);
        for i in 0..6 {
            let o = if i % 2 == 0 {
                Outcome::Successful
            } else {
                Outcome::Unsuccessful
            };
            log.push(Transaction::completed(
                format!("t{i}"),
                "s",
                "book",
                vec![1.0],
                o,
            ))
            .unwrap();
        }
        let a = Engine::default()
            .assess(&log, &candidate(&[1.0]), None)
            .unwrap();
        assert_eq!(a.chosen.label, Outcome::Unsuccessful);
        assert_eq!(a.chosen.confidence, 0.0);
        assert!(a.predictions.iter().all(|p| p.confidence == 0.0));
    }

    #[test]
    fn falls_back_to_overlay() {
        let log = TransactionLog::new(AgentId::from("me"), 2);
        let overlay = vec![SharedKnowledge {
            tuple: KnowledgeTuple {
                provider: "p".into(),
                context: "book".into(),
                direction: DVector::from_vec(vec![1.0, 0.0]),
                centroid_successful: DVector::from_vec(vec![0.0, 0.0]),
                centroid_unsuccessful: DVector::from_vec(vec![1.0, 0.0]),
            },
            trust: 0.5,
        }];
        let a = Engine::default()
            .assess(&log, &candidate(&[0.1, 0.0]), Some(&overlay))
            .unwrap();
        assert_eq!(a.source, KnowledgeSource::Overlay);
        assert_eq!(a.chosen.label, Outcome::Successful);
        assert_eq!(a.consulted.len(), 1);

        let empty: Vec<SharedKnowledge> = Vec::new();
        assert_eq!(
            Engine::default()
                .assess(&log, &candidate(&[0.1, 0.0]), Some(&empty))
                .unwrap_err(),
            EngineError::Overlay(LksonError::EmptyTupleSet)
        );
    }

    #[test]
    fn insufficient_without_overlay() {
        let mut log = TransactionLog::new(AgentId::from("me"), 1);
        for i in 0..12 {
            let o = if i < 2 {
                Outcome::Successful
            } else {
                Outcome::Unsuccessful
            };
            log.push(Transaction::completed(
                format!("t{i}"),
                "s",
                "book",
                vec![i as f64],
                o,
            ))
            .unwrap();
        }
        assert!(matches!(
            Engine::default().assess(&log, &candidate(&[1.0]), None),
            Err(EngineError::InsufficientKnowledge {
                successful: 2,
                unsuccessful: 10,
                ..
            })
        ));
    }

    #[test]
    fn other_contexts_do_not_count() {
        let log = separable_log();
        let mut c = candidate(&[0.0, 0.0]);
        c.context = "camera".into();
        assert!(matches!(
            Engine::default().assess(&log, &c, None),
            Err(EngineError::InsufficientKnowledge {
                successful: 0,
                unsuccessful: 0,
                ..
            })
        ));
    }

    #[test]
    fn rejects_bad_candidates() {
        let log = separable_log();
        assert!(matches!(
            Engine::default().assess(&log, &candidate(&[0.0]), None),
            Err(EngineError::DimensionMismatch {
                expected: 2,
                actual: 1
            })
        ));
        let mut done = candidate(&[0.0, 0.0]);
        done.outcome = Some(Outcome::Successful);
        assert!(matches!(
            Engine::default().assess(&log, &done, None),
            Err(EngineError::NotPending(_))
        ));
    }

    #[test]
    fn recording_crosses_threshold() {
        let mut log = TransactionLog::new(AgentId::from("me"), 1);
        let engine = Engine::default();
        let probe = candidate(&[0.5]);
        for i in 0..6 {
            assert!(matches!(
                engine.assess(&log, &probe, None),
                Err(EngineError::InsufficientKnowledge { .. })
            ));
            let o = if i % 2 == 0 {
                Outcome::Successful
            } else {
                Outcome::Unsuccessful
            };
            let x = if o.is_successful() {
                i as f64 * 0.01
            } else {
                1.0 + i as f64 * 0.01
            };
            record_outcome(
                &mut log,
                Transaction::completed(format!("t{i}"), "s", "book", vec![x], o),
            )
            .unwrap();
        }
        assert_eq!(
            engine.assess(&log, &probe, None).unwrap().source,
            KnowledgeSource::Local
        );
        let dup = Transaction::completed("t0", "s", "book", vec![0.0], Outcome::Successful);
        assert!(matches!(
            record_outcome(&mut log, dup),
            Err(CoreError::DuplicateId(_))
        ));
    }
}
