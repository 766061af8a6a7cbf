use std::fmt;

use crate::transaction::Outcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Lda,
    DecisionTree,
    /// Best-of selection performed by the engine.
    Combined,
    Random,
    Feedback,
    StereoTrust,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Lda => "LDA",
            Algorithm::DecisionTree => "DT",
            Algorithm::Combined => "Combined",
            Algorithm::Random => "Baseline-Random",
            Algorithm::Feedback => "Baseline-Feedback(simplified filter)",
            Algorithm::StereoTrust => "Baseline-StereoTrust-lite",
        })
    }
}

/// A label with its recommendation confidence in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: Outcome,
    pub confidence: f64,
    pub algorithm: Algorithm,
}

impl Prediction {
    pub fn new(label: Outcome, confidence: f64, algorithm: Algorithm) -> Self {
        debug_assert!(
            (0.0..=1.0).contains(&confidence),
            "confidence {confidence} out of range"
        );
        Prediction {
            label,
            confidence: confidence.clamp(0.0, 1.0),
            algorithm,
        }
    }

    /// Zero-confidence risk-averse answer used when a classifier cannot decide.
    pub fn uninformative(algorithm: Algorithm) -> Self {
        Prediction {
            label: Outcome::Unsuccessful,
            confidence: 0.0,
            algorithm,
        }
    }
}
