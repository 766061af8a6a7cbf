//! Local knowledge sharing overlay.
//!
//! Agents without enough history of their own ask the providers on their
//! trusted-provider list for a compact summary of what those providers have
//! learned: the LDA direction and the two class centroids. Summaries are
//! averaged with weights proportional to the requester's trust in each
//! provider, and trust is maintained per directed edge as the mean of a beta
//! distribution over correct/incorrect solo predictions.

pub mod codec;

use std::collections::HashMap;

use nalgebra::DVector;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use thiserror::Error;

use crate::lda::{self, Discriminant, LdaError, LdaModel};
use crate::prediction::Prediction;
use crate::transaction::{AgentId, Outcome};

/// Norm below which a combined direction is considered annihilated.
pub const CANCELLATION_THRESHOLD: f64 = 1e-9;
/// Share of providers re-evaluated after a successful transaction.
pub const SUCCESS_SAMPLE_FRACTION: f64 = 0.2;
/// Trust of a provider with no evaluated predictions yet.
pub const PRIOR_TRUST: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum LksonError {
    #[error("model has no usable direction to share")]
    DegenerateModel,
    #[error("no knowledge tuples to combine")]
    EmptyTupleSet,
    #[error("expected dimensionality {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("tuples mix contexts `{0}` and `{1}`")]
    ContextMismatch(String, String),
    #[error("{tuples} tuples but {scores} trust scores")]
    ScoreCountMismatch { tuples: usize, scores: usize },
    #[error("trust score {0} is not positive")]
    NonPositiveScore(f64),
    #[error("weighted directions cancel out")]
    CancelledDirection,
    #[error("agent `{0}` cannot hold an edge to itself")]
    SelfEdge(AgentId),
    #[error(transparent)]
    Lda(#[from] LdaError),
}

/// Evidence counters on one requester → provider edge.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EdgeCounters {
    /// Solo predictions by the provider that matched the outcome.
    pub correct: u64,
    /// Solo predictions that did not.
    pub incorrect: u64,
}

impl EdgeCounters {
    /// Beta mean `(s + 1) / (s + u + 2)`.
    pub fn trust(&self) -> f64 {
        (self.correct as f64 + 1.0) / ((self.correct + self.incorrect) as f64 + 2.0)
    }
}

/// Records one evaluated prediction and returns the posterior trust:
/// `(s + 2) / (s + u + 3)` when correct, `(s + 1) / (s + u + 3)` otherwise.
pub fn update_trust(counters: &mut EdgeCounters, correct: bool) -> f64 {
    let (s, u) = (counters.correct as f64, counters.incorrect as f64);
    let t = if correct {
        (s + 2.0) / (s + u + 3.0)
    } else {
        (s + 1.0) / (s + u + 3.0)
    };
    if correct {
        counters.correct += 1;
    } else {
        counters.incorrect += 1;
    }
    t
}

/// Weighted directed trust graph between knowledge requesters and providers.
#[derive(Debug, Clone, Default)]
pub struct OverlayGraph {
    edges: HashMap<AgentId, HashMap<AgentId, EdgeCounters>>,
}

impl OverlayGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Ensures the edge exists (with the uninformative prior) and returns its counters.
    pub fn connect(
        &mut self,
        from: &AgentId,
        to: &AgentId,
    ) -> Result<&mut EdgeCounters, LksonError> {
        if from == to {
            return Err(LksonError::SelfEdge(from.clone()));
        }
        Ok(self
            .edges
            .entry(from.clone())
            .or_default()
            .entry(to.clone())
            .or_default())
    }

    pub fn counters(&self, from: &AgentId, to: &AgentId) -> Option<EdgeCounters> {
        self.edges.get(from).and_then(|m| m.get(to)).copied()
    }

    /// Trust of `from` in `to`; the prior when no edge exists yet.
    pub fn trust(&self, from: &AgentId, to: &AgentId) -> f64 {
        self.counters(from, to).map_or(PRIOR_TRUST, |c| c.trust())
    }

    pub fn record(
        &mut self,
        from: &AgentId,
        to: &AgentId,
        correct: bool,
    ) -> Result<f64, LksonError> {
        Ok(update_trust(self.connect(from, to)?, correct))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.values().map(|m| m.len()).sum()
    }

    /// All edges, sorted by `(from, to)`.
    pub fn edges(&self) -> Vec<(AgentId, AgentId, EdgeCounters)> {
        let mut out: Vec<_> = self
            .edges
            .iter()
            .flat_map(|(from, m)| m.iter().map(move |(to, c)| (from.clone(), to.clone(), *c)))
            .collect();
        out.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
        out
    }
}

/// The shareable summary `<v, (c_s, c_u)>` of one provider's LDA model.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeTuple {
    pub provider: AgentId,
    pub context: String,
    pub direction: DVector<f64>,
    pub centroid_successful: DVector<f64>,
    pub centroid_unsuccessful: DVector<f64>,
}

impl KnowledgeTuple {
    pub fn dimensionality(&self) -> usize {
        self.direction.len()
    }

    /// Classifies using this provider's knowledge alone.
    pub fn classify(&self, p: &[f64]) -> Result<Discriminant, LdaError> {
        lda::discriminate(
            &self.direction,
            &self.centroid_successful,
            &self.centroid_unsuccessful,
            p,
        )
    }
}

/// Extracts the tuple a provider shares; no transactions leave the provider.
pub fn share_knowledge(
    provider: &AgentId,
    model: &LdaModel,
    context: &str,
) -> Result<KnowledgeTuple, LksonError> {
    let d = model.direction.len();
    let norm = model.direction.norm();
    let finite = model
        .direction
        .iter()
        .chain(model.centroid_successful.iter())
        .chain(model.centroid_unsuccessful.iter())
        .all(|x| x.is_finite());
    if d == 0
        || !finite
        || (norm - 1.0).abs() > 1e-9
        || model.centroid_successful.len() != d
        || model.centroid_unsuccessful.len() != d
        || model.centroid_successful == model.centroid_unsuccessful
    {
        return Err(LksonError::DegenerateModel);
    }
    Ok(KnowledgeTuple {
        provider: provider.clone(),
        context: context.to_owned(),
        direction: model.direction.clone(),
        centroid_successful: model.centroid_successful.clone(),
        centroid_unsuccessful: model.centroid_unsuccessful.clone(),
    })
}

/// Trust-proportional weights `w_j = t_j / sum(t)`.
pub fn trust_weights(scores: &[f64]) -> Result<Vec<f64>, LksonError> {
    if scores.is_empty() {
        return Err(LksonError::EmptyTupleSet);
    }
    if let Some(bad) = scores.iter().find(|t| **t <= 0.0 || !t.is_finite()) {
        return Err(LksonError::NonPositiveScore(*bad));
    }
    let total: f64 = scores.iter().sum();
    Ok(scores.iter().map(|t| t / total).collect())
}

/// Trust-weighted combination of several providers' knowledge.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedKnowledge {
    /// Weighted sum of directions, renormalized to unit length.
    pub direction: DVector<f64>,
    pub centroid_successful: DVector<f64>,
    pub centroid_unsuccessful: DVector<f64>,
    pub weights: Vec<f64>,
}

pub fn combine(tuples: &[KnowledgeTuple], scores: &[f64]) -> Result<CombinedKnowledge, LksonError> {
    let first = tuples.first().ok_or(LksonError::EmptyTupleSet)?;
    if tuples.len() != scores.len() {
        return Err(LksonError::ScoreCountMismatch {
            tuples: tuples.len(),
            scores: scores.len(),
        });
    }
    let d = first.dimensionality();
    for t in tuples {
        for len in [
            t.direction.len(),
            t.centroid_successful.len(),
            t.centroid_unsuccessful.len(),
        ] {
            if len != d {
                return Err(LksonError::DimensionMismatch {
                    expected: d,
                    actual: len,
                });
            }
        }
        if t.context != first.context {
            return Err(LksonError::ContextMismatch(
                first.context.clone(),
                t.context.clone(),
            ));
        }
    }
    let weights = trust_weights(scores)?;

    let mut direction = DVector::zeros(d);
    let mut centroid_successful = DVector::zeros(d);
    let mut centroid_unsuccessful = DVector::zeros(d);
    for (t, w) in tuples.iter().zip(&weights) {
        direction.axpy(*w, &t.direction, 1.0);
        centroid_successful.axpy(*w, &t.centroid_successful, 1.0);
        centroid_unsuccessful.axpy(*w, &t.centroid_unsuccessful, 1.0);
    }
    let norm = direction.norm();
    if norm < CANCELLATION_THRESHOLD {
        return Err(LksonError::CancelledDirection);
    }
    direction /= norm;
    Ok(CombinedKnowledge {
        direction,
        centroid_successful,
        centroid_unsuccessful,
        weights,
    })
}

impl CombinedKnowledge {
    pub fn discriminate(&self, p: &[f64]) -> Result<Discriminant, LdaError> {
        lda::discriminate(
            &self.direction,
            &self.centroid_successful,
            &self.centroid_unsuccessful,
            p,
        )
    }
}

/// Same decision rule and confidence as a locally trained LDA model.
pub fn classify_with_combined(
    combined: &CombinedKnowledge,
    p: &[f64],
) -> Result<Prediction, LksonError> {
    Ok(combined.discriminate(p)?.prediction())
}

/// A requester's trusted knowledge providers with their current trust.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderList {
    pub owner: AgentId,
    pub entries: Vec<(AgentId, f64)>,
}

impl ProviderList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn providers(&self) -> impl Iterator<Item = &AgentId> {
        self.entries.iter().map(|(id, _)| id)
    }

    /// Refreshes the cached scores from the graph.
    pub fn refresh(&mut self, graph: &OverlayGraph) {
        for (id, t) in &mut self.entries {
            *t = graph.trust(&self.owner, id);
        }
    }
}

/// Picks up to `k` providers for `owner`: familiar agents first (in random
/// order), the remainder uniformly from everyone else. All start at the prior.
pub fn bootstrap_providers<R: Rng + ?Sized>(
    owner: &AgentId,
    population: &[AgentId],
    is_familiar: impl Fn(&AgentId) -> bool,
    k: usize,
    rng: &mut R,
) -> ProviderList {
    let (mut familiar, strangers): (Vec<&AgentId>, Vec<&AgentId>) = population
        .iter()
        .filter(|a| *a != owner)
        .partition(|a| is_familiar(a));
    familiar.shuffle(rng);
    let mut chosen: Vec<&AgentId> = familiar.into_iter().take(k).collect();
    let missing = k.saturating_sub(chosen.len()).min(strangers.len());
    if missing > 0 {
        let mut picks = index::sample(rng, strangers.len(), missing).into_vec();
        picks.sort_unstable();
        chosen.extend(picks.into_iter().map(|i| strangers[i]));
    }
    ProviderList {
        owner: owner.clone(),
        entries: chosen
            .into_iter()
            .map(|a| (a.clone(), PRIOR_TRUST))
            .collect(),
    }
}

/// Outcome of re-evaluating one provider after a transaction.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderEvaluation {
    pub provider: AgentId,
    pub correct: bool,
    pub trust: f64,
}

/// Number of providers re-evaluated after a successful transaction.
pub fn success_sample_size(providers: usize, fraction: f64) -> usize {
    if providers == 0 {
        return 0;
    }
    (((providers as f64) * fraction + 1e-9).floor() as usize).clamp(1, providers)
}

/// Trust maintenance after a transaction that used overlay knowledge.
///
/// On an unsuccessful outcome every provider is re-evaluated; on a
/// successful one a uniform sample of `fraction` of them (at least one).
/// Each evaluated provider's tuple classifies `p` on its own and the edge is
/// credited when that solo prediction matches the outcome.
pub fn post_transaction_update<R: Rng + ?Sized>(
    graph: &mut OverlayGraph,
    requester: &AgentId,
    providers: &[KnowledgeTuple],
    outcome: Outcome,
    p: &[f64],
    fraction: f64,
    rng: &mut R,
) -> Result<Vec<ProviderEvaluation>, LksonError> {
    let selected: Vec<usize> = match outcome {
        Outcome::Unsuccessful => (0..providers.len()).collect(),
        Outcome::Successful => {
            let count = success_sample_size(providers.len(), fraction);
            let mut picks = index::sample(rng, providers.len(), count).into_vec();
            picks.sort_unstable();
            picks
        }
    };
    let mut report = Vec::with_capacity(selected.len());
    for i in selected {
        let tuple = &providers[i];
        let correct = tuple.classify(p)?.label == outcome;
        let trust = graph.record(requester, &tuple.provider, correct)?;
        report.push(ProviderEvaluation {
            provider: tuple.provider.clone(),
            correct,
            trust,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tuple(provider: &str, v: &[f64], cs: &[f64], cu: &[f64]) -> KnowledgeTuple {
        KnowledgeTuple {
            provider: provider.into(),
            context: "c".into(),
            direction: DVector::from_column_slice(v).normalize(),
            centroid_successful: DVector::from_column_slice(cs),
            centroid_unsuccessful: DVector::from_column_slice(cu),
        }
    }

    #[test]
    fn trust_update_examples() {
        let mut c = EdgeCounters::default();
        assert_eq!(c.trust(), 0.5);
        assert_relative_eq!(update_trust(&mut c, true), 2.0 / 3.0);
        let mut c = EdgeCounters::default();
        assert_relative_eq!(update_trust(&mut c, false), 1.0 / 3.0);
        let mut c = EdgeCounters {
            correct: 4,
            incorrect: 4,
        };
        let t = update_trust(&mut c, true);
        assert_relative_eq!(t, 6.0 / 11.0);
        assert_eq!(t, c.trust());
    }

    #[test]
    fn graph_rejects_self_edges() {
        let mut g = OverlayGraph::new();
        let a = AgentId::from("a");
        assert_eq!(
            g.connect(&a, &a).unwrap_err(),
            LksonError::SelfEdge(a.clone())
        );
        assert_eq!(g.trust(&a, &"b".into()), 0.5);
        g.record(&a, &"b".into(), false).unwrap();
        assert_relative_eq!(g.trust(&a, &"b".into()), 1.0 / 3.0);
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn share_copies_model_fields() {
        let model = LdaModel {
            direction: DVector::from_vec(vec![0.6, 0.8]),
            centroid_successful: DVector::from_vec(vec![1.0, 2.0]),
            centroid_unsuccessful: DVector::from_vec(vec![3.0, 4.0]),
            criterion_value: 2.0,
            regularization_used: 0.0,
        };
        let t = share_knowledge(&"p".into(), &model, "book").unwrap();
        assert_eq!(t.direction, model.direction);
        assert_eq!(t.centroid_successful, model.centroid_successful);
        assert_eq!(t.centroid_unsuccessful, model.centroid_unsuccessful);
        assert_eq!(t.context, "book");

        let degenerate = LdaModel {
            centroid_unsuccessful: model.centroid_successful.clone(),
            ..model
        };
        assert_eq!(
            share_knowledge(&"p".into(), &degenerate, "book").unwrap_err(),
            LksonError::DegenerateModel
        );
    }

    #[test]
    fn combine_single_is_identity() {
        let t = tuple("a", &[0.6, 0.8], &[1.0, 1.0], &[2.0, 3.0]);
        let c = combine(std::slice::from_ref(&t), &[0.37]).unwrap();
        assert_relative_eq!(c.direction, t.direction, epsilon = 1e-15);
        assert_eq!(c.centroid_successful, t.centroid_successful);
        assert_eq!(c.centroid_unsuccessful, t.centroid_unsuccessful);
        assert_eq!(c.weights, vec![1.0]);
    }

    #[test]
    fn combine_weights_follow_trust() {
        let a = tuple("a", &[1.0, 0.0], &[0.0, 0.0], &[1.0, 0.0]);
        let b = tuple("b", &[0.0, 1.0], &[1.0, 1.0], &[2.0, 2.0]);
        let c = combine(&[a, b], &[0.9, 0.1]).unwrap();
        assert_relative_eq!(c.weights[0], 0.9);
        assert_relative_eq!(c.weights[1], 0.1);
        assert_relative_eq!(c.centroid_successful[0], 0.1);
        assert_relative_eq!(c.centroid_unsuccessful[1], 0.2);
        assert_relative_eq!(c.direction.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn combine_identical_tuples() {
        let t = tuple("a", &[1.0, 2.0, 2.0], &[0.5, 0.5, 0.5], &[1.5, 1.0, 0.0]);
        let mut other = t.clone();
        other.provider = "b".into();
        let c = combine(&[t.clone(), other], &[0.2, 0.7]).unwrap();
        assert_relative_eq!(c.direction, t.direction, epsilon = 1e-12);
        assert_relative_eq!(
            c.centroid_successful,
            t.centroid_successful,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            c.centroid_unsuccessful,
            t.centroid_unsuccessful,
            epsilon = 1e-12
        );
    }

    #[test]
    fn combine_errors() {
        let a = tuple("a", &[1.0, 0.0], &[0.0, 0.0], &[1.0, 0.0]);
        let neg = tuple("b", &[-1.0, 0.0], &[0.0, 0.0], &[1.0, 0.0]);
        let short = tuple("c", &[1.0], &[0.0], &[1.0]);
        assert_eq!(combine(&[], &[]).unwrap_err(), LksonError::EmptyTupleSet);
        assert_eq!(
            combine(&[a.clone(), neg], &[0.5, 0.5]).unwrap_err(),
            LksonError::CancelledDirection
        );
        assert!(matches!(
            combine(&[a.clone(), short], &[0.5, 0.5]),
            Err(LksonError::DimensionMismatch { .. })
        ));
        assert_eq!(
            combine(std::slice::from_ref(&a), &[0.0]).unwrap_err(),
            LksonError::NonPositiveScore(0.0)
        );
        let mut other_ctx = a.clone();
        other_ctx.context = "x".into();
        assert!(matches!(
            combine(&[a, other_ctx], &[0.5, 0.5]),
            Err(LksonError::ContextMismatch(..))
        ));
    }

    #[test]
    fn classify_with_combined_rules() {
        let t = tuple("a", &[1.0, 1.0], &[0.0, 0.0], &[2.0, 2.0]);
        let c = combine(std::slice::from_ref(&t), &[1.0]).unwrap();
        let on = classify_with_combined(&c, &[0.0, 0.0]).unwrap();
        assert_eq!((on.label, on.confidence), (Outcome::Successful, 1.0));
        let mid = classify_with_combined(&c, &[1.0, 1.0]).unwrap();
        assert_eq!((mid.label, mid.confidence), (Outcome::Unsuccessful, 0.0));
        assert!(classify_with_combined(&c, &[1.0]).is_err());
    }

    #[test]
    fn bootstrap_prefers_familiar() {
        let population: Vec<AgentId> = (0..100).map(|i| AgentId::new(format!("a{i}"))).collect();
        let me = population[0].clone();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let list = bootstrap_providers(&me, &population, |a| a.0.ends_with('5'), 5, &mut rng);
        assert_eq!(list.len(), 5);
        assert!(list.providers().all(|a| a.0.ends_with('5')));

        let list = bootstrap_providers(&me, &population, |_| false, 60, &mut rng);
        assert_eq!(list.len(), 60);
        assert!(list.providers().all(|a| *a != me));
        assert!(list.entries.iter().all(|(_, t)| *t == 0.5));
        let mut ids: Vec<_> = list.providers().collect();
        ids.dedup();
        assert_eq!(ids.len(), 60);

        let alone = bootstrap_providers(&me, std::slice::from_ref(&me), |_| true, 10, &mut rng);
        assert!(alone.is_empty());
        let small = bootstrap_providers(&me, &population[..4], |_| true, 10, &mut rng);
        assert_eq!(small.len(), 3);
    }

    #[test]
    fn post_update_fanout() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let me = AgentId::from("me");
        // Providers whose solo prediction for p = [0] is Successful.
        let providers: Vec<KnowledgeTuple> = (0..10)
            .map(|i| tuple(&format!("p{i}"), &[1.0], &[0.0], &[5.0]))
            .collect();

        let mut g = OverlayGraph::new();
        let failed = post_transaction_update(
            &mut g,
            &me,
            &providers[..5],
            Outcome::Unsuccessful,
            &[0.0],
            0.2,
            &mut rng,
        )
        .unwrap();
        assert_eq!(failed.len(), 5);
        for e in &failed {
            assert!(!e.correct);
            assert!(e.trust < 0.5);
        }

        let mut g = OverlayGraph::new();
        let ok = post_transaction_update(
            &mut g,
            &me,
            &providers,
            Outcome::Successful,
            &[0.0],
            0.2,
            &mut rng,
        )
        .unwrap();
        assert_eq!(ok.len(), 2);
        assert!(ok.iter().all(|e| e.correct && e.trust > 0.5));
        assert_eq!(g.edge_count(), 2);
    }

    #[test]
    fn sample_size_floor_is_one() {
        assert_eq!(success_sample_size(10, 0.2), 2);
        assert_eq!(success_sample_size(3, 0.2), 1);
        assert_eq!(success_sample_size(15, 0.2), 3);
        assert_eq!(success_sample_size(0, 0.2), 0);
        assert_eq!(success_sample_size(60, 0.2), 12);
    }
}
